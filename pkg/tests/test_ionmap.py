import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dicke_breakdown.ionmap import (
    AdiabaticEliminationWarning,
    LambDickeWarning,
    LaserSettings,
    RepumperSettings,
    lasers_to_model,
    model_to_lasers,
    repumper_effective_gamma,
    sideband_flopping_signal,
)
from dicke_breakdown.model import ModelParams, ParameterError


def test_lasers_to_model_examples():
    p = lasers_to_model(LaserSettings(0.0, 0.4, 2.0, 2.0, 0.05), 1)
    assert (p.omega0, p.omega, p.g) == pytest.approx((0.2, 0.2, 0.1))
    p = lasers_to_model(LaserSettings(1.8, 2.2, 1.0, 1.0, 0.1), 3)
    assert (p.omega0, p.omega, p.g) == pytest.approx((2.0, 0.2, 0.1))
    assert p.gamma == 0 and p.kappa == 0 and p.n_spins == 3


def test_unbalanced_rabi_rejected():
    with pytest.raises(ParameterError):
        lasers_to_model(LaserSettings(0.0, 0.4, 1.0, 1.1, 0.05), 1)


def test_prose_convention_is_separate():
    ls = LaserSettings(0.1, 0.5, 1.0, 1.0, 0.1)
    with pytest.raises(ParameterError):
        lasers_to_model(ls, 1, convention="prose")  # omega < 0 there
    with pytest.raises(ValueError):
        lasers_to_model(ls, 1, convention="other")


def test_model_to_lasers_examples():
    ls = model_to_lasers(ModelParams(omega0=0.2, omega=0.2, g=0.1), 0.05)
    assert (ls.delta_r, ls.delta_b, ls.rabi_r, ls.rabi_b) == pytest.approx((0, 0.4, 2.0, 2.0))
    with pytest.warns(LambDickeWarning):
        ls = model_to_lasers(ModelParams(g=0.1), 0.1, n_max=80)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ls = model_to_lasers(ModelParams(g=0.1), 1e-3, n_max=80)
    assert ls.rabi_r == pytest.approx(100.0)


@given(
    w0=st.floats(0.05, 5), w=st.floats(0.05, 5), g=st.floats(0, 2), eta=st.floats(1e-3, 0.5),
    n=st.integers(1, 20),
)
def test_round_trip(w0, w, g, eta, n):
    p = ModelParams(n_spins=n, omega0=w0, omega=w, g=g)
    back = lasers_to_model(model_to_lasers(p, eta), n)
    assert back.omega0 == pytest.approx(w0, rel=1e-12, abs=1e-14)
    assert back.omega == pytest.approx(w, rel=1e-12, abs=1e-14)
    assert back.g == pytest.approx(g, rel=1e-12, abs=1e-14)


@given(s=st.floats(0.1, 10), w0=st.floats(0.05, 5), w=st.floats(0.05, 5), g=st.floats(0, 2))
def test_frequency_homogeneity(s, w0, w, g):
    a = model_to_lasers(ModelParams(omega0=w0, omega=w, g=g), 0.1)
    b = model_to_lasers(ModelParams(omega0=s * w0, omega=s * w, g=s * g), 0.1)
    assert b.delta_b == pytest.approx(s * a.delta_b)
    assert b.rabi_r == pytest.approx(s * a.rabi_r)


def test_repumper():
    assert repumper_effective_gamma(RepumperSettings(1.0, 20.0, 25.0)) == pytest.approx(0.032)
    assert repumper_effective_gamma(RepumperSettings(0.0, 20.0, 25.0)) == 0.0
    with pytest.warns(AdiabaticEliminationWarning):
        repumper_effective_gamma(RepumperSettings(5.0, 20.0, 25.0))
    with pytest.raises(ParameterError):
        repumper_effective_gamma(RepumperSettings(1.0, 0.0, 0.0))
    with pytest.raises(ParameterError):
        RepumperSettings(1.0, 30.0, 25.0)


def test_flopping_signal():
    t = np.linspace(0, 10, 11)
    assert np.allclose(sideband_flopping_signal([1.0], 0.3, t), np.sin(0.3 * t) ** 2)
    nbar, nmax = 2.0, 30
    pn = (nbar / (1 + nbar)) ** np.arange(nmax + 1) / (1 + nbar)
    pn /= pn.sum()
    sig = sideband_flopping_signal(pn, 0.2, t)
    assert sig[0] == 0.0
    ref = [sum(pn[k] * math.sin(0.2 * math.sqrt(k + 1) * ti) ** 2 for k in range(nmax + 1)) for ti in t]
    assert np.allclose(sig, ref, atol=1e-14)
    assert np.all((sig >= 0) & (sig <= 1))
    with pytest.raises(ValueError):
        sideband_flopping_signal([0.5, 0.6], 0.2, t)
