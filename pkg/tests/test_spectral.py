import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dicke_breakdown.model import ModelParams, breakdown_coupling
from dicke_breakdown.spectral import (
    dressed_detuning,
    effective_heating_rate,
    manifold_energies,
    resonance_coupling,
    spectral_report,
)


def test_detuning_examples():
    assert dressed_detuning(ModelParams(g=0.0)) == pytest.approx(2.0)
    p = ModelParams(n_spins=2, g=0.5)
    assert dressed_detuning(p) == pytest.approx(2 - math.sqrt(2), abs=1e-12)
    assert dressed_detuning(p, approximate=True) == pytest.approx(0.5)


@given(n=st.integers(1, 100), w=st.floats(0.1, 3), w0=st.floats(0.1, 3))
def test_detuning_vanishes_at_breakdown(n, w, w0):
    p = ModelParams(n_spins=n, omega=w, omega0=w0)
    p = p.with_(g=breakdown_coupling(p))
    assert dressed_detuning(p) == pytest.approx(0.0, abs=1e-12)
    assert dressed_detuning(p, approximate=True) == pytest.approx(0.0, abs=1e-12)


def test_detuning_against_rwa_diagonalization():
    # lowest single-excitation dressed level is exactly half the detuning
    for n, g in ((1, 0.3), (2, 0.5), (5, 0.2)):
        p = ModelParams(n_spins=n, g=g, omega=1.2)
        assert manifold_energies(p, 1)[0] == pytest.approx(dressed_detuning(p) / 2, abs=1e-12)
    # the two-excitation lower level approaches the detuning at large N
    p = ModelParams(n_spins=1000, g=0.02)
    assert manifold_energies(p, 2)[0] == pytest.approx(dressed_detuning(p), rel=1e-3)


def test_heating_rate_examples():
    assert effective_heating_rate(ModelParams(n_spins=1, g=1.0, gamma=0.1)) == pytest.approx(
        0.1 / 2.01, abs=1e-12)
    # |0.82 - 0.05 i|^2 = 0.6749
    assert effective_heating_rate(ModelParams(n_spins=2, g=0.3, gamma=0.1)) == pytest.approx(
        0.018 / (4 * 0.6749 + 0.36), rel=1e-12)
    assert effective_heating_rate(ModelParams(g=0.0, gamma=0.1)) == 0.0


def test_heating_rate_bounded_and_peaked_at_resonance():
    gs = np.linspace(0.0, 2.0, 1001)
    rates = np.array([effective_heating_rate(ModelParams(g=g, gamma=0.1)) for g in gs])
    assert np.all(rates < 0.05)
    assert gs[np.argmax(rates)] == pytest.approx(1.0, abs=2e-3)
    k = np.argmax(rates)
    assert np.all(np.diff(rates[: k + 1]) >= 0)


@given(n=st.integers(1, 50), g=st.floats(0, 3), gamma=st.floats(1e-3, 2))
def test_heating_rate_below_half_gamma(n, g, gamma):
    assert effective_heating_rate(ModelParams(n_spins=n, g=g, gamma=gamma)) < gamma / 2


def test_resonant_deviation_from_half_gamma():
    for n in (1, 4, 16):
        p = ModelParams(n_spins=n, gamma=0.1)
        p = p.with_(g=breakdown_coupling(p))
        ng2 = n * p.g**2
        # at resonance the real detuning vanishes; only the decay part remains
        exact = p.gamma * ng2 / (p.gamma**2 + 2 * ng2)
        assert effective_heating_rate(p) == pytest.approx(exact, rel=1e-12)
        assert 1 - 2 * exact / p.gamma == pytest.approx(p.gamma**2 / (p.gamma**2 + 2 * ng2))


def test_resonance_coupling():
    assert resonance_coupling(ModelParams(n_spins=4)) == pytest.approx(0.5, abs=1e-12)
    assert resonance_coupling(ModelParams(n_spins=2, omega=2.0)) == pytest.approx(1.0, abs=1e-12)


def test_report():
    rep = spectral_report(ModelParams(n_spins=2, g=0.5, gamma=0.1))
    d = rep.to_dict()
    assert d["n_ex"] == 2 and d["g_resonance"] == pytest.approx(1 / math.sqrt(2))
    assert spectral_report(ModelParams(n_spins=2, g=0.5), n_ex=4).delta_minus == pytest.approx(
        2 * rep.delta_minus)
    with pytest.raises(ValueError):
        spectral_report(ModelParams(), n_ex=1)
