import math

import pytest
from hypothesis import given, strategies as st

from dicke_breakdown.model import (
    ModelParams,
    ParameterError,
    breakdown_coupling,
    critical_coupling_spt,
    derived_frequencies,
    validate_params,
)


def test_valid_point_accepted():
    p = ModelParams(n_spins=1, omega0=1, omega=1, g=0.5, gamma=0.1, kappa=0)
    assert validate_params(p) is p


@pytest.mark.parametrize(
    "changes, message",
    [
        ({"n_spins": 0}, "n_spins < 1"),
        ({"omega": -1.0}, "omega <= 0"),
        ({"omega0": 0.0}, "omega0 <= 0"),
        ({"g": -0.1}, "g < 0"),
        ({"gamma": -1e-3}, "gamma < 0"),
        ({"kappa": -1.0}, "kappa < 0"),
        ({"g": math.nan}, "g < 0"),
    ],
)
def test_invalid_points_name_the_invariant(changes, message):
    with pytest.raises(ParameterError, match=message):
        validate_params(ModelParams(**changes))


def test_critical_coupling_n8():
    # sqrt(omega (omega0^2 + (gamma/2)^2) / (4 N omega0)) with gamma = 0.1
    p = ModelParams(n_spins=8, gamma=0.1)
    assert critical_coupling_spt(p) == pytest.approx(math.sqrt(1.0025 / 32), rel=1e-14)
    # 0.5006246 / sqrt(8); the commonly quoted 0.1770046 is inconsistent with it
    assert critical_coupling_spt(p) == pytest.approx(0.1769975, abs=5e-8)
    assert math.sqrt(8) * critical_coupling_spt(p) == pytest.approx(0.5006246, abs=5e-8)


def test_derived_frequencies():
    d = derived_frequencies(ModelParams(gamma=0.2, omega0=2.0))
    assert d.omega0_gamma == pytest.approx((4 + 0.01) / 2)
    assert d.omega0_tilde_im == -0.1


@given(
    n=st.integers(1, 64),
    w=st.floats(0.05, 5),
    w0=st.floats(0.05, 5),
)
def test_breakdown_is_twice_critical_without_decay(n, w, w0):
    p = ModelParams(n_spins=n, omega=w, omega0=w0)
    assert breakdown_coupling(p) == pytest.approx(2 * critical_coupling_spt(p), rel=1e-12)


@given(n=st.integers(1, 64), gamma=st.floats(0, 3))
def test_critical_coupling_grows_with_decay(n, gamma):
    base = critical_coupling_spt(ModelParams(n_spins=n))
    assert critical_coupling_spt(ModelParams(n_spins=n, gamma=gamma)) >= base


def test_with_and_dict_roundtrip():
    p = ModelParams(n_spins=3, g=0.2)
    assert ModelParams(**p.to_dict()) == p
    assert p.with_(g=0.3).g == 0.3
    assert p.sqrt_n_g == pytest.approx(math.sqrt(3) * 0.2)
