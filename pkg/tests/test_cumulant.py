import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dicke_breakdown.cumulant import (
    MOMENT_NAMES,
    MomentVector,
    NoSteadyState,
    discriminant,
    evolve_moments,
    initial_moments,
    moment_derivatives,
    moment_jacobian,
    steady_state_closed_form,
    steady_state_numeric,
    write_trajectory_csv,
)
from dicke_breakdown.model import ModelParams, critical_coupling_spt

P05 = ModelParams(n_spins=1, g=0.5, gamma=0.1)


def test_initial_moments():
    assert initial_moments(P05) == MomentVector(sz=-1.0, czz=1.0)
    v = MomentVector(sz=-0.3, n=1.0)
    assert initial_moments(P05, v) is v
    with pytest.raises(ValueError):
        initial_moments(P05, MomentVector(sz=2.0))


def test_derivatives_at_ground():
    p = ModelParams(n_spins=3, g=0.4, gamma=0.2, kappa=0.1)
    d = moment_derivatives(initial_moments(p), p)
    assert d.sz == 0 and d.n == 0 and d.czz == 0
    assert d.px == pytest.approx(-2 * 0.4)


def test_pure_decay_terms():
    assert moment_derivatives(MomentVector(), ModelParams(g=0, gamma=0.3)).sz == pytest.approx(-0.3)
    d = moment_derivatives(MomentVector(n=5.0), ModelParams(g=0, kappa=0.2))
    assert d.n == pytest.approx(-1.0)


def test_free_decay_trajectory():
    p = ModelParams(g=0, gamma=0.1)
    traj = evolve_moments(MomentVector(sz=0.0), p, 20.0, tol=1e-10, t_eval=[5.0, 10.0, 20.0])
    for t, sz in zip(traj.times, traj.column("sz")):
        assert sz == pytest.approx(math.exp(-0.1 * t) - 1, abs=1e-9)


def test_single_spin_closed_form_values():
    (sol,) = steady_state_closed_form(P05)
    m = sol.moments
    assert sol.physical and sol.consistent
    assert m.sz == pytest.approx(-0.75, abs=1e-12)
    assert m.n == pytest.approx(2.0025 / 3 - 0.625, abs=1e-12)
    assert m.r == pytest.approx(0.125)
    assert m.qx == pytest.approx(-0.5)
    assert m.py == pytest.approx(-0.5)


def test_numeric_matches_closed_form():
    m = steady_state_numeric(P05)
    assert m.sz == pytest.approx(-0.75, abs=1e-9)
    assert m.n == pytest.approx(0.0425, abs=1e-9)


def test_no_root_beyond_pole():
    with pytest.raises(NoSteadyState):
        steady_state_numeric(P05.with_(g=1.2))


def test_long_time_reaches_fixed_point_below_window():
    # g = 0.3 lies below the N = 1 instability window (see README)
    p = P05.with_(g=0.3)
    traj = evolve_moments(initial_moments(p), p, 1e3, tol=1e-10, t_eval=[1e3])
    ss = steady_state_numeric(p).to_array()
    assert np.max(np.abs(traj.final.to_array() - ss)) < 1e-6
    assert not traj.diverged


def test_divergence_above_pole():
    p = P05.with_(g=1.2)
    traj = evolve_moments(initial_moments(p), p, 400.0, tol=1e-8)
    assert traj.diverged
    n = traj.column("n")
    late = n[traj.times > 360]
    assert np.all(np.diff(late) > 0)


def test_discriminant_approx_vanishes_at_gc():
    for n in (2, 8, 64):
        p = ModelParams(n_spins=n, gamma=0.1)
        p = p.with_(g=critical_coupling_spt(p))
        assert discriminant(p).approx == pytest.approx(0.0, abs=1e-12)
    assert discriminant(ModelParams(n_spins=10**6, g=2e-4)).approx == pytest.approx(0.84)
    rep = discriminant(ModelParams(n_spins=2, g=0.1, gamma=0.1))
    assert rep.radicand_negative == (rep.radicand < 0)


def test_large_n_physical_branch_above_gc():
    p = ModelParams(n_spins=64, gamma=0.1)
    p = p.with_(g=1.5 * critical_coupling_spt(p))
    phys = [s for s in steady_state_closed_form(p) if s.normalization == "large_n" and s.physical]
    assert phys
    m = phys[0].moments
    assert -1 < m.sz < 0 and m.n / 64 > 0
    num = steady_state_numeric(p)
    assert num.sz == pytest.approx(m.sz, abs=0.02)


@settings(max_examples=30, deadline=None)
@given(
    y=st.lists(st.floats(-1, 1), min_size=12, max_size=12),
    n=st.integers(1, 10),
    g=st.floats(0, 1.5),
    kappa=st.floats(0, 1),
)
def test_jacobian_matches_finite_differences(y, n, g, kappa):
    p = ModelParams(n_spins=n, g=g, gamma=0.1, kappa=kappa)
    y = np.array(y)
    J = moment_jacobian(y, p)
    h = 1e-6
    for k in range(12):
        e = np.zeros(12)
        e[k] = h
        fd = (moment_derivatives(MomentVector.from_array(y + e), p).to_array()
              - moment_derivatives(MomentVector.from_array(y - e), p).to_array()) / (2 * h)
        assert np.allclose(J[:, k], fd, atol=1e-7)


def _exact_moments_and_rates(p, n_fock=14, seed=1):
    """Moments of a random two-spin state and their exact time derivatives."""
    N = 2
    a = np.diag(np.sqrt(np.arange(1, n_fock)), 1)
    I2 = np.eye(2)
    sx = np.array([[0, 1], [1, 0]], complex)
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.diag([1.0, -1.0])
    sm = np.array([[0, 0], [1, 0]], complex)  # (up, down) ordering

    def op(single, j):
        mats = [I2] * N
        mats[j] = single
        return np.kron(np.kron(mats[0], mats[1]), np.eye(n_fock))

    A = np.kron(np.eye(4), a)
    q = A + A.conj().T
    pq = 1j * (A.conj().T - A)
    Sx = [op(sx, j) for j in range(N)]
    Sy = [op(sy, j) for j in range(N)]
    Sz = [op(sz, j) for j in range(N)]
    H = p.omega0 / 2 * sum(Sz) + p.omega * A.conj().T @ A + p.g * q @ sum(Sx)
    Ls = [math.sqrt(p.gamma) * op(sm, j) for j in range(N)] + [math.sqrt(p.kappa) * A]

    rng = np.random.default_rng(seed)
    D = 4 * n_fock
    X = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    mask = np.kron(np.ones(4), (np.arange(n_fock) < 5).astype(float))
    X = X * mask[:, None] * mask[None, :]
    swap = np.kron(np.eye(4)[[0, 2, 1, 3]], np.eye(n_fock))
    rho = X @ X.conj().T
    rho = rho + swap @ rho @ swap
    rho /= np.trace(rho)

    drho = -1j * (H @ rho - rho @ H)
    for L in Ls:
        LdL = L.conj().T @ L
        drho += L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)

    ops = {
        "sz": Sz[0], "n": A.conj().T @ A, "qx": q @ Sx[0], "px": pq @ Sx[0],
        "qy": q @ Sy[0], "py": pq @ Sy[0], "cxx": Sx[0] @ Sx[1], "cyy": Sy[0] @ Sy[1],
        "czz": Sz[0] @ Sz[1], "cxy": Sx[0] @ Sy[1],
    }
    vals = {k: np.trace(rho @ o).real for k, o in ops.items()}
    rates = {k: np.trace(drho @ o).real for k, o in ops.items()}
    a2 = A @ A
    vals["r"], vals["s"] = np.trace(rho @ a2).real, np.trace(rho @ a2).imag
    rates["r"], rates["s"] = np.trace(drho @ a2).real, np.trace(drho @ a2).imag
    return vals, rates


@pytest.mark.parametrize("kappa", [0.0, 0.3])
def test_closed_equations_exact_where_no_factorization(kappa):
    """Equations free of third moments must equal the exact Lindblad rates."""
    p = ModelParams(n_spins=2, omega0=1.0, omega=1.3, g=0.4, gamma=0.1, kappa=kappa)
    vals, rates = _exact_moments_and_rates(p)
    m = MomentVector(**{k: vals[k] for k in MOMENT_NAMES})
    d = moment_derivatives(m, p).as_dict()
    for k in ("sz", "n", "r", "s", "qx", "px", "cxx"):
        assert d[k] == pytest.approx(rates[k], abs=1e-10), k


def test_printed_kappa_convention_differs():
    p = ModelParams(n_spins=2, g=0.4, gamma=0.1, kappa=0.3)
    m = MomentVector(sz=-0.5, qx=0.2)
    a = moment_derivatives(m, p).qx
    b = moment_derivatives(m, p, kappa_convention="printed").qx
    assert a - b == pytest.approx(0.3 / 2 * 0.2)


def test_trajectory_csv_schema():
    traj = evolve_moments(initial_moments(P05), P05, 1.0, t_eval=[0.5])
    buf = io.StringIO()
    write_trajectory_csv(traj, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# schema=1"
    assert lines[1].split(",") == ["t", *MOMENT_NAMES]
    rows = np.loadtxt(io.StringIO("\n".join(lines[2:])), delimiter=",")
    assert rows.shape == (3, 13)
    assert np.allclose(rows[:, 0], [0, 0.5, 1.0])
