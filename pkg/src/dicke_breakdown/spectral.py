"""Dressed-state picture of the cooperative breakdown.

The counter-rotating coupling takes the ground state into the
two-excitation manifold, whose lower dressed state is detuned by
``Delta_-``.  At ``Delta_- = 0`` this process is resonant and spin decay
pumps phonons at the effective rate of :func:`effective_heating_rate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .model import ModelParams, breakdown_coupling, validate_params

__all__ = [
    "SpectralReport",
    "dressed_detuning",
    "effective_heating_rate",
    "resonance_coupling",
    "manifold_energies",
    "spectral_report",
    "excitation_growth",
]


@dataclass(frozen=True)
class SpectralReport:
    delta_minus: float
    delta_minus_approx: float
    gamma_eff_01: float
    g_resonance: float
    n_ex: int = 2

    def to_dict(self) -> dict:
        return {
            "delta_minus": self.delta_minus,
            "delta_minus_approx": self.delta_minus_approx,
            "gamma_eff_01": self.gamma_eff_01,
            "g_resonance": self.g_resonance,
            "n_ex": self.n_ex,
        }


def dressed_detuning(p: ModelParams, approximate: bool = False) -> float:
    """Detuning of the lower dressed state of the two-excitation manifold.

    ``(omega + omega0) - sqrt((omega - omega0)**2 + 4 N g**2)``; with
    ``approximate=True`` the first-order form
    ``2 (omega omega0 - N g**2) / (omega + omega0)`` is returned instead.
    Both vanish at ``N g**2 = omega omega0``.
    """
    validate_params(p)
    ng2 = p.n_spins * p.g**2
    if approximate:
        return 2 * (p.omega * p.omega0 - ng2) / (p.omega + p.omega0)
    return (p.omega + p.omega0) - math.sqrt((p.omega - p.omega0) ** 2 + 4 * ng2)


def effective_heating_rate(p: ModelParams) -> float:
    """Rate of the ground state -> one-phonon process,
    ``gamma N g^2 / (4 |omega omega0_tilde - N g^2|^2 + 2 N g^2)`` with the
    complex spin frequency ``omega0_tilde = omega0 - i gamma / 2``.

    Derived for ``omega ~ omega0``; always below ``gamma / 2``.
    """
    validate_params(p)
    ng2 = p.n_spins * p.g**2
    detuning = p.omega * complex(p.omega0, -p.gamma / 2) - ng2
    denom = 4 * abs(detuning) ** 2 + 2 * ng2
    if denom == 0.0:
        return 0.0
    return p.gamma * ng2 / denom


def resonance_coupling(p: ModelParams, xtol: float = 1e-13) -> float:
    """Coupling where :func:`dressed_detuning` vanishes, found by bisection.

    Raises ``ArithmeticError`` if the root disagrees with
    ``sqrt(omega omega0 / N)`` by more than ``1e-12`` relative.
    """
    validate_params(p)
    closed = breakdown_coupling(p)
    root = scipy.optimize.bisect(
        lambda g: dressed_detuning(p.with_(g=g)), 0.0, 2 * closed, xtol=xtol, rtol=4 * np.finfo(float).eps
    )
    if abs(root - closed) > 1e-12 * max(1.0, closed):
        raise ArithmeticError(f"bisection root {root!r} != closed form {closed!r}")
    return root


def manifold_energies(p: ModelParams, n_ex: int) -> np.ndarray:
    """Eigenvalues of the rotating-wave Hamiltonian in the manifold with
    ``n_ex`` total excitations (spin excitations plus phonons).

    Uses ``H = omega0 (J_z + N/2) + omega a^dag a + g (a J_+ + a^dag J_-)``
    on the symmetric spin states, so the ground state has energy 0.
    """
    validate_params(p)
    if int(n_ex) != n_ex or n_ex < 0:
        raise ValueError("n_ex must be a nonnegative integer")
    N = p.n_spins
    ks = np.arange(0, min(n_ex, N) + 1)
    diag = p.omega0 * ks + p.omega * (n_ex - ks)
    # <k+1, n-1| a J_+ |k, n> = sqrt(n) sqrt((N - k)(k + 1))
    off = p.g * np.sqrt((n_ex - ks[:-1]) * (N - ks[:-1]) * (ks[:-1] + 1.0))
    if ks.size == 1:
        return diag.astype(float)
    return scipy.linalg.eigh_tridiagonal(diag.astype(float), off, eigvals_only=True)


def spectral_report(p: ModelParams, n_ex: int = 2) -> SpectralReport:
    """Collect the dressed-state quantities of ``p``.

    For ``n_ex > 2`` both detunings are scaled by ``n_ex / 2``, the
    harmonic (large-N) ladder in which each added excitation costs the
    same lower dressed energy.
    """
    if int(n_ex) != n_ex or n_ex < 2:
        raise ValueError("n_ex must be an integer >= 2")
    return SpectralReport(
        delta_minus=dressed_detuning(p) * n_ex / 2,
        delta_minus_approx=dressed_detuning(p, approximate=True) * n_ex / 2,
        gamma_eff_01=effective_heating_rate(p),
        g_resonance=resonance_coupling(p),
        n_ex=int(n_ex),
    )


def excitation_growth(p: ModelParams, t_final: float = 30.0, n_max: int = 8,
                      n_samples: int = 121, tol: float = 1e-9, initial: str = "dressed"):
    """Measure the ground -> one-excitation rate from the master equation.

    Starting in the ground state, the population ``P1(t)`` of the bare
    one-excitation manifold (one phonon, or one excited spin) is fitted to
    ``A (1 - exp(-lambda t))``; ``A * lambda`` is the initial feeding rate.

    ``initial="dressed"`` starts from the Hamiltonian ground state, the
    state the effective-operator rate refers to.  ``"bare"`` starts from
    spins down in vacuum; the sudden switch-on of the coupling then adds a
    transient that overestimates the rate by tens of percent.

    Returns
    -------
    rate : float
        Fitted ``A * lambda``.
    times, p1 : ndarray
        The sampled manifold population.
    """
    from .liouville import build_dicke_basis, dressed_ground_state, evolve_density, ground_state

    basis = build_dicke_basis(p.n_spins)
    if initial == "dressed":
        rho0 = dressed_ground_state(basis, p, n_max)
    elif initial == "bare":
        rho0 = ground_state(basis, n_max)
    else:
        raise ValueError(f"unknown initial state {initial!r}")
    times = np.linspace(0.0, t_final, n_samples)
    traj = evolve_density(rho0, p, t_final, tol, sample_times=times)
    nF = n_max + 1
    p1 = []
    for st in traj.states:
        total = 0.0
        for b, x in zip(basis.blocks, st.blocks):
            diag = np.diagonal(x).real.reshape(b.dim, nF)
            exc = (b.m_values() + p.n_spins / 2)[:, None] + np.arange(nF)[None, :]
            total += b.degeneracy * diag[np.abs(exc - 1) < 1e-9].sum()
        p1.append(total)
    p1 = np.array(p1)

    def model(t, a, lam):
        return a * -np.expm1(-lam * t)

    guess_lam = max(p.gamma / 2, 1e-3)
    guess_a = max(p1[-1], 1e-12) / max(-math.expm1(-guess_lam * t_final), 1e-12)
    (a, lam), _ = scipy.optimize.curve_fit(model, traj.times, p1, p0=(guess_a, guess_lam))
    return float(a * lam), traj.times, p1
