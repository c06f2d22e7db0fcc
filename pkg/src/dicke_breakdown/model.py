"""Parameters of the driven-dissipative Dicke model and closed-form couplings.

Energies are in units of the spin frequency (``omega0 = 1`` unless set
otherwise) with hbar = 1, so rates and frequencies share one unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


class ParameterError(ValueError):
    """Raised when a parameter set violates a model invariant."""


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the open Dicke model.

    Parameters
    ----------
    n_spins : int
        Number of spins N.
    omega0 : float
        Spin transition frequency.
    omega : float
        Oscillator frequency.
    g : float
        Spin-oscillator coupling.
    gamma : float
        Local spontaneous-emission rate of each spin.
    kappa : float
        Oscillator decay (cooling) rate.
    """

    n_spins: int = 1
    omega0: float = 1.0
    omega: float = 1.0
    g: float = 0.0
    gamma: float = 0.0
    kappa: float = 0.0

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    @property
    def sqrt_n_g(self) -> float:
        return math.sqrt(self.n_spins) * self.g

    def to_dict(self) -> dict:
        return {
            "n_spins": self.n_spins,
            "omega0": self.omega0,
            "omega": self.omega,
            "g": self.g,
            "gamma": self.gamma,
            "kappa": self.kappa,
        }


@dataclass(frozen=True)
class DerivedFrequencies:
    omega0_gamma: float
    omega0_tilde_im: float


def validate_params(p: ModelParams) -> ModelParams:
    """Return ``p`` unchanged, or raise :class:`ParameterError` naming the
    first violated invariant."""
    if int(p.n_spins) != p.n_spins or p.n_spins < 1:
        raise ParameterError("n_spins < 1")
    checks = (
        (p.omega0, "omega0 <= 0", lambda v: v > 0),
        (p.omega, "omega <= 0", lambda v: v > 0),
        (p.g, "g < 0", lambda v: v >= 0),
        (p.gamma, "gamma < 0", lambda v: v >= 0),
        (p.kappa, "kappa < 0", lambda v: v >= 0),
    )
    for value, message, ok in checks:
        if not math.isfinite(value) or not ok(value):
            raise ParameterError(message)
    return p


def derived_frequencies(p: ModelParams) -> DerivedFrequencies:
    """Shifted spin frequency ``(omega0**2 + (gamma/2)**2) / omega0`` and the
    imaginary part ``-gamma/2`` of the complex spin frequency."""
    half = p.gamma / 2
    return DerivedFrequencies(
        omega0_gamma=(p.omega0**2 + half**2) / p.omega0,
        omega0_tilde_im=-half,
    )


def omega0_gamma(p: ModelParams) -> float:
    return derived_frequencies(p).omega0_gamma


def critical_coupling_spt(p: ModelParams) -> float:
    """Coupling of the superradiant transition,
    ``sqrt(omega * omega0_gamma / (4 N))``."""
    validate_params(p)
    return math.sqrt(p.omega * omega0_gamma(p) / (4 * p.n_spins))


def breakdown_coupling(p: ModelParams) -> float:
    """Cooperative breakdown coupling ``sqrt(omega * omega0 / N)``.

    For a single spin this is the pole of the steady-state oscillator
    population of the cumulant equations.
    """
    validate_params(p)
    return math.sqrt(p.omega * p.omega0 / p.n_spins)
