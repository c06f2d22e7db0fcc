"""Trapped-ion realization of the model.

Red and blue motional sidebands with detunings ``delta_r``, ``delta_b`` and
equal Rabi frequencies ``Omega`` realize the Dicke Hamiltonian in the
Lamb-Dicke regime; optical pumping through a short-lived level supplies
the spin decay.  All frequencies are angular and in the model's units.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelParams, ParameterError, validate_params

__all__ = [
    "LaserSettings",
    "RepumperSettings",
    "LambDickeWarning",
    "AdiabaticEliminationWarning",
    "lasers_to_model",
    "model_to_lasers",
    "repumper_effective_gamma",
    "sideband_flopping_signal",
]


class LambDickeWarning(UserWarning):
    """The requested drive leaves the Lamb-Dicke regime."""


class AdiabaticEliminationWarning(UserWarning):
    """The repumper is too strong for the effective-decay description."""


@dataclass(frozen=True)
class LaserSettings:
    delta_r: float
    delta_b: float
    rabi_r: float
    rabi_b: float
    lamb_dicke: float

    def __post_init__(self):
        if not self.lamb_dicke > 0:
            raise ParameterError("lamb_dicke <= 0")
        if self.rabi_r < 0 or self.rabi_b < 0:
            raise ParameterError("negative Rabi frequency")

    def to_dict(self) -> dict:
        return {
            "delta_r": self.delta_r,
            "delta_b": self.delta_b,
            "rabi_r": self.rabi_r,
            "rabi_b": self.rabi_b,
            "lamb_dicke": self.lamb_dicke,
        }


@dataclass(frozen=True)
class RepumperSettings:
    rabi_rep: float
    gamma_e_to_0: float
    gamma_e_total: float

    def __post_init__(self):
        if self.rabi_rep < 0 or self.gamma_e_to_0 < 0:
            raise ParameterError("negative repumper rate")
        if self.gamma_e_to_0 > self.gamma_e_total:
            raise ParameterError("gamma_e_to_0 > gamma_e_total")


def lasers_to_model(ls: LaserSettings, n_spins: int, convention: str = "hamiltonian") -> ModelParams:
    """Dicke parameters realized by the sideband drive.

    ``convention="hamiltonian"`` (default) reads the frequencies off the
    effective Hamiltonian: ``omega0 = (delta_r + delta_b)/2``,
    ``omega = (delta_b - delta_r)/2``.  ``convention="prose"`` applies the
    alternative ``omega0 = (delta_b + delta_r)/4``,
    ``omega = (delta_r - delta_b)/2``, kept for comparison only.  In both
    cases ``g = eta * Omega``; gamma and kappa are zero.

    Raises
    ------
    ParameterError
        If the two Rabi frequencies differ, or a derived frequency is not
        positive.
    """
    if not math.isclose(ls.rabi_r, ls.rabi_b, rel_tol=1e-9, abs_tol=0.0):
        raise ParameterError("rabi_r != rabi_b: unbalanced sidebands have no Dicke form")
    if convention == "hamiltonian":
        omega0 = (ls.delta_r + ls.delta_b) / 2
        omega = (ls.delta_b - ls.delta_r) / 2
    elif convention == "prose":
        omega0 = (ls.delta_b + ls.delta_r) / 4
        omega = (ls.delta_r - ls.delta_b) / 2
    else:
        raise ValueError(f"unknown convention {convention!r}")
    rabi = 0.5 * (ls.rabi_r + ls.rabi_b)
    p = ModelParams(n_spins=n_spins, omega0=omega0, omega=omega, g=ls.lamb_dicke * rabi)
    return validate_params(p)


def model_to_lasers(p: ModelParams, lamb_dicke: float, n_max: int | None = None) -> LaserSettings:
    """Sideband settings realizing ``p`` (inverse of the default mapping).

    Warns with :class:`LambDickeWarning` when ``eta Omega sqrt(n_max)``
    is not small compared with the trap frequency scale ``omega``.
    """
    validate_params(p)
    if not lamb_dicke > 0:
        raise ParameterError("lamb_dicke <= 0")
    rabi = p.g / lamb_dicke
    if n_max is not None and lamb_dicke * math.sqrt(n_max) > 0.3:
        warnings.warn(
            f"eta*sqrt(n_max) = {lamb_dicke * math.sqrt(n_max):.3g}: outside the Lamb-Dicke regime",
            LambDickeWarning, stacklevel=2,
        )
    return LaserSettings(
        delta_r=p.omega0 - p.omega,
        delta_b=p.omega0 + p.omega,
        rabi_r=rabi,
        rabi_b=rabi,
        lamb_dicke=lamb_dicke,
    )


def repumper_effective_gamma(rs: RepumperSettings) -> float:
    """Effective spin decay ``Gamma_0 Omega_rep^2 / Gamma_e^2``.

    Valid when the pumped level decays fast, ``Gamma_0^2 >> Omega_rep^2``;
    a :class:`AdiabaticEliminationWarning` is issued below a factor 100.
    """
    if not rs.gamma_e_total > 0:
        raise ParameterError("gamma_e_total <= 0")
    if rs.gamma_e_to_0**2 < 100 * rs.rabi_rep**2:
        warnings.warn(
            "gamma_e_to_0^2 < 100 rabi_rep^2: adiabatic elimination of |e> is questionable",
            AdiabaticEliminationWarning, stacklevel=2,
        )
    return rs.gamma_e_to_0 * rs.rabi_rep**2 / rs.gamma_e_total**2


def sideband_flopping_signal(fock_dist: Sequence[float], eta_omega: float,
                             times: Sequence[float]) -> np.ndarray:
    """Blue-sideband excitation probability ``sum_n p_n sin^2(eta Omega sqrt(n+1) t)``."""
    p = np.asarray(fock_dist, dtype=float)
    if np.any(p < 0):
        raise ValueError("negative probabilities")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"distribution sums to {p.sum()!r}, not 1")
    if not eta_omega > 0:
        raise ValueError("eta_omega must be positive")
    t = np.asarray(times, dtype=float)
    if np.any(t < 0):
        raise ValueError("negative times")
    freqs = eta_omega * np.sqrt(np.arange(1, p.size + 1))
    return np.sin(np.outer(t, freqs)) ** 2 @ p
