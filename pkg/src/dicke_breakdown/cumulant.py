"""Second-order cumulant equations for the open Dicke model.

Twelve real moments close under the second-order cumulant approximation
once all Z2-odd moments (first moments of q, p, sigma_x, sigma_y) are
dropped.  This module integrates them, finds their fixed points by Newton
iteration and evaluates the published closed-form steady states as a
cross-check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .integrate import StepSizeUnderflow, dopri5
from .model import ModelParams, omega0_gamma, validate_params

__all__ = [
    "MOMENT_NAMES",
    "MomentVector",
    "MomentTrajectory",
    "ClosedFormSolution",
    "DiscriminantReport",
    "NoSteadyState",
    "initial_moments",
    "moment_derivatives",
    "moment_jacobian",
    "evolve_moments",
    "steady_state_numeric",
    "steady_state_closed_form",
    "discriminant",
    "is_physical",
    "write_trajectory_csv",
]

MOMENT_NAMES = ("sz", "n", "r", "s", "qx", "px", "qy", "py", "cxx", "cyy", "czz", "cxy")
# index shortcuts into the flat state
SZ, N_, R, S, QX, PX, QY, PY, CXX, CYY, CZZ, CXY = range(12)

KAPPA_CONVENTIONS = ("derived", "printed")


class NoSteadyState(RuntimeError):
    """No physical fixed point of the moment equations could be reached."""


@dataclass(frozen=True)
class MomentVector:
    """Expectation values kept by the second-order expansion.

    ``r`` and ``s`` are the real and imaginary parts of <a^2>; ``qx`` etc.
    are spin-oscillator correlators <q sigma_x>; ``cxx`` etc. are
    correlators between two different spins.
    """

    sz: float = 0.0
    n: float = 0.0
    r: float = 0.0
    s: float = 0.0
    qx: float = 0.0
    px: float = 0.0
    qy: float = 0.0
    py: float = 0.0
    cxx: float = 0.0
    cyy: float = 0.0
    czz: float = 0.0
    cxy: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, y: Iterable[float]) -> "MomentVector":
        return cls(*(float(v) for v in y))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_moments(m: MomentVector, slack: float = 1e-6) -> None:
    y = m.to_array()
    if not np.all(np.isfinite(y)):
        raise ValueError("moments must be finite")
    if abs(m.sz) > 1 + slack:
        raise ValueError(f"sz={m.sz} outside [-1, 1]")
    if m.n < -slack:
        raise ValueError(f"n={m.n} is negative")
    for name in ("cxx", "cyy", "czz", "cxy"):
        if abs(getattr(m, name)) > 1 + slack:
            raise ValueError(f"{name} outside [-1, 1]")


def is_physical(m: MomentVector, tol: float = 1e-9) -> bool:
    """Steady-state physicality: n >= 0, sz in [-1, 0], correlators bounded."""
    if not np.all(np.isfinite(m.to_array())):
        return False
    if m.n < -tol or not (-1 - tol <= m.sz <= tol):
        return False
    return all(abs(getattr(m, k)) <= 1 + tol for k in ("cxx", "cyy", "czz", "cxy"))


def initial_moments(
    p: ModelParams, spec: Union[str, MomentVector] = "ground"
) -> MomentVector:
    """Initial moments: ``"ground"`` is all spins down with the oscillator
    in vacuum; a :class:`MomentVector` is validated and returned as-is."""
    validate_params(p)
    if isinstance(spec, MomentVector):
        _check_moments(spec, slack=0.0)
        return spec
    if spec == "ground":
        return MomentVector(sz=-1.0, czz=1.0)
    raise ValueError(f"unknown initial state {spec!r}")


def _damping(p: ModelParams, kappa_convention: str) -> float:
    if kappa_convention == "derived":
        return p.kappa / 2 + p.gamma / 2
    if kappa_convention == "printed":
        return p.kappa + p.gamma / 2
    raise ValueError(f"kappa_convention must be one of {KAPPA_CONVENTIONS}")


def _rhs(y: np.ndarray, p: ModelParams, kappa_convention: str = "derived") -> np.ndarray:
    # plain floats: this is the integrator's inner loop
    sz, n, r, s, qx, px, qy, py, cxx, cyy, czz, cxy = y.tolist()
    N = p.n_spins
    w0, w, g, gam, kap = p.omega0, p.omega, p.g, p.gamma, p.kappa
    d = _damping(p, kappa_convention)
    Ng = N * g
    return np.array((
        2 * g * qy - gam * (sz + 1),
        -kap * n - Ng * px,
        -kap * r + 2 * w * s + Ng * px,
        -kap * s - 2 * w * r - Ng * qx,
        -d * qx + w * px - w0 * qy,
        -d * px - w * qx - w0 * py - 2 * g * ((N - 1) * cxx + 1),
        -d * qy + w * py + w0 * qx - 4 * g * (n + r + 0.5) * sz,
        -d * py - w * qy + w0 * px - 4 * g * s * sz - 2 * g * (N - 1) * cxy,
        -gam * cxx - 2 * w0 * cxy,
        -gam * cyy + 2 * w0 * cxy - 4 * g * qy * sz,
        -2 * gam * (czz + sz) + 4 * g * qy * sz,
        -gam * cxy + w0 * (cxx - cyy) - 2 * g * qx * sz,
    ))


def moment_jacobian(
    y: np.ndarray, p: ModelParams, kappa_convention: str = "derived"
) -> np.ndarray:
    """Analytic Jacobian of the moment right-hand side at the flat state ``y``."""
    sz, n, r, s, qx, px, qy, py, cxx, cyy, czz, cxy = y
    N = p.n_spins
    w0, w, g, gam, kap = p.omega0, p.omega, p.g, p.gamma, p.kappa
    d = _damping(p, kappa_convention)
    J = np.zeros((12, 12))
    J[SZ, QY] = 2 * g
    J[SZ, SZ] = -gam
    J[N_, N_] = -kap
    J[N_, PX] = -N * g
    J[R, R] = -kap
    J[R, S] = 2 * w
    J[R, PX] = N * g
    J[S, S] = -kap
    J[S, R] = -2 * w
    J[S, QX] = -N * g
    J[QX, QX] = -d
    J[QX, PX] = w
    J[QX, QY] = -w0
    J[PX, PX] = -d
    J[PX, QX] = -w
    J[PX, PY] = -w0
    J[PX, CXX] = -2 * g * (N - 1)
    J[QY, QY] = -d
    J[QY, PY] = w
    J[QY, QX] = w0
    J[QY, N_] = -4 * g * sz
    J[QY, R] = -4 * g * sz
    J[QY, SZ] = -4 * g * (n + r + 0.5)
    J[PY, PY] = -d
    J[PY, QY] = -w
    J[PY, PX] = w0
    J[PY, S] = -4 * g * sz
    J[PY, SZ] = -4 * g * s
    J[PY, CXY] = -2 * g * (N - 1)
    J[CXX, CXX] = -gam
    J[CXX, CXY] = -2 * w0
    J[CYY, CYY] = -gam
    J[CYY, CXY] = 2 * w0
    J[CYY, QY] = -4 * g * sz
    J[CYY, SZ] = -4 * g * qy
    J[CZZ, CZZ] = -2 * gam
    J[CZZ, SZ] = -2 * gam + 4 * g * qy
    J[CZZ, QY] = 4 * g * sz
    J[CXY, CXY] = -gam
    J[CXY, CXX] = w0
    J[CXY, CYY] = -w0
    J[CXY, QX] = -2 * g * sz
    J[CXY, SZ] = -2 * g * qx
    return J


def moment_derivatives(
    m: MomentVector, p: ModelParams, kappa_convention: str = "derived"
) -> MomentVector:
    """Time derivatives of all moments at ``m``.

    ``kappa_convention="derived"`` damps the spin-oscillator correlators at
    ``kappa/2 + gamma/2`` as follows from the jump operator ``sqrt(kappa) a``;
    ``"printed"`` uses ``kappa + gamma/2``.
    """
    return MomentVector.from_array(_rhs(m.to_array(), p, kappa_convention))


@dataclass
class MomentTrajectory:
    times: np.ndarray
    moments: np.ndarray  # shape (len(times), 12), columns in MOMENT_NAMES order
    diverged: bool
    status: str

    def __len__(self) -> int:
        return len(self.times)

    def at(self, i: int) -> MomentVector:
        return MomentVector.from_array(self.moments[i])

    @property
    def final(self) -> MomentVector:
        return self.at(-1)

    def column(self, name: str) -> np.ndarray:
        return self.moments[:, MOMENT_NAMES.index(name)]


def _late_growth(times, ys, p, t_final, kappa_convention, n_large=1e3, n_floor=1.0):
    """Heating test on the final tenth of the time window.

    Either ``n > n_large`` while rising throughout, or ``dn/dt`` positive
    throughout and not relaxing (its final value at least half its value
    at the start of the window) with ``n > n_floor``.
    """
    window = times >= 0.9 * t_final
    if window.sum() < 2:
        return False
    n = ys[window, N_]
    rate = np.array([_rhs(y, p, kappa_convention)[N_] for y in ys[window]])
    if not np.all(rate > 0):
        return False
    if n[-1] > n_large:
        return True
    return bool(n[-1] > n_floor and rate[-1] >= 0.5 * rate[0])


def evolve_moments(
    m0: MomentVector,
    p: ModelParams,
    t_final: float,
    tol: float = 1e-8,
    *,
    t_eval: Optional[Sequence[float]] = None,
    overflow: float = 1e12,
    kappa_convention: str = "derived",
) -> MomentTrajectory:
    """Integrate the moment equations from ``m0`` up to ``t_final``.

    Returns every accepted step, or only the ``t_eval`` samples (plus
    ``t = 0`` and ``t_final``).  The run is flagged ``diverged`` when
    ``|n|`` exceeds ``overflow`` (integration stops there) or when the
    oscillator keeps heating over the last tenth of the window: ``n > 1e3``
    and rising, or a positive heating rate that does not relax.

    Raises
    ------
    StepSizeUnderflow
        If the step controller fails; distinct from divergence.
    """
    validate_params(p)
    _check_moments(m0)
    if t_final <= 0 or tol <= 0:
        raise ValueError("t_final and tol must be positive")
    keep = None
    if t_eval is not None:
        requested = sorted(set([0.0, float(t_final)] + [float(t) for t in t_eval]))
        probes = np.linspace(0.9 * t_final, t_final, 21).tolist()
        t_eval = sorted(set(requested + probes))
        keep = np.isin(t_eval, requested)

    def stop(t, y):
        if not np.all(np.isfinite(y)) or abs(y[N_]) > overflow:
            return "diverged"
        return None

    sol = dopri5(
        lambda t, y: _rhs(y, p, kappa_convention),
        (0.0, float(t_final)),
        m0.to_array(),
        rtol=tol,
        atol=tol,
        t_eval=t_eval,
        stop=stop,
    )
    times = np.asarray(sol.t)
    ys = np.asarray(sol.y)
    diverged = sol.status == "diverged" or _late_growth(
        times, ys, p, t_final, kappa_convention
    )
    if keep is not None and sol.status != "diverged":
        times, ys = times[keep], ys[keep]
    status = "diverged" if diverged else sol.status
    return MomentTrajectory(times=times, moments=ys, diverged=diverged, status=status)


def _newton(y, p, tol, max_iter, kappa_convention):
    f = _rhs(y, p, kappa_convention)
    norm = np.max(np.abs(f))
    for _ in range(max_iter):
        if norm < tol:
            return y, norm
        J = moment_jacobian(y, p, kappa_convention)
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -f, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            y_try = y + lam * step
            f_try = _rhs(y_try, p, kappa_convention)
            n_try = np.max(np.abs(f_try))
            if np.isfinite(n_try) and n_try < (1 - 1e-4 * lam) * norm:
                break
            lam /= 2
        else:
            return y, norm
        y, f, norm = y_try, f_try, n_try
    return y, norm


def _accept(y, res, tol):
    m = MomentVector.from_array(y)
    return m if res < tol and is_physical(m, tol=1e-7) else None


def _continuation(p, tol, max_iter, kappa_convention, n_steps=40):
    """Follow the fixed point from weak coupling up to ``p.g``."""
    y = initial_moments(p).to_array()
    for g in np.linspace(0, p.g, n_steps + 1)[1:]:
        y, res = _newton(y, p.with_(g=float(g)), tol, max_iter, kappa_convention)
        if res >= tol:
            return None
    return _accept(y, res, tol)


def steady_state_numeric(
    p: ModelParams,
    guess: Optional[MomentVector] = None,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
    relax_time: float = 2e3,
    kappa_convention: str = "derived",
) -> MomentVector:
    """Physical fixed point of the moment equations.

    Damped Newton iteration from ``guess`` (default: the ground state).  If
    that stalls or lands on an unphysical root, the fixed point is followed
    by continuation in ``g`` from weak coupling, and finally the equations
    are relaxed in time for ``relax_time`` and Newton is restarted there.

    Raises
    ------
    NoSteadyState
        When no route yields a physical root with residual below ``tol``
        (the breakdown regime).
    """
    validate_params(p)
    y0 = (guess or initial_moments(p)).to_array()
    m = _accept(*_newton(y0, p, tol, max_iter, kappa_convention), tol)
    if m is not None:
        return m
    if p.g > 0:
        m = _continuation(p, tol, max_iter, kappa_convention)
        if m is not None:
            return m
    try:
        traj = evolve_moments(
            MomentVector.from_array(y0), p, relax_time, tol=1e-9,
            t_eval=[relax_time], kappa_convention=kappa_convention,
        )
    except StepSizeUnderflow as exc:
        raise NoSteadyState(f"relaxation failed: {exc}") from exc
    if traj.diverged:
        raise NoSteadyState("moment equations diverge; no stationary state")
    y, res = _newton(traj.moments[-1], p, tol, max_iter, kappa_convention)
    m = _accept(y, res, tol)
    if m is not None:
        return m
    raise NoSteadyState(f"no physical root found (residual {res:.3e})")


@dataclass(frozen=True)
class ClosedFormSolution:
    """One closed-form steady state.

    ``normalization`` is ``"single"`` for N = 1, ``"exact"`` for the
    finite-N expressions with (N-1) prefactors and ``"large_n"`` for the
    thermodynamic-limit expressions.  ``moments`` is None when the
    discriminant is complex.  ``consistent`` records whether the moments
    are a fixed point of :func:`moment_derivatives` (residual < 1e-8).
    """

    branch: str
    moments: Optional[MomentVector]
    discriminant: Union[float, complex]
    physical: bool
    consistent: bool
    residual: float
    normalization: str


@dataclass(frozen=True)
class DiscriminantReport:
    exact: Union[float, complex]
    radicand: float
    approx: float
    radicand_negative: bool


def discriminant(p: ModelParams) -> DiscriminantReport:
    """Discriminant separating the two finite-N solution branches, together
    with its small-decay approximation ``|omega*omega0_gamma - 4 N g^2|``."""
    validate_params(p)
    if p.n_spins < 2:
        raise ValueError("discriminant is defined for n_spins >= 2")
    w0g = omega0_gamma(p)
    w, w0, g, M = p.omega, p.omega0, p.g, p.n_spins - 1
    radicand = 16 * M**2 * (g**2 - w * w0) * w0g / w0 + (w * w0g + 4 * M * g**2) ** 2
    exact = math.sqrt(radicand) if radicand >= 0 else complex(0.0, math.sqrt(-radicand))
    approx = abs(w * w0g - 4 * p.n_spins * g**2)
    return DiscriminantReport(exact=exact, radicand=radicand, approx=approx,
                              radicand_negative=radicand < 0)


def _single_spin_solution(p: ModelParams) -> MomentVector:
    w, w0, g, gam = p.omega, p.omega0, p.g, p.gamma
    w0g = omega0_gamma(p)
    det = w * w0 - g**2
    return MomentVector(
        sz=g**2 / (w * w0) - 1,
        n=(w**2 + w0 * w0g) / (4 * det) - 0.5 * (1 + g**2 / w**2),
        r=g**2 / (2 * w**2),
        s=0.0,
        qx=-g / w,
        px=0.0,
        qy=gam * g / (2 * w * w0),
        py=-g / w0,
        cxx=2 * g**2 * det / (w**2 * w0 * w0g),
        cyy=gam**2 * g**2 * det / (2 * w**2 * w0**3 * w0g),
        czz=det**2 / (w**2 * w0**2),
        cxy=-gam * g**2 * det / (w**2 * w0**2 * w0g),
    )


def _exact_branch(p: ModelParams, D: float, sign: int) -> MomentVector:
    # Finite-N expressions with (N-1) prefactors, transcribed term by term.
    w, w0, g, gam = p.omega, p.omega0, p.g, p.gamma
    N, M = p.n_spins, p.n_spins - 1
    w0g = omega0_gamma(p)
    sD = sign * D
    a = sD - (w * w0g + 4 * M * g**2)
    b = sD - (w * w0g - 4 * M * g**2)
    c = a * w * w0 + 8 * M * (w * w0 - g**2) * g**2
    n = (
        -sign * ((w**2 + w0 * w0g) / (8 * w * w0g) + w0 / (16 * M * w * g**2)
                 - w0 / (16 * w * g**2)) * D
        + w0 * w0g / (16 * M * g**2)
        + M * ((w**2 + w0 * w0g) / (w * w0 - g**2) * w0 / (2 * w0g)
               - (2 * w**2 + w0 * w0g) / (4 * w * w0g))
        + (w**2 + w0 * w0g) / (w * w0 - g**2) * (w0g / (8 * w0g))
        + 4 * w0 / w - w0 * w0g / g**2 - 0.5
    )
    czz = -(1 / (32 * M**2 * w0 * g**4)) * (
        sign * (w * w0 + 4 * M * g**2) * w0 * D
        - 16 * M**2 * w0 * g**4 + 8 * M * w0g + w**2 * w0 * w0g**2
    )
    return MomentVector(
        sz=a / (8 * M * g**2),
        n=n,
        r=N * a / (16 * M * w * g**2),
        s=0.0,
        qx=-w0 * b / (16 * M * g**2),
        px=0.0,
        qy=gam * b / (16 * M * g**2),
        py=-g / w0,
        cxx=c / (16 * M**2 * g**4),
        cyy=(gam / 2) ** 2 * c / (16 * M**2 * w0 * g**4),
        cxy=-(gam / 2) * c / (16 * M**2 * w0 * g**4),
        czz=czz,
    )


def _large_n_branch(p: ModelParams, D: float, sign: int) -> MomentVector:
    w, w0, g, gam = p.omega, p.omega0, p.g, p.gamma
    N = p.n_spins
    w0g = omega0_gamma(p)
    sD = sign * D
    u = sD + 4 * N * g**2 - w * w0g
    return MomentVector(
        sz=(sD - 4 * N * g**2 - w * w0g) / (8 * N * g**2),
        n=N * w0 * u / (16 * w * N * g**2),
        r=N * w0 * u / (16 * w * N * g**2),
        s=0.0,
        qx=-w0 * u / (8 * (N * g**2) ** 1.5),
        px=0.0,
        qy=gam * u / (16 * (N * g**2) ** 1.5),
        py=-g / w0,
        cxx=w * w0 * u / (16 * N**2 * g**4),
        cxy=-gam * w * u / (32 * N**2 * g**4),
        cyy=w * gam**2 * u / (64 * w0 * N**2 * g**4),
        czz=(-sD * (4 * N * g**2 + w * w0g) + 16 * N**2 * g**4 + w**2 * w0g**2)
        / (32 * N**2 * g**4),
    )


def _residual(m: MomentVector, p: ModelParams) -> float:
    r = _rhs(m.to_array(), p)
    return float(np.max(np.abs(r))) if np.all(np.isfinite(r)) else math.inf


def steady_state_closed_form(p: ModelParams, residual_tol: float = 1e-8) -> list[ClosedFormSolution]:
    """Evaluate the closed-form steady states (valid at ``kappa = 0``).

    For one spin the unique solution is returned.  For N > 1 both branches
    of the finite-N expressions and both branches of the large-N
    expressions (the large-N ``sz`` divided by ``8 N g^2`` so that the
    normal phase sits at -1) are returned, each marked physical and
    checked for being a fixed point of :func:`moment_derivatives`.
    """
    validate_params(p)
    if p.kappa > 0:
        raise ValueError("closed forms are only available for kappa = 0")
    if p.g == 0:
        raise ValueError("closed forms are singular at g = 0")

    def wrap(branch, m, D, norm):
        if m is None:
            return ClosedFormSolution(branch, None, D, False, False, math.inf, norm)
        res = _residual(m, p)
        return ClosedFormSolution(branch, m, D, is_physical(m), res < residual_tol, res, norm)

    if p.n_spins == 1:
        return [wrap("single", _single_spin_solution(p), math.nan, "single")]

    rep = discriminant(p)
    out = []
    for sign, label in ((+1, "plus"), (-1, "minus")):
        m = None if rep.radicand_negative else _exact_branch(p, rep.exact, sign)
        out.append(wrap(label, m, rep.exact, "exact"))
    for sign, label in ((+1, "plus"), (-1, "minus")):
        out.append(wrap(label, _large_n_branch(p, rep.approx, sign), rep.approx, "large_n"))
    return out


def write_trajectory_csv(traj: MomentTrajectory, path, schema_comment: bool = True) -> None:
    """Write ``t,sz,n,...,cxy`` rows with 15 significant digits.

    ``path`` may also be an open text stream.
    """
    if hasattr(path, "write"):
        _write_rows(traj, path, schema_comment)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(traj, fh, schema_comment)


def _write_rows(traj, fh, schema_comment):
    if schema_comment:
        fh.write("# schema=1\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("t",) + MOMENT_NAMES)
    for t, row in zip(traj.times, traj.moments):
        w.writerow([format(float(t), ".15g")] + [format(float(v), ".15g") for v in row])
