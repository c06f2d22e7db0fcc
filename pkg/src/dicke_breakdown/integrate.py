"""Explicit Runge-Kutta propagation shared by the cumulant and density solvers.

The adaptive scheme is the Dormand-Prince 5(4) pair with first-same-as-last
reuse; a classical fixed-step RK4 is available for reproducibility runs.
Both operate on flat real or complex numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "IntegrationError",
    "StepSizeUnderflow",
    "Solution",
    "dopri5",
    "rk4_fixed",
]


class IntegrationError(RuntimeError):
    """Base class for propagation failures."""


class StepSizeUnderflow(IntegrationError):
    """The step controller shrank the step below round-off resolution."""

    def __init__(self, message: str, solution: "Solution"):
        super().__init__(message)
        self.solution = solution


@dataclass
class Solution:
    t: list = field(default_factory=list)
    y: list = field(default_factory=list)
    status: str = "success"
    message: str = ""
    nfev: int = 0
    n_accepted: int = 0
    n_rejected: int = 0

    @property
    def t_final(self) -> float:
        return self.t[-1]

    @property
    def y_final(self) -> np.ndarray:
        return self.y[-1]


# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B5 - _B4
_A_MAT = np.zeros((7, 7))
for _i, _row in enumerate(_A):
    _A_MAT[_i, : len(_row)] = _row

StopFn = Callable[[float, np.ndarray], Optional[str]]


def _error_norm(err, y, y_new, rtol, atol) -> float:
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.max(np.abs(err) / scale)) if err.size else 0.0


def _initial_step(f, t0, y0, f0, rtol, atol) -> float:
    scale = atol + rtol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    d2 = np.max(np.abs(f(t0 + h0, y1) - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def dopri5(
    f: Callable[[float, np.ndarray], np.ndarray],
    t_span: tuple[float, float],
    y0: np.ndarray,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-8,
    t_eval: Optional[Sequence[float]] = None,
    max_step: float = np.inf,
    first_step: Optional[float] = None,
    stop: Optional[StopFn] = None,
    max_steps: int = 10_000_000,
) -> Solution:
    """Integrate ``y' = f(t, y)`` with error-controlled Dormand-Prince steps.

    The max-norm of the embedded error estimate, weighted by
    ``atol + rtol*|y|``, is kept below one on every accepted step.

    If ``t_eval`` is given, steps are clipped so that every requested time
    is hit exactly and only those samples are stored; otherwise every
    accepted step is stored.  ``stop(t, y)`` is checked after each accepted
    step; a non-None return ends the run with that string as ``status``.

    Raises
    ------
    StepSizeUnderflow
        When the step becomes too small to advance ``t``.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    y = np.array(y0, copy=True)
    sol = Solution()
    if t_eval is not None:
        samples = [float(s) for s in t_eval]
        if any(b < a for a, b in zip(samples, samples[1:])):
            raise ValueError("t_eval must be nondecreasing")
        if samples and (samples[0] < t0 or samples[-1] > t1):
            raise ValueError("t_eval outside t_span")
    else:
        samples = None
    next_sample = 0

    def record(t, yv):
        sol.t.append(t)
        sol.y.append(yv.copy())

    if samples is None:
        record(t0, y)
    else:
        while next_sample < len(samples) and samples[next_sample] <= t0:
            record(samples[next_sample], y)
            next_sample += 1

    if t1 <= t0:
        return sol

    fy = f(t0, y)
    sol.nfev += 1
    h = first_step if first_step else _initial_step(f, t0, y, fy, rtol, atol)
    sol.nfev += 1
    h = min(h, max_step, t1 - t0)
    t = t0
    K = np.empty((7,) + y.shape, dtype=np.result_type(y, fy, float))
    safety, min_factor, max_factor = 0.9, 0.2, 5.0

    while t < t1:
        if sol.n_accepted + sol.n_rejected >= max_steps:
            sol.status = "max_steps"
            sol.message = f"step budget {max_steps} exhausted at t={t:g}"
            break
        target = t1
        if samples is not None and next_sample < len(samples):
            target = min(target, samples[next_sample])
        h = min(h, max_step)
        h_proposed = h
        landing = False
        if t + h >= target:
            h = target - t
            landing = True
        if h <= 1e-14 * max(1.0, abs(t)):
            if not landing:
                sol.status = "step_underflow"
                sol.message = f"step size underflow at t={t:g}"
                record(t, y)
                raise StepSizeUnderflow(sol.message, sol)
            # sample time within round-off of t: snap instead of stepping
            t = target
        else:
            K[0] = fy
            for s in range(1, 7):
                acc = y + h * (_A_MAT[s, :s] @ K[:s])
                K[s] = f(t + _C[s] * h, acc)
            sol.nfev += 6
            y_new = acc  # stage 7 argument is the 5th-order solution
            err = h * (_E @ K)
            en = _error_norm(err, y, y_new, rtol, atol)
            if not np.isfinite(en):
                en = np.inf
            if en > 1.0:
                sol.n_rejected += 1
                factor = max(min_factor, safety * en ** (-1 / 5)) if np.isfinite(en) else min_factor
                h *= factor
                if h <= 1e-14 * max(1.0, abs(t)):
                    sol.status = "step_underflow"
                    sol.message = f"step size underflow at t={t:g}"
                    record(t, y)
                    raise StepSizeUnderflow(sol.message, sol)
                continue
            sol.n_accepted += 1
            t = target if landing else t + h
            y = y_new
            fy = K[6].copy()
            factor = max_factor if en == 0 else min(max_factor, safety * en ** (-1 / 5))
            h_next = h * factor
            # a step clipped to land on a sample says nothing against the
            # controller's earlier proposal
            h = max(h_proposed, h_next) if landing else h_next
        if samples is None:
            record(t, y)
        else:
            while next_sample < len(samples) and samples[next_sample] <= t + 1e-12 * max(1.0, abs(t)):
                record(samples[next_sample], y)
                next_sample += 1
        if stop is not None:
            reason = stop(t, y)
            if reason is not None:
                sol.status = reason
                if samples is not None and (not sol.t or sol.t[-1] != t):
                    record(t, y)
                break
    return sol


def rk4_fixed(
    f: Callable[[float, np.ndarray], np.ndarray],
    t_span: tuple[float, float],
    y0: np.ndarray,
    *,
    dt: float,
    t_eval: Optional[Sequence[float]] = None,
    stop: Optional[StopFn] = None,
) -> Solution:
    """Classical fourth-order Runge-Kutta with step ``dt`` (shortened to land
    on sample times and on ``t_span[1]``)."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.array(y0, copy=True)
    sol = Solution()
    marks = sorted(set([t1] + [float(s) for s in (t_eval or []) if t0 < s <= t1]))
    if t_eval is None or t0 in [float(s) for s in t_eval]:
        sol.t.append(t0)
        sol.y.append(y.copy())
    t = t0
    for mark in marks:
        while t < mark - 1e-14 * max(1.0, abs(mark)):
            h = min(dt, mark - t)
            k1 = f(t, y)
            k2 = f(t + h / 2, y + (h / 2) * k1)
            k3 = f(t + h / 2, y + (h / 2) * k2)
            k4 = f(t + h, y + h * k3)
            y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            sol.nfev += 4
            sol.n_accepted += 1
            t = t + h
            if t_eval is None:
                sol.t.append(t)
                sol.y.append(y.copy())
            if stop is not None:
                reason = stop(t, y)
                if reason is not None:
                    sol.status = reason
                    if t_eval is not None:
                        sol.t.append(t)
                        sol.y.append(y.copy())
                    return sol
        t = mark
        if t_eval is not None:
            sol.t.append(mark)
            sol.y.append(y.copy())
    return sol
