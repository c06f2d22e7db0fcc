"""Phase-diagram sweeps over coupling and spin number.

A sweep evaluates every grid point with the cumulant steady state, the
master-equation cutoff study, or both, labels it normal / superradiant /
breakdown / inconclusive, and writes one CSV row per point in grid order.
Points are independent, so they can be farmed out to worker processes;
results are collected and written in grid order, so the file does not
depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .cumulant import NoSteadyState, evolve_moments, initial_moments, steady_state_numeric
from .integrate import IntegrationError
from .liouville import BreakdownReport, TraceDriftError, detect_breakdown
from .model import ModelParams, ParameterError, validate_params

__all__ = [
    "ConfigError",
    "SweepConfig",
    "SweepRecord",
    "PHASES",
    "classify_phase",
    "parse_config",
    "load_config",
    "evaluate_point",
    "run_sweep",
    "write_sweep_csv",
    "SWEEP_COLUMNS",
]

PHASES = ("normal", "superradiant", "breakdown", "inconclusive")
METHODS = ("cumulant", "master", "both")
SWEEP_COLUMNS = (
    "index", "n_spins", "omega0", "omega", "g", "sqrt_n_g", "gamma", "kappa",
    "method", "phase", "sz", "n_over_N", "status",
)


class ConfigError(ValueError):
    """Invalid sweep or run configuration."""


@dataclass(frozen=True)
class SweepConfig:
    points: tuple
    method: str = "cumulant"
    cutoffs: tuple = (20, 40)
    t_final: float = 200.0
    tol: float = 1e-6
    output: Optional[str] = None
    workers: int = 1
    n_over_n_threshold: float = 0.01
    sz_threshold: float = -0.99
    cumulant_t_final: float = 4000.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["points"] = [p.to_dict() for p in self.points]
        d["cutoffs"] = list(self.cutoffs)
        return d


@dataclass
class SweepRecord:
    index: int
    params: ModelParams
    method: str
    phase: str
    sz: float
    n_over_N: float
    status: str = "ok"
    diagnostics: Optional[BreakdownReport] = field(default=None, repr=False)

    def row(self) -> list:
        p = self.params
        return [
            str(self.index), str(p.n_spins), _fmt(p.omega0), _fmt(p.omega), _fmt(p.g),
            _fmt(p.sqrt_n_g), _fmt(p.gamma), _fmt(p.kappa), self.method, self.phase,
            _fmt(self.sz), _fmt(self.n_over_N), self.status,
        ]


def _fmt(x: float) -> str:
    return format(float(x), ".15g")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_PARAM_KEYS = ("n_spins", "omega0", "omega", "g", "gamma", "kappa")
_TOP_KEYS = {
    "grid", "points", "method", "cutoffs", "t_final", "tol", "output", "workers",
    "thresholds", "cumulant_t_final",
}


def _params_from(d: dict, where: str) -> ModelParams:
    unknown = set(d) - set(_PARAM_KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown parameter key(s) {sorted(unknown)}")
    try:
        kw = {k: (int(d[k]) if k == "n_spins" else float(d[k])) for k in d}
        return validate_params(ModelParams(**kw))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _expand_grid(grid: dict) -> list:
    """``{"sqrt_n_g": [...], "n_spins": [...], <fixed params>}`` to points,
    spin number outermost."""
    if not isinstance(grid, dict):
        raise ConfigError("grid: expected an object")
    if "sqrt_n_g" not in grid or "n_spins" not in grid:
        raise ConfigError("grid: needs 'sqrt_n_g' and 'n_spins' lists")
    fixed = {k: v for k, v in grid.items() if k not in ("sqrt_n_g", "n_spins")}
    if "g" in fixed:
        raise ConfigError("grid: 'g' is set through 'sqrt_n_g'")
    values = grid["sqrt_n_g"]
    if isinstance(values, dict):
        try:
            lo, hi, num = float(values["start"]), float(values["stop"]), int(values["num"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("grid.sqrt_n_g: range needs start, stop, num") from None
        if num < 1:
            raise ConfigError("grid.sqrt_n_g.num: must be >= 1")
        values = [lo + (hi - lo) * k / max(num - 1, 1) for k in range(num)]
    ns = grid["n_spins"]
    if not isinstance(values, list) or not isinstance(ns, list) or not values or not ns:
        raise ConfigError("grid: 'sqrt_n_g' and 'n_spins' must be nonempty lists")
    points = []
    for n in ns:
        for x in values:
            try:
                g = float(x) / math.sqrt(int(n))
            except (TypeError, ValueError):
                raise ConfigError(f"grid: bad value n_spins={n!r}, sqrt_n_g={x!r}") from None
            points.append(_params_from({**fixed, "n_spins": n, "g": g}, f"grid[n_spins={n}, sqrt_n_g={x}]"))
    return points


def parse_config(d: dict, **overrides) -> SweepConfig:
    """Validate a decoded JSON config; keyword ``overrides`` win over keys
    (``None`` values are ignored)."""
    if not isinstance(d, dict):
        raise ConfigError("config: expected a JSON object")
    d = dict(d)
    d.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"config: unknown key(s) {sorted(unknown)}")
    if ("grid" in d) == ("points" in d):
        raise ConfigError("config: give exactly one of 'grid' or 'points'")
    if "grid" in d:
        points = _expand_grid(d["grid"])
    else:
        if not isinstance(d["points"], list) or not d["points"]:
            raise ConfigError("points: must be a nonempty list")
        points = [_params_from(x, f"points[{i}]") for i, x in enumerate(d["points"])]
    method = d.get("method", "cumulant")
    if method not in METHODS:
        raise ConfigError(f"method: expected one of {METHODS}, got {method!r}")
    cutoffs = tuple(int(c) for c in d.get("cutoffs", (20, 40)))
    if method != "cumulant":
        if len(cutoffs) < 2 or any(b <= a for a, b in zip(cutoffs, cutoffs[1:])) or cutoffs[0] < 1:
            raise ConfigError("cutoffs: need >= 2 strictly increasing positive integers")
    thresholds = d.get("thresholds", {})
    if not isinstance(thresholds, dict) or set(thresholds) - {"n_over_N", "sz"}:
        raise ConfigError("thresholds: allowed keys are 'n_over_N' and 'sz'")
    try:
        cfg = SweepConfig(
            points=tuple(points),
            method=method,
            cutoffs=cutoffs,
            t_final=float(d.get("t_final", 200.0)),
            tol=float(d.get("tol", 1e-6)),
            output=d.get("output"),
            workers=int(d.get("workers", 1)),
            n_over_n_threshold=float(thresholds.get("n_over_N", 0.01)),
            sz_threshold=float(thresholds.get("sz", -0.99)),
            cumulant_t_final=float(d.get("cumulant_t_final", 4000.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: {exc}") from None
    if cfg.t_final <= 0 or cfg.tol <= 0 or cfg.cumulant_t_final <= 0:
        raise ConfigError("t_final, tol and cumulant_t_final must be positive")
    if cfg.workers < 1:
        raise ConfigError("workers: must be >= 1")
    return cfg


def load_config(path: str, **overrides) -> SweepConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_config(d, **overrides)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def classify_phase(result: dict, n_over_n_threshold: float = 0.01, sz_threshold: float = -0.99) -> str:
    """Phase label of one evaluated point.

    ``result`` carries ``breakdown`` (True, False or None for
    inconclusive), ``sz`` and ``n_over_N``.  Breakdown wins; otherwise the
    point is superradiant when ``n/N`` exceeds ``n_over_n_threshold`` and
    ``sz`` exceeds ``sz_threshold``, and normal otherwise.
    """
    b = result.get("breakdown")
    if b is None:
        return "inconclusive"
    if b:
        return "breakdown"
    sz, nn = result["sz"], result["n_over_N"]
    if not (math.isfinite(sz) and math.isfinite(nn)):
        return "inconclusive"
    if nn > n_over_n_threshold and sz > sz_threshold:
        return "superradiant"
    return "normal"


def _cumulant_point(p: ModelParams, cfg: SweepConfig) -> dict:
    try:
        m = steady_state_numeric(p)
        return {"breakdown": False, "sz": m.sz, "n_over_N": m.n / p.n_spins, "status": "ok"}
    except NoSteadyState:
        pass
    traj = evolve_moments(initial_moments(p), p, cfg.cumulant_t_final, tol=cfg.tol)
    last = traj.final
    return {
        "breakdown": True if traj.diverged else None,
        "sz": float(last.sz), "n_over_N": float(last.n) / p.n_spins,
        "status": "ok" if traj.diverged else "no fixed point, no divergence",
    }


def _master_point(p: ModelParams, cfg: SweepConfig) -> dict:
    rep = detect_breakdown(p, cfg.cutoffs, cfg.t_final, tol=cfg.tol)
    flag = {"breakdown": True, "steady": False}.get(rep.classification)
    status = "ok" if rep.cutoff_converged else "cutoff-unconverged"
    return {
        "breakdown": flag, "sz": rep.sz_final[-1], "n_over_N": rep.n_final[-1] / p.n_spins,
        "status": status, "report": rep,
    }


def evaluate_point(index: int, p: ModelParams, cfg: SweepConfig) -> SweepRecord:
    """Evaluate one grid point; failures become an inconclusive record."""
    try:
        if cfg.method == "cumulant":
            res = _cumulant_point(p, cfg)
        elif cfg.method == "master":
            res = _master_point(p, cfg)
        else:
            res = _master_point(p, cfg)
            cum = _cumulant_point(p, cfg)
            res["status"] += f";cumulant_sz={_fmt(cum['sz'])};cumulant_n_over_N={_fmt(cum['n_over_N'])}"
    except (NoSteadyState, IntegrationError, TraceDriftError, ParameterError, FloatingPointError, ArithmeticError) as exc:
        return SweepRecord(index, p, cfg.method, "inconclusive", math.nan, math.nan,
                           status=f"error: {type(exc).__name__}: {exc}")
    phase = classify_phase(res, cfg.n_over_n_threshold, cfg.sz_threshold)
    return SweepRecord(index, p, cfg.method, phase, res["sz"], res["n_over_N"],
                       status=res["status"], diagnostics=res.get("report"))


def _task(args):
    return evaluate_point(*args)


def run_sweep(cfg: SweepConfig, write: bool = True) -> list:
    """Evaluate all points (in ``cfg.workers`` processes) and, if
    ``cfg.output`` is set and ``write`` is true, write the CSV and a
    ``.manifest.json`` copy of the resolved config next to it."""
    tasks = [(i, p, cfg) for i, p in enumerate(cfg.points)]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_task, tasks))
    else:
        records = [_task(t) for t in tasks]
    records.sort(key=lambda r: r.index)
    if write and cfg.output:
        write_sweep_csv(records, cfg.output)
        write_manifest(cfg.to_dict(), cfg.output)
    return records


def sweep_csv_text(records: Sequence[SweepRecord]) -> str:
    buf = io.StringIO()
    buf.write("# schema=1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def write_sweep_csv(records: Sequence[SweepRecord], path: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(sweep_csv_text(records))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None


def manifest_path(output: str) -> str:
    root, _ = os.path.splitext(output)
    return root + ".manifest.json"


def write_manifest(resolved: dict, output: str) -> str:
    path = manifest_path(output)
    with open(path, "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
