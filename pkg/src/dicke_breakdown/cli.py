"""Command-line entry point: ``dicke-breakdown <subcommand> --config run.json``.

Every subcommand reads one JSON document; flags override its keys.  When
``--out`` is given, a ``<out>.manifest.json`` copy of the resolved
configuration is written next to the output.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import asdict

import numpy as np

from . import cumulant, ionmap, liouville, spectral
from .integrate import IntegrationError
from .model import (
    ModelParams,
    ParameterError,
    breakdown_coupling,
    critical_coupling_spt,
    validate_params,
)
from .sweep import ConfigError, load_config, run_sweep, write_manifest

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class NumericalFailure(RuntimeError):
    pass


def _read_json(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return d


def _check_keys(d, allowed, where="config"):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


def _params(d, key="params") -> ModelParams:
    raw = d.get(key)
    if not isinstance(raw, dict):
        raise ConfigError(f"{key}: missing or not an object")
    _check_keys(raw, ("n_spins", "omega0", "omega", "g", "gamma", "kappa"), key)
    try:
        kw = {k: (int(v) if k == "n_spins" else float(v)) for k, v in raw.items()}
        p = ModelParams(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None
    try:
        return validate_params(p)
    except ParameterError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _override(d, args, *names):
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            d[name] = value
    return d


def _positive(d, key, default):
    try:
        v = float(d.get(key, default))
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: not a number") from None
    if not v > 0:
        raise ConfigError(f"{key}: must be positive")
    return v


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _emit_json(obj, out):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    if out:
        try:
            with open(out, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise ConfigError(f"{out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text)


def _manifest(d, out):
    if out:
        write_manifest(d, out)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_steady(args):
    d = _override(_read_json(args.config), args, "tol")
    _check_keys(d, ("params", "tol", "kappa_convention"))
    p = _params(d)
    tol = _positive(d, "tol", 1e-10)
    kc = d.get("kappa_convention", "derived")
    report = {
        "params": p.to_dict(),
        "g_c": critical_coupling_spt(p),
        "g_b": breakdown_coupling(p),
    }
    if p.kappa == 0 and p.g > 0:
        report["closed_form"] = [
            {
                "branch": s.branch,
                "moments": s.moments.as_dict() if s.moments is not None else None,
                "physical": s.physical,
                "consistent": s.consistent,
                "residual": s.residual,
            }
            for s in cumulant.steady_state_closed_form(p)
        ]
    try:
        m = cumulant.steady_state_numeric(p, tol=tol, kappa_convention=kc)
    except cumulant.NoSteadyState as exc:
        report["numeric"] = None
        _emit_json(report, args.out)
        _manifest(d, args.out)
        raise NumericalFailure(str(exc)) from None
    report["numeric"] = m.as_dict()
    _emit_json(report, args.out)
    _manifest(d, args.out)


def cmd_evolve(args):
    d = _override(_read_json(args.config), args, "tol", "t_final")
    _check_keys(d, ("params", "tol", "t_final", "kappa_convention"))
    p = _params(d)
    traj = cumulant.evolve_moments(
        cumulant.initial_moments(p), p, _positive(d, "t_final", 100.0),
        tol=_positive(d, "tol", 1e-8), kappa_convention=d.get("kappa_convention", "derived"),
    )
    if args.out:
        try:
            cumulant.write_trajectory_csv(traj, args.out)
        except OSError as exc:
            raise ConfigError(f"{args.out}: {exc.strerror}") from None
        _manifest(d, args.out)
    else:
        cumulant.write_trajectory_csv(traj, sys.stdout)
    if traj.diverged:
        print(f"diverged: {traj.status}", file=sys.stderr)


def cmd_master(args):
    d = _read_json(args.config)
    if args.nmax is not None:
        d["cutoffs"] = args.nmax
    d = _override(d, args, "tol", "t_final")
    _check_keys(d, ("params", "tol", "t_final", "cutoffs", "samples"))
    p = _params(d)
    cutoffs = d.get("cutoffs", [40])
    if not isinstance(cutoffs, list) or not cutoffs or not all(isinstance(c, int) and c >= 1 for c in cutoffs):
        raise ConfigError("cutoffs: expected a list of positive integers")
    t_final = _positive(d, "t_final", 200.0)
    tol = _positive(d, "tol", 1e-6)
    if len(cutoffs) >= 2:
        if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
            raise ConfigError("cutoffs: must be strictly increasing")
        rep = liouville.detect_breakdown(p, cutoffs, t_final, tol=tol)
        _emit_json(asdict(rep), args.out)
        _manifest(d, args.out)
        return
    if not args.out:
        raise ConfigError("master: --out is required for trajectory output")
    try:
        samples = int(d.get("samples", 21))
    except (TypeError, ValueError):
        raise ConfigError("samples: not an integer") from None
    if samples < 2:
        raise ConfigError("samples: must be >= 2")
    basis = liouville.build_dicke_basis(p.n_spins)
    traj = liouville.evolve_density(
        liouville.ground_state(basis, cutoffs[0]), p, t_final, tol,
        sample_times=np.linspace(0.0, t_final, samples), keep_states=False,
    )
    liouville.write_snapshot_csv(traj, args.out)
    root = args.out[:-4] if args.out.endswith(".csv") else args.out
    liouville.write_fock_csv(traj, root + "_fock.csv")
    _manifest(d, args.out)


def cmd_sweep(args):
    if args.config is None:
        raise ConfigError("sweep: --config is required")
    cfg = load_config(args.config, output=args.out, workers=args.workers, tol=args.tol,
                      t_final=args.t_final, cutoffs=args.nmax)
    if not cfg.output:
        raise ConfigError("sweep: no output path (set 'output' or --out)")
    records = run_sweep(cfg)
    failed = [r for r in records if r.status.startswith("error")]
    for r in failed:
        print(f"point {r.index}: {r.status}", file=sys.stderr)


def cmd_spectral(args):
    d = _read_json(args.config)
    _check_keys(d, ("params", "n_ex"))
    p = _params(d)
    n_ex = d.get("n_ex", 2)
    if not isinstance(n_ex, int) or n_ex < 2:
        raise ConfigError("n_ex: integer >= 2 expected")
    rep = spectral.spectral_report(p, n_ex)
    _emit_json({"params": p.to_dict(), **rep.to_dict()}, args.out)
    _manifest(d, args.out)


def cmd_ionmap(args):
    d = _read_json(args.config)
    _check_keys(d, ("lasers", "n_spins", "convention", "model", "lamb_dicke", "n_max", "repumper"))
    if not any(k in d for k in ("lasers", "model", "repumper")):
        raise ConfigError("ionmap: give 'lasers', 'model' and/or 'repumper'")
    out = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            if "lasers" in d:
                if "n_spins" not in d:
                    raise ConfigError("ionmap: 'lasers' needs 'n_spins'")
                ls = ionmap.LaserSettings(**d["lasers"])
                p = ionmap.lasers_to_model(ls, int(d["n_spins"]), d.get("convention", "hamiltonian"))
                out["model"] = p.to_dict()
            if "model" in d:
                if "lamb_dicke" not in d:
                    raise ConfigError("ionmap: 'model' needs 'lamb_dicke'")
                p = _params(d, "model")
                out["lasers"] = ionmap.model_to_lasers(p, float(d["lamb_dicke"]), d.get("n_max")).to_dict()
            if "repumper" in d:
                rs = ionmap.RepumperSettings(**d["repumper"])
                out["gamma_eff"] = ionmap.repumper_effective_gamma(rs)
        except (TypeError, ParameterError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"ionmap: {exc}") from None
    out["warnings"] = [str(w.message) for w in caught]
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _emit_json(out, args.out)
    _manifest(d, args.out)


# ---------------------------------------------------------------------------


def _cutoff_list(text):
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None
    if not values:
        raise argparse.ArgumentTypeError("empty cutoff list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dicke-breakdown",
        description="Open Dicke model: cumulant steady states, master-equation breakdown studies, "
                    "spectral estimates and trapped-ion parameter maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "steady": (cmd_steady, "cumulant steady state (numeric and closed form), JSON"),
        "evolve": (cmd_evolve, "cumulant trajectory from the ground state, CSV"),
        "master": (cmd_master, "master-equation trajectory (one cutoff) or breakdown study (several)"),
        "sweep": (cmd_sweep, "phase-diagram sweep, CSV"),
        "spectral": (cmd_spectral, "dressed detuning and effective heating rate, JSON"),
        "ionmap": (cmd_ionmap, "laser settings <-> model parameters, repumper decay, JSON"),
    }
    for name, (fn, help_) in handlers.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", help="output path (stdout for JSON when omitted)")
        sp.add_argument("--workers", type=int, help="worker processes (sweep)")
        sp.add_argument("--tol", type=float, help="integration / solver tolerance")
        sp.add_argument("--t-final", dest="t_final", type=float, help="final time")
        sp.add_argument("--nmax", type=_cutoff_list, help="Fock cutoffs, e.g. 20,40")
        sp.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, cumulant.NoSteadyState, IntegrationError,
            liouville.TraceDriftError, ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
