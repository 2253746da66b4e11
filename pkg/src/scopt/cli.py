"""Command-line front end: ``scopt <subcommand> [options]``.

Exit codes: 0 on success, 2 for an invalid configuration (the message names
the offending key), 1 for a failure during the run.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .core import ConfigError, RunConfig
from .euclidean import solve
from .harness import (
    DEFAULT_N_GRID,
    emit_csv,
    emit_snapshots,
    emit_svg_scatter,
    epsilon_grid,
    epsilon_sweep,
    n_sweep,
    rate_fit_comparison,
)
from .measure import solve_measure
from .objectives import REGISTRY, MeasureObjectiveSpec, empirical_functional, get_problem
from .value import (
    estimate_value_controlled,
    estimate_value_euclidean,
    estimate_value_particle,
    realized_cost,
)

# (flag, RunConfig field, type)
_CONFIG_FLAGS = [
    ("--problem", "problem", str),
    ("--dim", "dim", int),
    ("--particles", "particles", int),
    ("--steps", "time_steps", int),
    ("--horizon", "horizon", float),
    ("--epsilon", "epsilon", float),
    ("--mc-samples", "mc_samples", int),
    ("--outer-iterations", "outer_iterations", int),
    ("--coupling", "coupling", float),
    ("--seed", "seed", int),
    ("--init", "init", str),
    ("--estimator", "estimator", str),
    ("--threads", "threads", int),
]
_SWITCHES = [("--shared-mc-batch", "shared_mc_batch"), ("--antithetic", "antithetic")]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    for flag, dest, typ in _CONFIG_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None)
    for flag, dest in _SWITCHES:
        p.add_argument(flag, dest=dest, action="store_const", const=True, default=None)
    p.add_argument("--output-dir", type=Path, default=Path("."))
    p.add_argument("--emit-effective-config", action="store_true",
                   help="write effective_config.json (re-usable with --config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scopt", description="Stochastic-control optimisation over R^d and measures")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list-problems", help="print registered problem ids")

    for name in ("solve", "solve-measure"):
        p = sub.add_parser(name)
        _common(p)
        p.add_argument("--dump-trajectories", action="store_true",
                       help="write particle snapshots at t = 0, T/2, T")

    p = sub.add_parser("value", help="value estimate at t = 0 from the initial condition")
    _common(p)
    p.add_argument("--value-estimator", choices=("auto", "direct", "controlled"), default="auto")
    p.add_argument("--replicates", type=int, default=1)

    p = sub.add_parser("sweep-eps")
    _common(p)
    p.add_argument("--eps-grid", default="0.005:0.2:41",
                   help="lo:hi:count (even spacing) or a comma-separated list")
    p.add_argument("--value-estimator", choices=("auto", "direct", "controlled"), default="auto")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("sweep-n")
    _common(p)
    p.add_argument("--n-grid", default=",".join(map(str, DEFAULT_N_GRID)))
    p.add_argument("--value-estimator", choices=("direct", "controlled"), default="controlled")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults < config file < flags and validate."""
    data: dict = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config", "config file must hold a JSON object")
    for _, dest, _ in _CONFIG_FLAGS:
        if getattr(args, dest) is not None:
            data[dest] = getattr(args, dest)
    for _, dest in _SWITCHES:
        if getattr(args, dest) is not None:
            data[dest] = True
    try:
        cfg = RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc
    try:
        get_problem(cfg.problem, cfg.dim)
    except (KeyError, ValueError) as exc:
        raise ConfigError("problem", str(exc).strip("'\"")) from exc
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parse_eps_grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) == 3:
        return epsilon_grid(float(parts[0]), float(parts[1]), int(parts[2]))
    return [float(v) for v in text.split(",") if v.strip()]


def _solve(cfg: RunConfig, args, measure: bool) -> dict:
    problem = get_problem(cfg.problem, cfg.dim)
    if measure != isinstance(problem, MeasureObjectiveSpec):
        kind = "a measure functional" if measure else "an objective on R^d"
        raise ConfigError("problem", f"{cfg.problem} is not {kind}")
    out: dict = {"problem": cfg.problem, "config": cfg.to_dict(), "seed": cfg.seed}
    if measure:
        res = solve_measure(problem, cfg, record_states=args.dump_trajectories)
        out["cloud"] = res.cloud.tolist()
        out["objective_value"] = float(empirical_functional(problem, res.cloud))
        out["clamped_pairs"] = res.diagnostics.clamped_pairs
        summary = f"G(mu_T) = {out['objective_value']:.6g}"
    else:
        res = solve(problem, cfg, record_states=args.dump_trajectories)
        out["x_star"] = res.x_star.tolist()
        out["objective_value"] = float(problem(res.x_star))
        summary = f"x* = {np.array2string(res.x_star, precision=5)}, G(x*) = {out['objective_value']:.6g}"
    out["realized_cost"] = realized_cost(res.history[-1], problem, cfg.epsilon)
    if args.dump_trajectories:
        for rec in res.history:
            emit_snapshots(rec, [0.0, cfg.horizon / 2, cfg.horizon],
                           args.output_dir / f"trajectory_iter{rec.iteration}.csv")
    print(f"{cfg.problem}: {summary}")
    return out


def _value(cfg: RunConfig, args) -> dict:
    problem = get_problem(cfg.problem, cfg.dim)
    measure = isinstance(problem, MeasureObjectiveSpec)
    kind = args.value_estimator
    if kind == "auto":
        kind = "controlled" if measure else "direct"
    if kind == "controlled":
        v = estimate_value_controlled(problem, cfg, args.replicates)
    else:
        rng = np.random.default_rng(cfg.seed)
        if measure:
            x0 = cfg.init.sample(cfg.particles, cfg.dim, cfg.seed)
            v = estimate_value_particle(problem, x0, 0.0, cfg.epsilon, cfg.mc_samples, rng, cfg.horizon)
        else:
            v = estimate_value_euclidean(problem, cfg.init.start_point(cfg.dim), 0.0, cfg.epsilon,
                                         cfg.mc_samples, rng, cfg.horizon)
    print(f"value estimate {v.mean!r} (stderr {v.stderr:.3g}, {v.samples_used} samples)")
    return {"problem": cfg.problem, "config": cfg.to_dict(), "seed": cfg.seed, "estimator": kind,
            "value": v.mean, "stderr": v.stderr, "samples_used": v.samples_used}


def _sweep(cfg: RunConfig, args, which: str) -> dict:
    if which == "eps":
        grid = _parse_eps_grid(args.eps_grid)
        recs = epsilon_sweep(cfg.problem, cfg, grid, estimator=args.value_estimator,
                             replicates=args.replicates, workers=args.workers)
        report = rate_fit_comparison(recs, "eps_log_inv_eps", "identity")
        transform = "eps_log_inv_eps"
    else:
        grid = [int(v) for v in args.n_grid.split(",") if v.strip()]
        recs = n_sweep(cfg.problem, cfg, grid, estimator=args.value_estimator,
                       replicates=args.replicates, workers=args.workers)
        report = rate_fit_comparison(recs, "inverse", None) if len(recs) >= 3 else None
        transform = "inverse"
    emit_csv(recs, args.output_dir / "sweep.csv")
    emit_svg_scatter(recs, transform, args.output_dir / "sweep.svg", title=f"{cfg.problem} {which}-sweep")
    if report is not None:
        print(report.summary())
    print(f"{len(recs)} sweep points written to {args.output_dir / 'sweep.csv'}")
    return {"problem": cfg.problem, "config": cfg.to_dict(), "seed": cfg.seed,
            "records": len(recs), "fit": None if report is None else report.summary()}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list-problems":
        for name in REGISTRY:
            print(name)
        return 0
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"scopt: invalid configuration ({exc.key}): {exc}", file=sys.stderr)
        return 2
    try:
        args.output_dir.mkdir(parents=True, exist_ok=True)
        if args.emit_effective_config:
            _write_json(args.output_dir / "effective_config.json", cfg.to_dict())
        t0 = time.perf_counter()
        if args.command in ("solve", "solve-measure"):
            result = _solve(cfg, args, args.command == "solve-measure")
        elif args.command == "value":
            result = _value(cfg, args)
        else:
            result = _sweep(cfg, args, "eps" if args.command == "sweep-eps" else "n")
        result["wall_ms"] = int(round((time.perf_counter() - t0) * 1000))
        _write_json(args.output_dir / "result.json", result)
    except ConfigError as exc:
        print(f"scopt: invalid configuration ({exc.key}): {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any run failure maps to exit 1
        print(f"scopt: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
