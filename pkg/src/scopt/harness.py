"""Convergence studies: epsilon and particle-number sweeps, rate fits, CSV/SVG output."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Optional, Sequence, Union
from xml.sax.saxutils import escape

import numpy as np

from .core import LinearFit, RunConfig, derive_seed, linear_fit
from .objectives import MeasureObjectiveSpec, get_problem
from .value import estimate_value_controlled, estimate_value_euclidean, estimate_value_particle

__all__ = [
    "SweepRecord",
    "FitReport",
    "TRANSFORMS",
    "epsilon_grid",
    "epsilon_sweep",
    "n_sweep",
    "rate_fit_comparison",
    "emit_csv",
    "read_csv",
    "emit_svg_scatter",
    "emit_snapshots",
    "read_snapshots",
    "DEFAULT_N_GRID",
]

CSV_HEADER = ["parameter", "estimate", "stderr", "error", "runtime_ms", "seed"]
DEFAULT_N_GRID = (10, 20, 25, 50, 100, 125, 200, 250, 400, 500, 800, 1000)


@dataclass(frozen=True)
class SweepRecord:
    parameter: float
    value_estimate: float
    stderr: float
    error: float
    runtime_ms: int
    seed: int

    def __post_init__(self):
        if not math.isfinite(self.error):
            raise ValueError("sweep error must be finite")
        if not self.parameter > 0:
            raise ValueError("sweep parameter must be positive")


def epsilon_grid(lo: float, hi: float, count: int) -> list[float]:
    """``count`` evenly spaced values on ``[lo, hi]``."""
    return [float(v) for v in np.linspace(lo, hi, count)]


def _problem(problem, cfg: RunConfig):
    if problem is None or isinstance(problem, str):
        problem = get_problem(problem or cfg.problem, cfg.dim)
    if problem.known_min_value is None:
        raise ValueError("sweep requires known minimum")
    return problem


def _estimate(problem, cfg: RunConfig, estimator: str, samples: Optional[int], replicates: int):
    measure = isinstance(problem, MeasureObjectiveSpec)
    if estimator == "auto":
        estimator = "controlled" if measure else "direct"
    if estimator == "controlled":
        return estimate_value_controlled(problem, cfg, replicates)
    if estimator != "direct":
        raise ValueError(f"unknown value estimator {estimator!r}")
    rng = np.random.default_rng(cfg.seed)
    s = samples or cfg.mc_samples
    if measure:
        x0 = cfg.init.sample(cfg.particles, cfg.dim, cfg.seed)
        return estimate_value_particle(problem, x0, 0.0, cfg.epsilon, s, rng, cfg.horizon)
    return estimate_value_euclidean(problem, cfg.init.start_point(cfg.dim), 0.0, cfg.epsilon, s, rng, cfg.horizon)


def _sweep(problem, configs: list[RunConfig], params: list[float], estimator, samples, replicates, workers,
           record_runtime=True):
    def point(k):
        cfg = configs[k]
        t0 = time.perf_counter()
        v = _estimate(problem, cfg, estimator, samples, replicates)
        ms = int(round((time.perf_counter() - t0) * 1000)) if record_runtime else 0
        return SweepRecord(params[k], v.mean, v.stderr, v.mean - problem.known_min_value, ms, cfg.seed)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(point, range(len(configs))))
    return [point(k) for k in range(len(configs))]


def epsilon_sweep(problem, cfg_base: RunConfig, eps_grid: Sequence[float], *, estimator: str = "auto",
                  samples: Optional[int] = None, replicates: int = 1, workers: int = 1,
                  record_runtime: bool = True) -> list[SweepRecord]:
    """Value error at ``t = 0`` for each regularisation level in ``eps_grid``.

    ``estimator="auto"`` uses direct Feynman-Kac sampling for objectives on
    R^d and the controlled (importance-sampled) estimator for measure
    functionals.  Point ``k`` runs with seed ``derive_seed(cfg_base.seed, k)``.
    With ``record_runtime=False`` the timing column is zero, which makes the
    emitted CSV byte-reproducible.
    """
    problem = _problem(problem, cfg_base)
    grid = [float(e) for e in eps_grid]
    if not grid:
        raise ValueError("empty epsilon grid")
    if not all(0.0 < e < math.exp(-1) for e in grid):
        raise ValueError("epsilon values must lie in (0, 1/e)")
    configs = [cfg_base.replace(epsilon=e, seed=derive_seed(cfg_base.seed, k)) for k, e in enumerate(grid)]
    return _sweep(problem, configs, grid, estimator, samples, replicates, workers, record_runtime)


def n_sweep(problem, cfg_base: RunConfig, n_grid: Sequence[int], *, estimator: str = "controlled",
            samples: Optional[int] = None, replicates: int = 1, workers: int = 1,
            record_runtime: bool = True) -> list[SweepRecord]:
    """Per-particle value error ``v^N/N - min G`` for each particle count."""
    problem = _problem(problem, cfg_base)
    if not isinstance(problem, MeasureObjectiveSpec):
        raise ValueError("particle-number sweeps need a measure functional")
    grid = [int(n) for n in n_grid]
    if not grid or min(grid) < 1:
        raise ValueError("particle grid must be non-empty and positive")
    configs = [cfg_base.replace(particles=n, seed=derive_seed(cfg_base.seed, k)) for k, n in enumerate(grid)]
    return _sweep(problem, configs, [float(n) for n in grid], estimator, samples, replicates, workers,
                  record_runtime)


# ---------------------------------------------------------------------------
# rate fits
# ---------------------------------------------------------------------------

TRANSFORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "eps_log_inv_eps": lambda p: p * np.log(1.0 / p),
    "identity": lambda p: p,
    "inverse": lambda p: 1.0 / p,
}

Transform = Union[str, Callable[[np.ndarray], np.ndarray]]


class FitReport(NamedTuple):
    transform_a: str
    fit_a: LinearFit
    transform_b: Optional[str]
    fit_b: Optional[LinearFit]
    winner: str
    excluded: tuple

    def summary(self) -> str:
        lines = [f"{self.transform_a}: slope={self.fit_a.slope:.6g} intercept={self.fit_a.intercept:.6g} "
                 f"rmse={self.fit_a.rmse:.6g} r2={self.fit_a.r2:.6f}"]
        if self.fit_b is not None:
            lines.append(f"{self.transform_b}: slope={self.fit_b.slope:.6g} intercept={self.fit_b.intercept:.6g} "
                         f"rmse={self.fit_b.rmse:.6g} r2={self.fit_b.r2:.6f}")
        lines.append(f"winner: {self.winner}")
        if self.excluded:
            lines.append("excluded parameters: " + ", ".join(f"{p:g}" for p in self.excluded))
        return "\n".join(lines)


def _transform(t: Transform) -> tuple[str, Callable]:
    if callable(t):
        return getattr(t, "__name__", "custom"), t
    try:
        return t, TRANSFORMS[t]
    except KeyError:
        raise ValueError(f"unknown transform {t!r}") from None


def rate_fit_comparison(records: Sequence[SweepRecord], transform_a: Transform = "eps_log_inv_eps",
                        transform_b: Optional[Transform] = "identity") -> FitReport:
    """Fit error against two transforms of the parameter and pick the lower RMSE.

    With the ``inverse`` (1/N) transform, single-particle records are dropped:
    their interaction sum is empty and would distort the fit.
    """
    name_a, fa = _transform(transform_a)
    name_b, fb = _transform(transform_b) if transform_b is not None else (None, None)
    excluded: tuple = ()
    recs = list(records)
    if "inverse" in (name_a, name_b):
        excluded = tuple(r.parameter for r in recs if r.parameter == 1.0)
        recs = [r for r in recs if r.parameter != 1.0]
    if len(recs) < 3:
        raise ValueError("rate fit needs at least three records")
    p = np.array([r.parameter for r in recs])
    err = np.array([r.error for r in recs])
    fit_a = linear_fit(fa(p), err)
    fit_b = linear_fit(fb(p), err) if fb is not None else None
    if fit_b is None or fit_a.rmse < fit_b.rmse:
        winner = name_a
    elif fit_b.rmse < fit_a.rmse:
        winner = name_b
    else:
        winner = "tie"
    return FitReport(name_a, fit_a, name_b, fit_b, winner, excluded)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _g17(x: float) -> str:
    return format(float(x), ".17g")


def _open_for_write(path):
    path = Path(path)
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_csv(records: Iterable[SweepRecord], path) -> None:
    """Write sweep records with 17 significant digits (lossless for doubles)."""
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([_g17(r.parameter), _g17(r.value_estimate), _g17(r.stderr), _g17(r.error),
                        int(r.runtime_ms), int(r.seed)])


def read_csv(path) -> list[SweepRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [SweepRecord(float(r["parameter"]), float(r["estimate"]), float(r["stderr"]), float(r["error"]),
                        int(r["runtime_ms"]), int(r["seed"])) for r in rows]


def emit_svg_scatter(records: Sequence[SweepRecord], transform: Transform, path, *, title: str = "",
                     width: int = 480, height: int = 360) -> None:
    """Scatter of error against ``transform(parameter)`` with its least-squares line."""
    name, f = _transform(transform)
    p = np.array([r.parameter for r in records], dtype=float)
    xs = f(p) if p.size else p
    ys = np.array([r.error for r in records], dtype=float)
    m = 50
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{m}" y="{m // 2}" width="{width - 1.5 * m:g}" height="{height - 1.5 * m:g}" '
        'fill="none" stroke="black"/>',
    ]
    if xs.size:
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        x1 = x1 if x1 > x0 else x0 + 1.0
        y1 = y1 if y1 > y0 else y0 + 1.0

        def sx(v):
            return m + (v - x0) / (x1 - x0) * (width - 1.5 * m)

        def sy(v):
            return height - m - (v - y0) / (y1 - y0) * (height - 1.5 * m)

        for a, b in zip(xs, ys):
            parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="steelblue"/>')
        if xs.size >= 2 and np.ptp(xs) > 0:
            fit = linear_fit(xs, ys)
            parts.append(
                f'<line x1="{sx(x0):.2f}" y1="{sy(fit.slope * x0 + fit.intercept):.2f}" '
                f'x2="{sx(x1):.2f}" y2="{sy(fit.slope * x1 + fit.intercept):.2f}" stroke="crimson"/>'
            )
            parts.append(f'<text x="{m + 6}" y="{m // 2 + 16}" font-size="12">'
                         f'RMSE {fit.rmse:.3g}, R2 {fit.r2:.4f}</text>')
        parts.append(f'<text x="{m}" y="{height - m + 16}" font-size="11">{x0:.4g}</text>')
        parts.append(f'<text x="{width - m}" y="{height - m + 16}" font-size="11" '
                     f'text-anchor="end">{x1:.4g}</text>')
        parts.append(f'<text x="{m - 4}" y="{height - m}" font-size="11" text-anchor="end">{y0:.3g}</text>')
        parts.append(f'<text x="{m - 4}" y="{m // 2 + 10}" font-size="11" text-anchor="end">{y1:.3g}</text>')
    parts.append(f'<text x="{width / 2:g}" y="{height - 10}" font-size="12" text-anchor="middle">'
                 f'{escape(name)}</text>')
    if title:
        parts.append(f'<text x="{width / 2:g}" y="14" font-size="13" text-anchor="middle">{escape(title)}</text>')
    parts.append("</svg>")
    with _open_for_write(path) as fh:
        fh.write("\n".join(parts) + "\n")


def emit_snapshots(record, times: Sequence[float], path) -> None:
    """Particle positions of a trajectory at the requested times, one row per particle."""
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        d = record.terminal.shape[1]
        w.writerow(["time", "particle"] + [f"x{k}" for k in range(d)])
        horizon = record.dt * len(record.times)
        for t in times:
            cloud = record.terminal if t >= horizon else record.snapshot(t)
            for i, row in enumerate(cloud):
                w.writerow([_g17(t), i] + [_g17(v) for v in row])


def read_snapshots(path) -> dict[float, np.ndarray]:
    out: dict[float, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out.setdefault(float(row[0]), []).append([float(v) for v in row[2:]])
    return {t: np.array(v) for t, v in out.items()}
