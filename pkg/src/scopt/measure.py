"""Interacting N-particle optimiser over probability measures.

The cloud ``x_1..x_N`` is driven towards a minimiser of ``U(x) = N G(mu^N_x)``.
Two drift estimators are available:

``frozen``
    One projected context ``x_k + sqrt(tau) zeta_k`` is drawn per step and
    held fixed; particle ``i`` is scored by ``N G`` of the context with its
    own atom replaced by each look-ahead sample.
``joint``
    Sample ``l`` perturbs every particle at once.  For separable functionals
    particle ``i`` is scored only by the terms of ``N G`` that involve it,
    which costs ``O(N S)`` kernel sums per particle instead of ``O(N^2 S)``.

The default (``auto``) is ``joint`` for separable functionals and
``frozen`` otherwise.  Between outer iterations each particle restarts from
its own terminal state.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import RunConfig, as_cloud, map_chunks, particle_streams
from .euclidean import TrajectoryRecord, _softmin_drift, time_grid
from .objectives import Diagnostics, MeasureObjectiveSpec, batch_functional, get_problem

__all__ = [
    "ContextProjection",
    "MeasureResult",
    "project_context",
    "estimate_drift_frozen",
    "estimate_drift_joint_separable",
    "estimate_drift_joint",
    "solve_measure",
]


@dataclass(frozen=True)
class ContextProjection:
    projected: np.ndarray
    tau: float
    source_step: int


class MeasureResult(NamedTuple):
    cloud: np.ndarray
    history: list
    diagnostics: Diagnostics


def project_context(cloud, tau: float, noise, source_step: int = 0) -> ContextProjection:
    """``cloud + sqrt(tau) * noise`` as a frozen context."""
    x = as_cloud(cloud)
    if not tau > 0:
        raise ValueError("remaining time tau must be positive")
    return ContextProjection(x + math.sqrt(tau) * np.asarray(noise, dtype=float), float(tau), source_step)


def _frozen_scores(spec: MeasureObjectiveSpec, ctx: np.ndarray, i: int, y: np.ndarray,
                   diagnostics: Diagnostics | None = None) -> np.ndarray:
    """Scores ``N G(ctx with atom i -> y_j)`` for each look-ahead sample ``y_j``.

    For separable functionals the terms that do not involve atom ``i`` are
    the same for every sample and are dropped; softmin weights are
    unaffected.
    """
    n = ctx.shape[0]
    if spec.kind == "general":
        clouds = np.repeat(ctx[None], y.shape[0], axis=0)
        clouds[:, i, :] = y
        return n * batch_functional(spec, clouds)
    g = np.zeros(y.shape[0])
    if spec.confinement is not None:
        g = g + spec.confinement(y)
    if spec.kernel is not None:
        others = np.delete(ctx, i, axis=0)
        if others.shape[0]:
            out, into, clamped = spec.kernel.cross_sums(y, others)
            if diagnostics is not None:
                diagnostics.clamped_pairs += clamped
            g = g + (out + into) / (2.0 * n)
    return g


def estimate_drift_frozen(spec: MeasureObjectiveSpec, cloud, i: int, ctx: ContextProjection, epsilon: float,
                          samples: int, rng: np.random.Generator | None = None, *,
                          xi: np.ndarray | None = None) -> np.ndarray:
    """Drift of particle ``i`` against a frozen projected context."""
    x = as_cloud(cloud, spec.dim)
    if ctx.projected.shape != x.shape:
        raise ValueError("context and cloud shapes differ")
    tau = ctx.tau
    if xi is None:
        xi = rng.standard_normal((samples, spec.dim))
    y = x[i] + math.sqrt(tau) * xi
    g = _frozen_scores(spec, ctx.projected, i, y)
    return _softmin_drift(g, y, x[i], tau, epsilon)


def _joint_separable_scores(spec: MeasureObjectiveSpec, y_sn: np.ndarray, rows: tuple[int, int],
                            diagnostics_sink: list | None = None) -> np.ndarray:
    """Per-particle scores ``g[l, i]`` for ``a <= i < b`` from joint samples ``(S, N, d)``."""
    a, b = rows
    n = y_sn.shape[1]
    g = np.zeros((y_sn.shape[0], b - a))
    if spec.confinement is not None:
        g = g + spec.confinement(y_sn[:, a:b, :])
    if spec.kernel is not None:
        out, into, clamped = spec.kernel.row_sums(y_sn, rows)
        if diagnostics_sink is not None:
            diagnostics_sink.append(clamped)
        g = g + (out + into) / (2.0 * n)
    return g


def estimate_drift_joint_separable(spec: MeasureObjectiveSpec, cloud, i: int, joint_samples, epsilon: float,
                                   tau: float) -> np.ndarray:
    """Joint-sample drift of particle ``i`` for a separable functional.

    ``joint_samples`` has shape ``(N, S, d)``: row ``j`` holds the noises of
    particle ``j`` and sample ``l`` perturbs all particles together.
    """
    if spec.kind != "separable":
        raise ValueError("joint fast path requires separable functional")
    x = as_cloud(cloud, spec.dim)
    xi = np.asarray(joint_samples, dtype=float)
    y = x[:, None, :] + math.sqrt(tau) * xi
    y_sn = np.ascontiguousarray(y.transpose(1, 0, 2))
    g = _joint_separable_scores(spec, y_sn, (i, i + 1))[:, 0]
    return _softmin_drift(g, y[i], x[i], tau, epsilon)


def estimate_drift_joint(spec: MeasureObjectiveSpec, cloud, joint_samples, epsilon: float,
                         tau: float) -> np.ndarray:
    """Joint-sample drift of every particle using the full score ``N G(Y_l)``.

    Works for any functional; all particles share the weights of sample ``l``.
    Returns an ``(N, d)`` array.
    """
    x = as_cloud(cloud, spec.dim)
    n = x.shape[0]
    xi = np.asarray(joint_samples, dtype=float)
    y = x[:, None, :] + math.sqrt(tau) * xi
    scores = n * batch_functional(spec, np.ascontiguousarray(y.transpose(1, 0, 2)))
    scores = np.broadcast_to(scores, (n, scores.shape[0]))
    return _softmin_drift(scores, y, x, tau, epsilon)


def _spec(spec, cfg: RunConfig) -> MeasureObjectiveSpec:
    if spec is None or isinstance(spec, str):
        spec = get_problem(spec or cfg.problem, cfg.dim)
    if not isinstance(spec, MeasureObjectiveSpec):
        raise TypeError(f"{getattr(spec, 'id', spec)!r} is not a measure functional")
    if spec.dim != cfg.dim:
        raise ValueError(f"{spec.id} is defined on dimension {spec.dim}, config says {cfg.dim}")
    return spec


def _run_measure_iteration(spec, x0, cfg, iteration, ids, estimator, record_states, executor, diagnostics):
    x = x0.copy()
    n, d = x.shape
    s, eps, dt = cfg.mc_samples, cfg.epsilon, cfg.dt
    sqdt = math.sqrt(dt)
    drift_streams = particle_streams(cfg.seed, "drift", ids)
    euler_streams = particle_streams(cfg.seed, "euler", ids)
    context_streams = particle_streams(cfg.seed, "context", ids) if estimator == "frozen" else None
    times, taus = time_grid(cfg)
    m = cfg.time_steps
    states = np.empty((m, n, d)) if record_states else None
    drifts = np.empty((m, n, d)) if record_states else None
    energy = np.zeros(n)
    girsanov = np.zeros(n)
    max_norm = 0.0

    for k in range(m):
        tau = float(taus[k])
        root = math.sqrt(tau)
        xi = np.stack([st.normal((s, d), iteration, k) for st in drift_streams])
        y = x[:, None, :] + root * xi
        clamps: list[int] = []

        if estimator == "joint" and spec.separable:
            y_sn = np.ascontiguousarray(y.transpose(1, 0, 2))

            def chunk(a, b):
                sink: list[int] = []
                g = _joint_separable_scores(spec, y_sn, (a, b), sink)
                g = np.ascontiguousarray(g.T)
                return _softmin_drift(g, y[a:b], x[a:b], tau, eps), sum(sink)

            parts = map_chunks(chunk, n, cfg.threads, executor)
            theta = np.concatenate([p[0] for p in parts])
            clamps.append(sum(p[1] for p in parts))
        elif estimator == "joint":
            theta = estimate_drift_joint(spec, x, xi, eps, tau)
        else:
            zeta = np.stack([st.normal(d, iteration, k) for st in context_streams])
            ctx = x + root * zeta

            def chunk(a, b):
                local = Diagnostics()
                rows = [_softmin_drift(_frozen_scores(spec, ctx, i, y[i], local), y[i], x[i], tau, eps)
                        for i in range(a, b)]
                return np.array(rows), local.clamped_pairs

            parts = map_chunks(chunk, n, cfg.threads, executor)
            theta = np.concatenate([p[0] for p in parts])
            clamps.append(sum(p[1] for p in parts))

        diagnostics.merge_step(int(sum(clamps)))
        z = np.stack([st.normal(d, iteration, k) for st in euler_streams])
        if record_states:
            states[k] = x
            drifts[k] = theta
        sq = np.sum(theta * theta, axis=-1)
        energy += sq * dt
        girsanov += np.sum(theta * z, axis=-1) * sqdt
        max_norm = max(max_norm, float(np.sqrt(sq.max())))
        x = x + theta * dt + sqdt * z

    diagnostics.max_drift_norm = max(diagnostics.max_drift_norm, max_norm)
    return TrajectoryRecord(times, states, drifts, x, energy, girsanov, max_norm, cfg.seed, iteration, dt)


def solve_measure(spec, cfg: RunConfig, *, init_cloud=None, particle_ids: Sequence[int] | None = None,
                  record_states: bool = True) -> MeasureResult:
    """Approximate a minimising measure of ``spec`` by an N-particle cloud."""
    spec = _spec(spec, cfg)
    n, d = cfg.particles, cfg.dim
    ids = list(range(n)) if particle_ids is None else [int(i) for i in particle_ids]
    if len(ids) != n:
        raise ValueError("need one particle id per particle")
    x0 = cfg.init.sample(n, d, cfg.seed, ids) if init_cloud is None else as_cloud(init_cloud, d)
    if x0.shape[0] != n:
        raise ValueError(f"initial cloud has {x0.shape[0]} particles, config says {n}")
    estimator = cfg.estimator
    if estimator == "auto":
        estimator = "joint" if spec.separable else "frozen"

    diagnostics = Diagnostics()
    history = []
    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for it in range(cfg.outer_iterations):
            rec = _run_measure_iteration(spec, x0, cfg, it, ids, estimator, record_states, executor, diagnostics)
            history.append(rec)
            x0 = rec.terminal
    finally:
        if executor is not None:
            executor.shutdown()
    return MeasureResult(history[-1].terminal, history, diagnostics)
