"""Stochastic-control optimiser on R^d.

Each particle follows the Euler-Maruyama discretisation of the optimally
controlled diffusion.  At remaining time ``tau`` the feedback drift is the
softmin-weighted mean of Gaussian look-ahead samples ``x + sqrt(tau) xi``
minus ``x``, divided by ``tau``.  Outer iterations restart every particle
at a convex combination of its own terminal state and the terminal mean.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import (
    InvalidEvaluation,
    RngStream,
    RunConfig,
    as_cloud,
    as_point,
    map_chunks,
    particle_streams,
    softmin_weights,
)
from .objectives import ObjectiveSpec, get_problem

__all__ = [
    "TrajectoryRecord",
    "EuclideanResult",
    "estimate_drift",
    "euler_step",
    "run_iteration",
    "solve",
    "time_grid",
]


@dataclass
class TrajectoryRecord:
    """One outer iteration of a particle simulation.

    ``states[k]`` holds the cloud at ``times[k] = k * dt`` for
    ``k = 0..M-1`` and ``drifts[k]`` the drift applied from there; the cloud
    after the last update (at the horizon) is ``terminal``.  Both arrays are
    ``None`` when the run was made with ``record_states=False``.
    ``control_energy[i] = sum_k |theta_k|^2 dt`` and
    ``girsanov[i] = sum_k theta_k . sqrt(dt) Z_k`` are always kept.
    """

    times: np.ndarray
    states: Optional[np.ndarray]
    drifts: Optional[np.ndarray]
    terminal: np.ndarray
    control_energy: np.ndarray
    girsanov: np.ndarray
    max_drift_norm: float
    seed: int
    iteration: int
    dt: float

    @property
    def initial(self) -> np.ndarray:
        return self.states[0] if self.states is not None else None

    def snapshot(self, t: float) -> np.ndarray:
        """Cloud at grid time ``t`` (the terminal cloud for ``t`` at the horizon)."""
        if self.states is None:
            raise ValueError("trajectory was recorded without states")
        k = int(round(t / self.dt))
        if k >= len(self.times):
            return self.terminal
        return self.states[k]


class EuclideanResult(NamedTuple):
    x_star: np.ndarray
    history: list


def time_grid(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Grid times ``t_k = k dt`` and remaining times ``tau_k = (M - k) dt``.

    ``tau`` is formed from the integer count so the last step has
    ``tau == dt`` exactly.
    """
    m = cfg.time_steps
    k = np.arange(m)
    return k * cfg.dt, (m - k) * cfg.horizon / m


def _softmin_drift(values: np.ndarray, y: np.ndarray, x: np.ndarray, tau: float, epsilon: float) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise InvalidEvaluation("invalid objective evaluation at sample")
    w = softmin_weights(values, epsilon, axis=-1)
    mean = (w[..., None] * y).sum(axis=-2)
    return (mean - x) / tau


def _antithetic(xi_half: np.ndarray, s: int) -> np.ndarray:
    return np.concatenate([xi_half, -xi_half], axis=-2)[..., :s, :]


def estimate_drift(G, x, tau: float, epsilon: float, samples: int, rng: np.random.Generator | None = None,
                   *, xi: np.ndarray | None = None, antithetic: bool = False) -> np.ndarray:
    """Monte Carlo softmin drift at ``x`` with remaining time ``tau``.

    Parameters
    ----------
    G : callable or ObjectiveSpec
        Vectorised objective.
    xi : ndarray, optional
        Explicit ``(samples, d)`` standard-normal batch; drawn from ``rng``
        when omitted.
    antithetic : bool
        Use ``(xi, -xi)`` pairs.
    """
    x = as_point(x)
    if not tau > 0:
        raise ValueError("remaining time tau must be positive")
    if samples < 1:
        raise ValueError("need at least one Monte Carlo sample")
    if xi is None:
        if antithetic:
            xi = _antithetic(rng.standard_normal(((samples + 1) // 2, x.size)), samples)
        else:
            xi = rng.standard_normal((samples, x.size))
    y = x + math.sqrt(tau) * xi
    return _softmin_drift(np.asarray(G(y), dtype=float), y, x, tau, epsilon)


def euler_step(x, drift, dt: float, rng: np.random.Generator | None = None, *, noise=None) -> np.ndarray:
    """``x + drift dt + sqrt(dt) Z``; ``noise`` replaces the draw of ``Z``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    z = rng.standard_normal(x.shape) if noise is None else np.asarray(noise, dtype=float)
    return x + np.asarray(drift, dtype=float) * dt + math.sqrt(dt) * z


def _objective(G, cfg: RunConfig):
    if G is None or isinstance(G, str):
        G = get_problem(G or cfg.problem, cfg.dim)
    if isinstance(G, ObjectiveSpec):
        G.check_dim(cfg.dim)
    return G


def run_iteration(G, init_cloud, cfg: RunConfig, *, iteration: int = 0,
                  particle_ids: Sequence[int] | None = None, record_states: bool = True,
                  executor: ThreadPoolExecutor | None = None) -> TrajectoryRecord:
    """Simulate all particles from ``init_cloud`` to the horizon once."""
    G = _objective(G, cfg)
    x = as_cloud(init_cloud, cfg.dim).copy()
    n, d = x.shape
    if n != cfg.particles:
        raise ValueError(f"initial cloud has {n} particles, config says {cfg.particles}")
    ids = list(range(n)) if particle_ids is None else [int(i) for i in particle_ids]
    drift_streams = particle_streams(cfg.seed, "drift", ids)
    euler_streams = particle_streams(cfg.seed, "euler", ids)
    s, eps, dt = cfg.mc_samples, cfg.epsilon, cfg.dt
    sqdt = math.sqrt(dt)
    times, taus = time_grid(cfg)
    m = cfg.time_steps

    shared = None
    if cfg.shared_mc_batch:
        src = RngStream(cfg.seed, "shared", 0)
        half = (s + 1) // 2 if cfg.antithetic else s
        shared = src.normal((half, d), iteration, 0)
        if cfg.antithetic:
            shared = _antithetic(shared, s)

    states = np.empty((m, n, d)) if record_states else None
    drifts = np.empty((m, n, d)) if record_states else None
    energy = np.zeros(n)
    girsanov = np.zeros(n)
    max_norm = 0.0

    def draw(stream, k):
        if shared is not None:
            return shared
        if cfg.antithetic:
            return _antithetic(stream.normal(((s + 1) // 2, d), iteration, k), s)
        return stream.normal((s, d), iteration, k)

    for k in range(m):
        tau = float(taus[k])
        root = math.sqrt(tau)

        def chunk(a, b):
            xi = np.stack([draw(drift_streams[i], k) for i in range(a, b)])
            y = x[a:b, None, :] + root * xi
            theta = _softmin_drift(np.asarray(G(y), dtype=float), y, x[a:b], tau, eps)
            z = np.stack([euler_streams[i].normal(d, iteration, k) for i in range(a, b)])
            return theta, z

        parts = map_chunks(chunk, n, cfg.threads, executor)
        theta = np.concatenate([p[0] for p in parts])
        z = np.concatenate([p[1] for p in parts])
        if record_states:
            states[k] = x
            drifts[k] = theta
        energy += np.sum(theta * theta, axis=-1) * dt
        girsanov += np.sum(theta * z, axis=-1) * sqdt
        max_norm = max(max_norm, float(np.sqrt(np.max(np.sum(theta * theta, axis=-1)))))
        x = x + theta * dt + sqdt * z

    return TrajectoryRecord(times, states, drifts, x, energy, girsanov, max_norm, cfg.seed, iteration, dt)


def solve(G, cfg: RunConfig, *, init_cloud=None, particle_ids: Sequence[int] | None = None,
          record_states: bool = True) -> EuclideanResult:
    """Run ``cfg.outer_iterations`` iterations and return the terminal mean.

    Between iterations each particle restarts at
    ``coupling * mean(terminal) + (1 - coupling) * own terminal``; no
    restart follows the last iteration.
    """
    G = _objective(G, cfg)
    n, d = cfg.particles, cfg.dim
    if init_cloud is None:
        x0 = cfg.init.sample(n, d, cfg.seed, particle_ids)
    else:
        x0 = as_cloud(init_cloud, d)
    lam = cfg.coupling
    history = []
    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for it in range(cfg.outer_iterations):
            rec = run_iteration(G, x0, cfg, iteration=it, particle_ids=particle_ids,
                                record_states=record_states, executor=executor)
            history.append(rec)
            if it + 1 < cfg.outer_iterations:
                x0 = lam * rec.terminal.mean(axis=0) + (1.0 - lam) * rec.terminal
    finally:
        if executor is not None:
            executor.shutdown()
    return EuclideanResult(history[-1].terminal.mean(axis=0), history)
