"""Monte Carlo estimates of the regularised value functions.

``estimate_value_euclidean`` and ``estimate_value_particle`` sample the
Brownian look-ahead directly and return ``-eps log E[exp(-G/eps)]``.  The
particle version needs ``exp(-N G/eps)`` to be well sampled by undirected
Gaussian clouds, which stops working once ``N`` is more than a handful.

``estimate_value_controlled`` instead samples paths of the controlled
solver and reweights them by the discrete Girsanov likelihood ratio
``exp(-sum theta.sqrt(dt) Z - 1/2 sum |theta|^2 dt)``.  For any adapted
drift this leaves ``E[exp(-U(B_T)/eps)]`` unchanged, so it estimates the
same value, with small variance when the drift is close to optimal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RunConfig, as_cloud, as_point, derive_seed, log_mean_exp_stderr
from .euclidean import TrajectoryRecord, solve
from .objectives import MeasureObjectiveSpec, batch_functional, empirical_functional, get_problem

__all__ = [
    "ValueEstimate",
    "estimate_value_euclidean",
    "estimate_value_particle",
    "estimate_value_controlled",
    "pathwise_costs",
    "realized_cost",
]


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    stderr: float
    samples_used: int

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.stderr) and self.stderr >= 0):
            raise ValueError(f"invalid value estimate {self.mean!r} +/- {self.stderr!r}")


def _remaining(t: float, horizon: float) -> float:
    if not t < horizon:
        raise ValueError("t must be smaller than the horizon")
    return horizon - t


def estimate_value_euclidean(G, x, t: float, epsilon: float, samples: int, rng: np.random.Generator,
                             horizon: float = 1.0) -> ValueEstimate:
    """``-eps log E[exp(-G(x + W_T - W_t)/eps)]`` from ``samples`` draws."""
    if samples < 2:
        raise ValueError("need at least two samples")
    x = as_point(x)
    tau = _remaining(t, horizon)
    y = x + math.sqrt(tau) * rng.standard_normal((samples, x.size))
    est, se = log_mean_exp_stderr(np.asarray(G(y), dtype=float), epsilon)
    return ValueEstimate(est, se, samples)


def estimate_value_particle(spec: MeasureObjectiveSpec, cloud, t: float, epsilon: float, samples: int,
                            rng: np.random.Generator, horizon: float = 1.0) -> ValueEstimate:
    """``(1/N) v^N(t, x)`` with every particle perturbed in each sample."""
    if samples < 2:
        raise ValueError("need at least two samples")
    x = as_cloud(cloud, spec.dim)
    n = x.shape[0]
    tau = _remaining(t, horizon)
    scores = np.empty(samples)
    block = max(1, (1 << 16) // (n * spec.dim))
    for a in range(0, samples, block):
        b = min(samples, a + block)
        y = x + math.sqrt(tau) * rng.standard_normal((b - a, n, spec.dim))
        scores[a:b] = n * batch_functional(spec, y)
    est, se = log_mean_exp_stderr(scores, epsilon)
    return ValueEstimate(est / n, se / n, samples)


def pathwise_costs(record: TrajectoryRecord, G_or_spec, epsilon: float) -> np.ndarray:
    """Girsanov-corrected path costs whose log-mean-exp estimates the value.

    Euclidean objective: one cost per particle,
    ``G(X_T) + eps * girsanov + eps/2 * control_energy``.
    Measure functional: a single cost for the whole system,
    ``N G(mu_T) + eps * sum(girsanov) + eps/2 * sum(control_energy)``.
    """
    if isinstance(G_or_spec, MeasureObjectiveSpec):
        n = record.terminal.shape[0]
        u = n * empirical_functional(G_or_spec, record.terminal)
        return np.array([u + epsilon * record.girsanov.sum() + 0.5 * epsilon * record.control_energy.sum()])
    g = np.asarray(G_or_spec(record.terminal), dtype=float)
    return g + epsilon * record.girsanov + 0.5 * epsilon * record.control_energy


def estimate_value_controlled(problem, cfg: RunConfig, replicates: int = 1) -> ValueEstimate:
    """Importance-sampled value at ``t = 0`` from controlled solver paths.

    Euclidean problems use the ``cfg.particles`` independent trajectories of
    one run as samples.  Measure problems run the N-particle system
    ``replicates`` times (seeds derived from ``cfg.seed``) and return the
    per-particle value ``v^N / N``.  A single replicate has no error
    estimate and reports ``stderr = 0``.
    """
    from .measure import solve_measure

    if isinstance(problem, str):
        problem = get_problem(problem, cfg.dim)
    run_cfg = cfg.replace(outer_iterations=1)
    if isinstance(problem, MeasureObjectiveSpec):
        if replicates < 1:
            raise ValueError("need at least one replicate")
        costs = []
        for r in range(replicates):
            seed = cfg.seed if replicates == 1 else derive_seed(cfg.seed, r)
            res = solve_measure(problem, run_cfg.replace(seed=seed), record_states=False)
            costs.append(pathwise_costs(res.history[-1], problem, cfg.epsilon)[0])
        n = cfg.particles
        est, se = log_mean_exp_stderr(np.array(costs), cfg.epsilon)
        return ValueEstimate(est / n, se / n, replicates)
    res = solve(problem, run_cfg, record_states=False)
    est, se = log_mean_exp_stderr(pathwise_costs(res.history[-1], problem, cfg.epsilon), cfg.epsilon)
    return ValueEstimate(est, se, cfg.particles)


def realized_cost(record: TrajectoryRecord, G_or_spec, epsilon: float) -> float:
    """Terminal objective plus the quadratic control penalty along ``record``.

    Euclidean: mean over particles of ``G(X_T) + eps/2 sum_k |theta_k|^2 dt``.
    Measure: ``G(mu_T) + eps/2 (1/N) sum_{i,k} |theta^i_k|^2 dt``.
    """
    penalty = 0.5 * epsilon * record.control_energy
    if isinstance(G_or_spec, MeasureObjectiveSpec):
        return float(empirical_functional(G_or_spec, record.terminal) + penalty.mean())
    g = np.asarray(G_or_spec(record.terminal), dtype=float)
    return float(np.mean(g + penalty))
