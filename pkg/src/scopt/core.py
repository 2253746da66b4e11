"""Shared types, random streams and log-domain kernels.

Points are 1-D float arrays of length ``d``; particle clouds are ``(N, d)``
arrays read as the empirical measure ``(1/N) sum_i delta_{x_i}``.  Every
softmin / log-mean-exp computation subtracts the minimum first, so the raw
factor ``exp(-G/eps)`` is never formed and ``eps`` may be as small as
``1e-300``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "InvalidEvaluation",
    "InitCondition",
    "RunConfig",
    "RngStream",
    "LinearFit",
    "as_point",
    "as_cloud",
    "softmin_weights",
    "log_mean_exp",
    "log_mean_exp_stderr",
    "linear_fit",
    "derive_seed",
]


class ConfigError(ValueError):
    """Raised for an invalid run configuration; ``key`` names the field."""

    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


class InvalidEvaluation(ValueError):
    """An objective returned NaN or infinity."""


# ---------------------------------------------------------------------------
# points and clouds
# ---------------------------------------------------------------------------

def as_point(x, dim: int | None = None) -> np.ndarray:
    """Return ``x`` as a finite 1-D float array, checking its length."""
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"a point must be a non-empty vector, got shape {p.shape}")
    if dim is not None and p.size != dim:
        raise ValueError(f"point has dimension {p.size}, expected {dim}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point has non-finite coordinates")
    return p


def as_cloud(particles, dim: int | None = None) -> np.ndarray:
    """Return ``particles`` as a finite ``(N, d)`` float array with N >= 1."""
    c = np.asarray(particles, dtype=float)
    if c.ndim == 1 and dim == 1:
        c = c[:, None]
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise ValueError(f"a particle cloud must have shape (N, d), got {c.shape}")
    if dim is not None and c.shape[1] != dim:
        raise ValueError(f"cloud has dimension {c.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cloud has non-finite coordinates")
    return c


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

_PURPOSES = {"drift": 1, "euler": 2, "context": 3, "init": 4, "shared": 5, "value": 6}


def derive_seed(master_seed: int, *path: int) -> int:
    """Child seed for an independent sub-experiment (sweep point, replicate)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class RngStream:
    """Counter-based normal stream for one (seed, purpose, particle) triple.

    The Philox key is hashed from the triple; the 256-bit counter carries
    ``(iteration, step)`` in its two high words, so each (iteration, step)
    block is a disjoint substream and no state is shared between particles
    or threads.
    """

    master_seed: int
    purpose: str
    stream_id: int = 0
    key: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.purpose not in _PURPOSES:
            raise ValueError(f"unknown stream purpose {self.purpose!r}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master seed must be a 64-bit unsigned integer")
        ss = np.random.SeedSequence(
            int(self.master_seed), spawn_key=(_PURPOSES[self.purpose], int(self.stream_id))
        )
        lo, hi = ss.generate_state(2, np.uint64)
        object.__setattr__(self, "key", int(lo) | (int(hi) << 64))

    def generator(self, iteration: int = 0, step: int = 0) -> np.random.Generator:
        bg = np.random.Philox(key=self.key, counter=[0, 0, int(iteration), int(step)])
        return np.random.Generator(bg)

    def normal(self, shape, iteration: int = 0, step: int = 0) -> np.ndarray:
        return self.generator(iteration, step).standard_normal(shape)


def particle_streams(seed: int, purpose: str, ids: Sequence[int]) -> list[RngStream]:
    return [RngStream(seed, purpose, int(i)) for i in ids]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitCondition:
    """Initial particle positions.

    ``kind`` is ``"fixed"`` (every particle at ``point``) or ``"normal"``
    (i.i.d. ``N(mean, std^2 I)``).  Text form: ``fixed:<v1,...>``,
    ``fixed-scalar:<v>`` or ``normal:<mean>,<std>``.
    """

    kind: str = "fixed"
    point: tuple[float, ...] = (0.0,)
    mean: float = 0.0
    std: float = 1.0
    broadcast: bool = True

    @classmethod
    def parse(cls, text: str) -> "InitCondition":
        kind, sep, rest = str(text).strip().partition(":")
        if not sep:
            raise ValueError(f"cannot parse initial condition {text!r}")
        try:
            vals = tuple(float(v) for v in rest.split(",") if v.strip())
        except ValueError:
            raise ValueError(f"cannot parse initial condition {text!r}") from None
        if kind == "fixed" and vals:
            return cls("fixed", point=vals, broadcast=False)
        if kind == "fixed-scalar" and len(vals) == 1:
            return cls("fixed", point=vals, broadcast=True)
        if kind == "normal" and len(vals) == 2:
            if not vals[1] >= 0:
                raise ValueError("normal initial condition needs std >= 0")
            return cls("normal", mean=vals[0], std=vals[1])
        raise ValueError(f"cannot parse initial condition {text!r}")

    def __str__(self) -> str:
        if self.kind == "normal":
            return f"normal:{self.mean!r},{self.std!r}"
        if self.broadcast:
            return f"fixed-scalar:{self.point[0]!r}"
        return "fixed:" + ",".join(repr(v) for v in self.point)

    def check(self, dim: int) -> None:
        if self.kind == "fixed" and not self.broadcast and len(self.point) != dim:
            raise ConfigError("init", f"fixed initial point has {len(self.point)} coordinates, dim is {dim}")

    def start_point(self, dim: int) -> np.ndarray:
        if self.kind != "fixed":
            return np.full(dim, self.mean)
        if self.broadcast:
            return np.full(dim, self.point[0])
        return as_point(self.point, dim)

    def sample(self, n: int, dim: int, seed: int, ids: Sequence[int] | None = None) -> np.ndarray:
        if self.kind == "fixed":
            return np.tile(self.start_point(dim), (n, 1))
        ids = range(n) if ids is None else ids
        rows = [RngStream(seed, "init", i).normal(dim) for i in ids]
        return self.mean + self.std * np.array(rows).reshape(n, dim)


_ESTIMATORS = ("auto", "frozen", "joint")


@dataclass(frozen=True)
class RunConfig:
    """Solver parameters shared by the Euclidean and measure solvers."""

    problem: str = "yang4"
    dim: int = 1
    particles: int = 20
    time_steps: int = 1000
    horizon: float = 1.0
    epsilon: float = 1e-300
    mc_samples: int = 800
    outer_iterations: int = 1
    coupling: float = 0.5
    seed: int = 0
    init: InitCondition = InitCondition()
    shared_mc_batch: bool = False
    antithetic: bool = False
    estimator: str = "auto"
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.init, str):
            try:
                object.__setattr__(self, "init", InitCondition.parse(self.init))
            except ValueError as exc:
                raise ConfigError("init", str(exc)) from None
        self.validate()

    @property
    def dt(self) -> float:
        return self.horizon / self.time_steps

    def validate(self) -> None:
        for key in ("dim", "particles", "time_steps", "mc_samples", "outer_iterations", "threads"):
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(key, f"{key} must be a positive integer")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ConfigError("horizon", "horizon must be positive")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ConfigError("epsilon", "epsilon must be positive")
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigError("coupling", "coupling must lie in [0, 1]")
        if isinstance(self.seed, bool) or not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", "seed must be a 64-bit unsigned integer")
        if self.estimator not in _ESTIMATORS:
            raise ConfigError("estimator", f"estimator must be one of {', '.join(_ESTIMATORS)}")
        if not self.dt > 0:
            raise ConfigError("time_steps", "time step horizon/time_steps underflows to zero")
        self.init.check(self.dim)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["init"] = str(self.init)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in names:
                raise ConfigError(key, f"unknown configuration key {key!r}")
        return cls(**data)


# ---------------------------------------------------------------------------
# log-domain kernels
# ---------------------------------------------------------------------------

def _shifted(values, epsilon: float, axis: int = -1):
    v = np.asarray(values, dtype=float)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("empty list of objective values")
    if not np.all(np.isfinite(v)):
        raise InvalidEvaluation("invalid objective evaluation")
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ValueError("epsilon must be positive")
    m = v.min(axis=axis, keepdims=True)
    with np.errstate(over="ignore", under="ignore"):
        u = np.exp((m - v) / epsilon)
    return m, u


def softmin_weights(values, epsilon: float, axis: int = -1) -> np.ndarray:
    """Normalised ``exp(-values/epsilon)`` weights along ``axis``.

    The minimum is subtracted first, so the largest unnormalised weight is
    exactly 1 and the denominator never underflows.

    >>> softmin_weights([0.0, 5.0, 9.0], 1e-300).tolist()
    [1.0, 0.0, 0.0]
    """
    _, u = _shifted(values, epsilon, axis)
    return u / u.sum(axis=axis, keepdims=True)


def log_mean_exp(values, epsilon: float, axis: int = -1):
    """Shift-stabilised ``-epsilon * log(mean(exp(-values/epsilon)))``."""
    m, u = _shifted(values, epsilon, axis)
    out = m - epsilon * np.log(u.mean(axis=axis, keepdims=True))
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


def log_mean_exp_stderr(values, epsilon: float) -> tuple[float, float]:
    """1-D log-mean-exp with a delta-method standard error."""
    m, u = _shifted(values, epsilon)
    u = u.ravel()
    mu = u.mean()
    est = float(m.ravel()[0] - epsilon * np.log(mu))
    if u.size < 2:
        return est, 0.0
    se = epsilon * u.std(ddof=1) / (math.sqrt(u.size) * mu)
    return est, float(se)


class LinearFit(NamedTuple):
    slope: float
    intercept: float
    rmse: float
    r2: float


def linear_fit(xs, ys) -> LinearFit:
    """Ordinary least squares ``y = slope * x + intercept``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.ndim != 1 or x.shape != y.shape or x.size < 2:
        raise ValueError("linear_fit needs two equal-length vectors of length >= 2")
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    if sxx == 0.0:
        raise ValueError("singular fit")
    yc = y - y.mean()
    slope = float(np.dot(xc, yc)) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(yc, yc))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(slope, intercept, math.sqrt(ss_res / x.size), r2)


# ---------------------------------------------------------------------------
# particle-parallel helper
# ---------------------------------------------------------------------------

def chunk_bounds(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(int(parts), n))
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_chunks(fn, n: int, threads: int, executor=None) -> list:
    """Apply ``fn(a, b)`` to contiguous index ranges covering ``range(n)``.

    Results come back in index order, so callers that compute each row
    independently get identical output for every thread count.
    """
    bounds = chunk_bounds(n, threads)
    if executor is None or len(bounds) == 1:
        return [fn(a, b) for a, b in bounds]
    return list(executor.map(lambda ab: fn(*ab), bounds))
