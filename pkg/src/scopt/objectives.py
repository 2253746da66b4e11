"""Benchmark objectives on R^d and functionals on particle clouds.

Euclidean objectives are vectorised: they take an array of shape ``(..., d)``
and return shape ``(...)``.  Measure functionals come in two kinds:

* ``general``: an arbitrary callable on an ``(N, d)`` cloud;
* ``separable``: ``G(mu) = int F dmu + 1/2 iint Phi(x - y) dmu dmu`` whose
  empirical version is ``(1/N) sum F(x_i) + 1/(2N^2) sum_{i != j} Phi(x_i - x_j)``.

Self pairs are left out of the double sum; with logarithmic kernels they
would make every empirical energy infinite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import as_cloud

__all__ = [
    "DELTA_MIN",
    "Diagnostics",
    "ObjectiveSpec",
    "MeasureObjectiveSpec",
    "PairKernel",
    "RadialKernel",
    "QuadraticKernel",
    "yang4",
    "ackley",
    "hula_hoop_potential",
    "empirical_functional",
    "newtonian_energy",
    "spring_energy",
    "double_hula_hoop",
    "REGISTRY",
    "get_problem",
]

DELTA_MIN = 1e-12
_DELTA_MIN_SQ = DELTA_MIN * DELTA_MIN

# Largest block of pair terms materialised at once.
_BLOCK_ELEMS = 1 << 21


@dataclass
class Diagnostics:
    """Counters collected while evaluating singular interaction kernels."""

    clamped_pairs: int = 0
    evaluations: int = 0
    steps: int = 0
    steps_with_clamp: int = 0
    max_drift_norm: float = 0.0

    def merge_step(self, clamped: int) -> None:
        self.steps += 1
        self.clamped_pairs += clamped
        if clamped:
            self.steps_with_clamp += 1


# ---------------------------------------------------------------------------
# Euclidean benchmarks
# ---------------------------------------------------------------------------

def yang4(x) -> np.ndarray:
    """Xin-She Yang function no. 4; minimum -1 at the origin."""
    x = np.asarray(x, dtype=float)
    s = np.sum(np.sin(x) ** 2, axis=-1)
    e = np.exp(-np.sum(x * x, axis=-1))
    r = np.sum(np.sin(np.sqrt(np.abs(x))) ** 2, axis=-1)
    return (s - e) * np.exp(-r)


def ackley(x) -> np.ndarray:
    """Ackley function (a=20, b=0.2, c=2*pi); minimum 0 at the origin."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    rms = np.sqrt(np.sum(x * x, axis=-1) / d)
    cos_mean = np.sum(np.cos(2.0 * np.pi * x), axis=-1) / d
    # grouped so that both brackets vanish exactly at the origin
    return (20.0 - 20.0 * np.exp(-0.2 * rms)) + (math.e - np.exp(cos_mean))


@dataclass(frozen=True)
class ObjectiveSpec:
    id: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    dim: Optional[int] = None  # None means any dimension
    known_min_value: Optional[float] = None
    minimizer: Optional[Callable[[int], np.ndarray]] = None

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)

    def known_minimizer(self, dim: int | None = None) -> Optional[np.ndarray]:
        if self.minimizer is None:
            return None
        return self.minimizer(self.dim if dim is None else dim)

    def check_dim(self, dim: int) -> None:
        if self.dim is not None and dim != self.dim:
            raise ValueError(f"{self.id} is defined on dimension {self.dim}, got {dim}")


# ---------------------------------------------------------------------------
# pair kernels
# ---------------------------------------------------------------------------

class PairKernel:
    """Interaction kernel ``Phi`` applied to difference vectors ``x - y``.

    Subclasses override :meth:`row_sums` when they have a faster route.
    A general kernel need not be symmetric.
    """

    singular = False
    symmetric = False

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], symmetric: bool = False):
        self._func = func
        self.symmetric = symmetric

    def __call__(self, diff) -> np.ndarray:
        return self._func(np.asarray(diff, dtype=float))

    def pair_values(self, diff: np.ndarray) -> tuple[np.ndarray, int]:
        return self(diff), 0

    def row_sums(self, points: np.ndarray, rows: tuple[int, int] | None = None):
        """Per-atom interaction sums over the other atoms.

        ``points`` has shape ``(..., N, d)``.  Returns ``(out, into, n)``
        with ``out[..., i] = sum_{j != i} Phi(p_i - p_j)``,
        ``into[..., i] = sum_{j != i} Phi(p_j - p_i)`` and ``n`` the number
        of clamped pair distances.  ``rows=(a, b)`` restricts ``i`` to
        ``a <= i < b``; each row is computed the same way whatever the range.
        """
        p = np.asarray(points, dtype=float)
        n = p.shape[-2]
        lo, hi = (0, n) if rows is None else rows
        lead = p.shape[:-2]
        out = np.empty(lead + (hi - lo,))
        into = out if self.symmetric else np.empty(lead + (hi - lo,))
        per_row = max(1, int(np.prod(lead, dtype=np.int64)) * n * p.shape[-1])
        block = max(1, _BLOCK_ELEMS // per_row)
        clamped = 0
        for a in range(lo, hi, block):
            b = min(hi, a + block)
            rows_ab = p[..., a:b, None, :]
            vals, c = self.pair_values(rows_ab - p[..., None, :, :])
            clamped += c
            _zero_diagonal(vals, a, b)
            out[..., a - lo:b - lo] = vals.sum(axis=-1)
            if not self.symmetric:
                vin, _ = self.pair_values(p[..., None, :, :] - rows_ab)
                _zero_diagonal(vin, a, b)
                into[..., a - lo:b - lo] = vin.sum(axis=-1)
        return out, into, clamped - _self_pairs(self, lead, hi - lo)

    def cross_sums(self, y: np.ndarray, others: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
        """``sum_k Phi(y - o_k)`` and ``sum_k Phi(o_k - y)`` for each row of ``y``.

        ``y`` is ``(S, d)``, ``others`` is ``(K, d)``.
        """
        diff = y[:, None, :] - others[None, :, :]
        out, c = self.pair_values(diff)
        if self.symmetric:
            s = out.sum(axis=-1)
            return s, s, c
        into, _ = self.pair_values(-diff)
        return out.sum(axis=-1), into.sum(axis=-1), c


def _zero_diagonal(vals: np.ndarray, a: int, b: int) -> None:
    idx = np.arange(b - a)
    vals[..., idx, idx + a] = 0.0


def _self_pairs(kernel: PairKernel, lead: tuple, n: int) -> int:
    # diagonal distances are zero and get clamped, but they are not real pairs
    if not kernel.singular:
        return 0
    return int(np.prod(lead, dtype=np.int64)) * n


class RadialKernel(PairKernel):
    """Kernel depending on ``|r|^2`` only; symmetric by construction.

    ``profile`` maps squared distances to kernel values.  For singular
    profiles squared distances are clamped below at ``DELTA_MIN**2``.
    """

    symmetric = True

    def __init__(self, profile: Callable[[np.ndarray], np.ndarray], singular: bool = False):
        self.profile = profile
        self.singular = singular

    def __call__(self, diff) -> np.ndarray:
        diff = np.asarray(diff, dtype=float)
        return self.pair_values(diff)[0]

    def pair_values(self, diff: np.ndarray) -> tuple[np.ndarray, int]:
        r2 = np.einsum("...k,...k->...", diff, diff)
        clamped = 0
        if self.singular:
            low = r2 < _DELTA_MIN_SQ
            clamped = int(np.count_nonzero(low))
            if clamped:
                r2 = np.where(low, _DELTA_MIN_SQ, r2)
        return self.profile(r2), clamped


class QuadraticKernel(RadialKernel):
    """``Phi(r) = scale * |r|^2`` with O(N) row sums via first and second moments."""

    def __init__(self, scale: float = 1.0):
        super().__init__(lambda r2: scale * r2)
        self.scale = scale

    def row_sums(self, points, rows=None):
        p = np.asarray(points, dtype=float)
        n = p.shape[-2]
        p = p - p.mean(axis=-2, keepdims=True)
        sq = np.sum(p * p, axis=-1)
        m1 = p.sum(axis=-2, keepdims=True)
        m2 = sq.sum(axis=-1, keepdims=True)
        # sum_j |p_i - p_j|^2 = n|p_i|^2 - 2 p_i . sum_j p_j + sum_j |p_j|^2
        s = n * sq - 2.0 * np.sum(p * m1, axis=-1) + m2
        s = self.scale * np.maximum(s, 0.0)
        if rows is not None:
            s = s[..., rows[0]:rows[1]]
        return s, s, 0

    def cross_sums(self, y, others):
        k = others.shape[0]
        c = others.mean(axis=0)
        y = y - c
        o = others - c
        sq = np.sum(y * y, axis=-1)
        s = k * sq - 2.0 * (y * o.sum(axis=0)).sum(axis=-1) + np.sum(o * o)
        s = self.scale * np.maximum(s, 0.0)
        return s, s, 0


# ---------------------------------------------------------------------------
# measure functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureObjectiveSpec:
    id: str
    dim: int
    kind: str = "separable"
    general_evaluate: Optional[Callable[[np.ndarray], float]] = None
    confinement: Optional[Callable[[np.ndarray], np.ndarray]] = None
    kernel: Optional[PairKernel] = None
    known_min_value: Optional[float] = None
    offset: float = 0.0
    description: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind == "general":
            if self.general_evaluate is None or self.confinement is not None or self.kernel is not None:
                raise ValueError("a general functional needs general_evaluate and nothing else")
        elif self.kind == "separable":
            if self.general_evaluate is not None or (self.confinement is None and self.kernel is None):
                raise ValueError("a separable functional needs a confinement and/or a kernel")
        else:
            raise ValueError(f"unknown functional kind {self.kind!r}")

    @property
    def separable(self) -> bool:
        return self.kind == "separable"

    @property
    def interacting(self) -> bool:
        return self.kernel is not None

    def shifted(self, c: float) -> "MeasureObjectiveSpec":
        """The same functional plus the constant ``c``."""
        from dataclasses import replace

        if self.kind == "general":
            g = self.general_evaluate
            return replace(self, general_evaluate=lambda cloud: g(cloud) + c)
        return replace(self, offset=self.offset + c)

    def __call__(self, cloud) -> float:
        return empirical_functional(self, cloud)


def empirical_functional(spec: MeasureObjectiveSpec, cloud, diagnostics: Diagnostics | None = None) -> float:
    """Value of ``spec`` on the empirical measure of ``cloud``."""
    x = as_cloud(cloud, spec.dim)
    if spec.kind == "general":
        return float(spec.general_evaluate(x))
    n = x.shape[0]
    total = 0.0
    # every partial sum runs over sorted terms, so reordering the particles
    # cannot change a single bit of the result
    if spec.confinement is not None:
        total += np.sort(spec.confinement(x)).sum() / n
    if spec.kernel is not None:
        rows = np.empty(n)
        block = max(1, _BLOCK_ELEMS // (n * x.shape[1]))
        clamped = 0
        for a in range(0, n, block):
            b = min(n, a + block)
            vals, c = spec.kernel.pair_values(x[a:b, None, :] - x[None, :, :])
            clamped += c
            _zero_diagonal(vals, a, b)
            rows[a:b] = np.sort(vals, axis=-1).sum(axis=-1)
        clamped -= _self_pairs(spec.kernel, (), n)
        if diagnostics is not None:
            diagnostics.clamped_pairs += clamped
            diagnostics.evaluations += 1
        total += np.sort(rows).sum() / (2.0 * n * n)
    return float(total + spec.offset)


def batch_functional(spec: MeasureObjectiveSpec, clouds: np.ndarray, diagnostics: Diagnostics | None = None):
    """Separable functional on a stack of clouds ``(..., N, d)``; fast, order-dependent sums."""
    if spec.kind == "general":
        flat = clouds.reshape((-1,) + clouds.shape[-2:])
        vals = np.array([spec.general_evaluate(c) for c in flat], dtype=float)
        return vals.reshape(clouds.shape[:-2])
    n = clouds.shape[-2]
    total = np.zeros(clouds.shape[:-2])
    if spec.confinement is not None:
        total = total + spec.confinement(clouds).sum(axis=-1) / n
    if spec.kernel is not None:
        out, _, clamped = spec.kernel.row_sums(clouds)
        if diagnostics is not None:
            diagnostics.clamped_pairs += clamped
            diagnostics.evaluations += 1
        total = total + out.sum(axis=-1) / (2.0 * n * n)
    return total + spec.offset


def _newtonian_profile(r2):
    # 2 * (|r|^2/2 - ln|r|) under the 1/2 prefactor of the separable form
    return r2 - np.log(r2)


def newtonian_energy(dim: int = 2) -> MeasureObjectiveSpec:
    """Newtonian swarm energy ``iint (|x-y|^2/2 - ln|x-y|) dmu dmu`` in 2-D.

    The minimiser is the uniform measure on the unit disk, energy 3/4.
    """
    if dim != 2:
        raise ValueError("the Newtonian swarm is defined in dimension 2")
    return MeasureObjectiveSpec(
        "newtonian2d", 2, kernel=RadialKernel(_newtonian_profile, singular=True),
        known_min_value=0.75, description="2-D Newtonian swarm (circle law)",
    )


def spring_energy(dim: int = 2) -> MeasureObjectiveSpec:
    """``1/2 iint |x-y|^2 dmu dmu``; minimised (value 0) by any Dirac mass."""
    if dim < 1:
        raise ValueError("dimension must be positive")
    return MeasureObjectiveSpec(
        "spring", dim, kernel=QuadraticKernel(1.0), known_min_value=0.0,
        description="spring swarm",
    )


HOOP_CENTERS = np.array([[-2.0, 0.0], [2.0, 0.0]])
HOOP_RADIUS = 1.0


def hula_hoop_potential(x) -> np.ndarray:
    """Two-well confinement ``min_c (|x - c|^2 - R^2)^2 / 2``."""
    x = np.asarray(x, dtype=float)
    wells = [
        0.5 * (np.sum((x - c) ** 2, axis=-1) - HOOP_RADIUS**2) ** 2 for c in HOOP_CENTERS
    ]
    return np.minimum(*wells)


def _log_repulsion(r2):
    return -0.5 * np.log(r2)


def double_hula_hoop(dim: int = 2) -> MeasureObjectiveSpec:
    """Two-hoop confinement with logarithmic repulsion ``Phi(r) = -ln|r|``."""
    if dim != 2:
        raise ValueError("the double hula hoop is defined in dimension 2")
    return MeasureObjectiveSpec(
        "hulahoop", 2, confinement=hula_hoop_potential,
        kernel=RadialKernel(_log_repulsion, singular=True),
        description="double hula hoop",
    )


def constant_objective(value: float = 1.0) -> ObjectiveSpec:
    return ObjectiveSpec(
        "constant", lambda x: np.full(np.shape(x)[:-1], value, dtype=float),
        known_min_value=value, minimizer=lambda d: np.zeros(d),
    )


REGISTRY: dict[str, Callable[..., object]] = {
    "yang4": lambda dim=1: ObjectiveSpec("yang4", yang4, None, -1.0, lambda d: np.zeros(d)),
    "ackley": lambda dim=20: ObjectiveSpec("ackley", ackley, None, 0.0, lambda d: np.zeros(d)),
    "newtonian2d": newtonian_energy,
    "spring": spring_energy,
    "hulahoop": double_hula_hoop,
    "constant": lambda dim=1: constant_objective(1.0),
}


def get_problem(name: str, dim: int):
    """Look up a registered problem and check it supports ``dim``."""
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(REGISTRY)}") from None
    spec = factory(dim)
    if isinstance(spec, ObjectiveSpec):
        spec.check_dim(dim)
    return spec
