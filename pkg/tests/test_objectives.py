import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scopt.objectives import (
    DELTA_MIN,
    REGISTRY,
    Diagnostics,
    MeasureObjectiveSpec,
    QuadraticKernel,
    RadialKernel,
    ackley,
    batch_functional,
    double_hula_hoop,
    empirical_functional,
    get_problem,
    hula_hoop_potential,
    newtonian_energy,
    spring_energy,
    yang4,
)


def brute_functional(F, phi, cloud):
    """Direct double loop over ordered pairs, diagonal excluded."""
    n = len(cloud)
    total = sum(F(x) for x in cloud) / n if F else 0.0
    if phi:
        total += sum(phi(cloud[i] - cloud[j]) for i in range(n) for j in range(n) if i != j) / (2 * n * n)
    return total


def newton_phi(r):
    # the Newtonian kernel under the 1/(2 N^2) prefactor
    return float(r @ r - 2 * math.log(math.sqrt(r @ r)))


# Euclidean objectives ---------------------------------------------------------

@pytest.mark.parametrize("d", [1, 5])
def test_yang4_origin(d):
    assert yang4(np.zeros(d)) == -1.0


def test_yang4_half_pi():
    x = math.pi / 2
    expected = (1 - math.exp(-x * x)) * math.exp(-math.sin(math.sqrt(x)) ** 2)
    assert yang4([x]) == pytest.approx(expected, rel=1e-14)
    mpmath.mp.dps = 30
    exact = (1 - mpmath.e ** -(mpmath.pi / 2) ** 2) * mpmath.e ** -mpmath.sin(mpmath.sqrt(mpmath.pi / 2)) ** 2
    assert float(exact) == pytest.approx(0.3711442, abs=1e-7)
    assert yang4([x]) == pytest.approx(float(exact), rel=1e-14)


@pytest.mark.parametrize("d", [1, 2, 20])
def test_ackley_values(d):
    assert ackley(np.zeros(d)) == 0.0
    assert ackley(np.ones(d)) == pytest.approx(20 * (1 - math.exp(-0.2)), rel=1e-13)


def test_objectives_vectorised():
    x = np.random.default_rng(0).normal(size=(4, 3, 2))
    assert yang4(x).shape == (4, 3)
    np.testing.assert_allclose(ackley(x)[1, 2], ackley(x[1, 2]))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_objectives_finite_on_boxes(d, seed):
    x = np.random.default_rng(seed).uniform(-50, 50, size=(64, d))
    assert np.all(np.isfinite(yang4(x))) and np.all(np.isfinite(ackley(x)))


@pytest.mark.parametrize("name,d", [("yang4", 1), ("yang4", 3), ("ackley", 20)])
def test_known_minimizer_exact(name, d):
    spec = get_problem(name, d)
    assert spec(spec.known_minimizer(d)) == spec.known_min_value


# measure functionals ----------------------------------------------------------

def test_spring_two_points():
    assert empirical_functional(spring_energy(2), [[0, 0], [2, 0]]) == 1.0


@pytest.mark.parametrize("spec", [spring_energy(2), spring_energy(3)])
def test_dirac_zero(spec):
    assert empirical_functional(spec, np.full((7, spec.dim), 1.5)) == 0.0


def test_spec_newtonian_pair_example():
    """The kernel |r|^2/2 - ln|r| under the 1/(2 N^2) prefactor gives 0.125 on two unit-spaced points."""
    phi = RadialKernel(lambda r2: 0.5 * r2 - 0.5 * np.log(r2), singular=True)
    spec = MeasureObjectiveSpec("pair", 2, kernel=phi)
    assert empirical_functional(spec, [[0, 0], [1, 0]]) == pytest.approx(0.125, abs=1e-15)


def test_newtonian_matches_brute_force():
    x = np.random.default_rng(2).normal(size=(9, 2))
    assert empirical_functional(newtonian_energy(), x) == pytest.approx(brute_functional(None, newton_phi, x),
                                                                       rel=1e-13)


def test_newtonian_known_min_and_disk_energy():
    spec = newtonian_energy()
    assert spec.known_min_value == 0.75
    # a fine quasi-uniform disk sample approaches 3/4
    n = 2000
    k = np.arange(n) + 0.5
    r, a = np.sqrt(k / n), k * math.pi * (3 - math.sqrt(5))
    disk = np.column_stack([r * np.cos(a), r * np.sin(a)])
    assert empirical_functional(spec, disk) == pytest.approx(0.75, abs=0.01)


def test_hula_hoop_values():
    assert hula_hoop_potential([-1.0, 0.0]) == 0.0
    assert hula_hoop_potential([0.0, 0.0]) == 4.5
    assert hula_hoop_potential([3.0, 0.0]) == 0.0
    assert double_hula_hoop().known_min_value is None


def test_hula_hoop_matches_brute_force():
    x = np.random.default_rng(3).normal(size=(6, 2)) * 2
    phi = lambda r: -math.log(math.sqrt(r @ r))  # noqa: E731
    expected = brute_functional(lambda p: float(hula_hoop_potential(p)), phi, x)
    assert empirical_functional(double_hula_hoop(), x) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("factory", [newtonian_energy, double_hula_hoop])
def test_wrong_dimension_rejected(factory):
    with pytest.raises(ValueError):
        factory(3)
    with pytest.raises(ValueError):
        empirical_functional(factory(2), np.zeros((3, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1), st.sampled_from(["spring", "newtonian2d", "hulahoop"]))
def test_permutation_invariance_bitwise(n, seed, name):
    spec = get_problem(name, 2)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    assert empirical_functional(spec, x[rng.permutation(n)]) == empirical_functional(spec, x)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_translation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    shift = rng.uniform(-10, 10, size=2)
    for spec in (spring_energy(2), newtonian_energy()):
        assert empirical_functional(spec, x + shift) == pytest.approx(empirical_functional(spec, x), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_spring_moment_identity(n, d, seed):
    """Pairwise spring energy equals m2 - |m1|^2 (brute-force verified identity)."""
    x = np.random.default_rng(seed).normal(size=(n, d)) * 3
    m1, m2 = x.mean(axis=0), np.mean(np.sum(x * x, axis=1))
    pairwise = brute_functional(None, lambda r: float(r @ r), x)
    assert pairwise == pytest.approx(m2 - m1 @ m1, abs=1e-9)
    assert empirical_functional(spring_energy(d), x) == pytest.approx(pairwise, abs=1e-9)


def test_singular_clamp_counts_and_stays_finite():
    diag = Diagnostics()
    x = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    v = empirical_functional(newtonian_energy(), x, diag)
    assert math.isfinite(v)
    assert diag.clamped_pairs == 2
    # the clamped pair contributes -2 ln(DELTA_MIN) for each ordered pair
    expected = (2 * (-2 * math.log(DELTA_MIN)) + 4 * 1.0) / 18
    assert v == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("name", ["spring", "newtonian2d", "hulahoop"])
def test_batch_matches_canonical(name):
    spec = get_problem(name, 2)
    clouds = np.random.default_rng(4).normal(size=(5, 11, 2))
    fast = batch_functional(spec, clouds)
    slow = [empirical_functional(spec, c) for c in clouds]
    np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-12)


def test_quadratic_kernel_sums_match_generic():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(3, 8, 2)) + 100.0
    quad = QuadraticKernel(1.0)
    generic = RadialKernel(lambda r2: r2)
    for rows in (None, (2, 5)):
        a = quad.row_sums(pts, rows)
        b = generic.row_sums(pts, rows)
        np.testing.assert_allclose(a[0], b[0], rtol=1e-9)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-9)
    y, others = rng.normal(size=(6, 2)), rng.normal(size=(4, 2))
    for u, v in zip(quad.cross_sums(y, others)[:2], generic.cross_sums(y, others)[:2]):
        np.testing.assert_allclose(u, v, rtol=1e-12)


def test_shifted_spec_adds_constant():
    spec = spring_energy(2)
    x = np.random.default_rng(6).normal(size=(5, 2))
    assert empirical_functional(spec.shifted(3.0), x) == pytest.approx(empirical_functional(spec, x) + 3.0)


def test_general_kind_validation():
    g = MeasureObjectiveSpec("g", 1, kind="general", general_evaluate=lambda c: float(c.var()))
    assert empirical_functional(g, [[0.0], [2.0]]) == 1.0
    with pytest.raises(ValueError):
        MeasureObjectiveSpec("bad", 1, kind="general")
    with pytest.raises(ValueError):
        MeasureObjectiveSpec("bad", 1)


def test_registry_ids():
    assert {"yang4", "ackley", "newtonian2d", "spring", "hulahoop"} <= set(REGISTRY)
    with pytest.raises(KeyError):
        get_problem("nope", 1)
