import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scopt.core import (
    ConfigError,
    InitCondition,
    InvalidEvaluation,
    RngStream,
    RunConfig,
    as_cloud,
    as_point,
    chunk_bounds,
    derive_seed,
    linear_fit,
    log_mean_exp,
    log_mean_exp_stderr,
    map_chunks,
    softmin_weights,
)

EPS_LEVELS = [1e-300, 1e-10, 1e-2, 1.0, 1e3]
finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


# softmin weights ------------------------------------------------------------

@pytest.mark.parametrize("c", [-3.5, 0.0, 1e8])
@pytest.mark.parametrize("eps", EPS_LEVELS)
def test_softmin_equal_values_uniform(c, eps):
    np.testing.assert_allclose(softmin_weights([c, c, c], eps), [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmin_degenerate_picks_argmin():
    assert softmin_weights([0.0, 5.0, 9.0], 1e-300).tolist() == [1.0, 0.0, 0.0]


def test_softmin_two_point_matches_high_precision():
    mpmath.mp.dps = 50
    w0 = 1 / (1 + mpmath.e ** -1)
    w = softmin_weights([1.0, 2.0], 1.0)
    assert w[0] == pytest.approx(float(w0), abs=1e-15)
    assert w[1] == pytest.approx(float(1 - w0), abs=1e-15)
    assert w[0] == pytest.approx(0.731058, abs=1e-6)


def test_softmin_ties_share_weight():
    assert softmin_weights([1.0, 1.0, 3.0], 1e-300).tolist() == [0.5, 0.5, 0.0]


@pytest.mark.parametrize("bad", [[1.0, np.nan], [np.inf, 0.0], [-np.inf, 0.0]])
def test_softmin_rejects_non_finite(bad):
    with pytest.raises(InvalidEvaluation, match="invalid objective evaluation"):
        softmin_weights(bad, 1.0)


def test_softmin_rejects_empty():
    with pytest.raises(ValueError):
        softmin_weights([], 1.0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.sampled_from(EPS_LEVELS))
def test_softmin_is_probability_vector(values, eps):
    w = softmin_weights(values, eps)
    assert np.all((w >= 0) & (w <= 1))
    assert abs(w.sum() - 1.0) <= 1e-12


# exact shift invariance needs v + c to be exact in floating point: dyadic
# values and integer shifts of moderate size satisfy that
dyadic = st.integers(-2**20, 2**20).map(lambda k: k / 1024.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(dyadic, min_size=1, max_size=30), st.integers(-1000, 1000), st.sampled_from(EPS_LEVELS))
def test_softmin_shift_invariance_bitwise(values, c, eps):
    v = np.array(values)
    assert np.array_equal(softmin_weights(v + c, eps), softmin_weights(v, eps))


def test_softmin_axis():
    v = np.array([[0.0, 1.0], [1.0, 0.0]])
    w = softmin_weights(v, 1.0, axis=0)
    np.testing.assert_allclose(w.sum(axis=0), [1.0, 1.0])


# log-mean-exp ---------------------------------------------------------------

@pytest.mark.parametrize("eps", EPS_LEVELS)
def test_log_mean_exp_constant_exact(eps):
    assert log_mean_exp([2.75] * 7, eps) == 2.75


def test_log_mean_exp_degenerate():
    v = log_mean_exp([0.0, 0.0, 10.0], 1e-300)
    assert v == pytest.approx(1e-300 * math.log(1.5), abs=1e-310)
    assert abs(v) < 1e-299


def test_log_mean_exp_two_point():
    mpmath.mp.dps = 50
    exact = 1 - mpmath.log((1 + mpmath.e ** -1) / 2)
    assert log_mean_exp([1.0, 2.0], 1.0) == pytest.approx(float(exact), abs=1e-14)
    assert float(exact) == pytest.approx(1.37988, abs=1e-5)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.sampled_from(EPS_LEVELS),
       st.floats(-1e3, 1e3))
def test_log_mean_exp_shift(values, eps, c):
    a = log_mean_exp(values + c, eps)
    b = log_mean_exp(values, eps) + c
    assert abs(a - b) <= 1e-12 * max(1.0, abs(b), np.abs(values).max() + abs(c))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.sampled_from(EPS_LEVELS))
def test_log_mean_exp_jensen_sandwich(values, eps):
    v = log_mean_exp(values, eps)
    tol = 1e-12 * max(1.0, np.abs(values).max())
    assert values.min() - tol <= v <= values.mean() + tol


def test_log_mean_exp_stderr_constant_zero():
    est, se = log_mean_exp_stderr([1.0] * 5, 0.1)
    assert est == 1.0 and se == 0.0


def test_log_mean_exp_stderr_delta_method():
    rng = np.random.default_rng(3)
    v = rng.normal(size=500)
    eps = 0.7
    u = np.exp(-(v - v.min()) / eps)
    expected = eps * u.std(ddof=1) / (math.sqrt(v.size) * u.mean())
    est, se = log_mean_exp_stderr(v, eps)
    assert se == pytest.approx(expected, rel=1e-12)
    assert est == pytest.approx(log_mean_exp(v, eps), rel=1e-15)


@pytest.mark.parametrize("eps", [1e-300, 1e-10, 1.0])
def test_log_mean_exp_never_nan_at_tiny_eps(eps):
    rng = np.random.default_rng(0)
    v = rng.normal(scale=1e4, size=1000)
    assert np.isfinite(log_mean_exp(v, eps))
    assert np.all(np.isfinite(softmin_weights(v, eps)))


# linear fit -----------------------------------------------------------------

def test_linear_fit_exact_line():
    f = linear_fit([1, 2, 3], [2, 4, 6])
    assert f.slope == pytest.approx(2) and f.intercept == pytest.approx(0, abs=1e-14)
    assert f.rmse == pytest.approx(0, abs=1e-14) and f.r2 == pytest.approx(1)


def test_linear_fit_constant_data():
    f = linear_fit([0, 1], [5, 5])
    assert f.slope == 0 and f.intercept == 5 and f.rmse == 0


def test_linear_fit_three_points_brute_force():
    xs, ys = np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 1.0])
    f = linear_fit(xs, ys)
    assert f.slope == pytest.approx(0.5) and f.intercept == pytest.approx(1 / 6)
    # residuals -1/6, 1/3, -1/6: mean square 1/18
    resid = ys - (0.5 * xs + 1 / 6)
    assert f.rmse == pytest.approx(math.sqrt(np.mean(resid**2)))
    assert f.rmse == pytest.approx(math.sqrt(1 / 18))
    assert f.r2 == pytest.approx(0.75)


def test_linear_fit_matches_polyfit():
    rng = np.random.default_rng(1)
    xs, ys = rng.normal(size=30), rng.normal(size=30)
    f = linear_fit(xs, ys)
    slope, intercept = np.polyfit(xs, ys, 1)
    assert f.slope == pytest.approx(slope) and f.intercept == pytest.approx(intercept)


def test_linear_fit_singular():
    with pytest.raises(ValueError, match="singular fit"):
        linear_fit([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        linear_fit([1], [1])


# points, configuration, streams ---------------------------------------------

def test_as_point_and_cloud_validation():
    assert as_point(3.0).shape == (1,)
    with pytest.raises(ValueError):
        as_point([1.0, np.nan])
    with pytest.raises(ValueError):
        as_point([1.0, 2.0], dim=3)
    assert as_cloud([[0, 0], [1, 1]], 2).shape == (2, 2)
    with pytest.raises(ValueError):
        as_cloud([[0, np.inf]])
    with pytest.raises(ValueError):
        as_cloud(np.zeros((0, 2)))


@pytest.mark.parametrize("key,value,msg", [
    ("epsilon", 0.0, "epsilon must be positive"),
    ("epsilon", -1.0, "epsilon must be positive"),
    ("epsilon", float("nan"), "epsilon must be positive"),
    ("particles", 0, "particles"),
    ("time_steps", 0, "time_steps"),
    ("coupling", 1.5, "coupling"),
    ("horizon", 0.0, "horizon"),
    ("estimator", "magic", "estimator"),
    ("seed", -1, "seed"),
])
def test_run_config_validation_names_key(key, value, msg):
    with pytest.raises(ConfigError, match=msg) as info:
        RunConfig(**{key: value})
    assert info.value.key == key


def test_run_config_accepts_denormal_epsilon():
    assert RunConfig(epsilon=5e-324).epsilon > 0


def test_run_config_round_trip():
    cfg = RunConfig(problem="spring", dim=2, init="normal:0,1", seed=9, antithetic=True)
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    with pytest.raises(ConfigError, match="unknown configuration key"):
        RunConfig.from_dict({"bogus": 1})


def test_run_config_bad_init_is_config_error():
    with pytest.raises(ConfigError) as info:
        RunConfig(init="triangle:1")
    assert info.value.key == "init"
    with pytest.raises(ConfigError):
        RunConfig(dim=2, init="fixed:1,2,3")


@pytest.mark.parametrize("text", ["fixed:2", "fixed:1.5,-2", "fixed-scalar:5", "normal:0,1", "normal:-1,0.5"])
def test_init_grammar_round_trip(text):
    ic = InitCondition.parse(text)
    assert InitCondition.parse(str(ic)) == ic


def test_init_sampling():
    ic = InitCondition.parse("fixed-scalar:5")
    assert np.array_equal(ic.sample(3, 4, seed=0), np.full((3, 4), 5.0))
    g = InitCondition.parse("normal:1,2").sample(4000, 2, seed=1)
    assert abs(g.mean() - 1) < 0.1 and abs(g.std() - 2) < 0.1


def test_dt_and_defaults():
    cfg = RunConfig()
    assert cfg.horizon == 1.0 and cfg.outer_iterations == 1 and cfg.coupling == 0.5 and cfg.seed == 0
    assert cfg.dt == 1.0 / cfg.time_steps


def test_rng_stream_is_pure_and_independent():
    a = RngStream(7, "drift", 3)
    assert np.array_equal(a.normal(5, 1, 2), RngStream(7, "drift", 3).normal(5, 1, 2))
    assert not np.array_equal(a.normal(5, 1, 2), a.normal(5, 1, 3))
    assert not np.array_equal(a.normal(5, 0, 0), RngStream(7, "drift", 4).normal(5, 0, 0))
    assert not np.array_equal(a.normal(5, 0, 0), RngStream(7, "euler", 3).normal(5, 0, 0))
    assert not np.array_equal(a.normal(5, 0, 0), RngStream(8, "drift", 3).normal(5, 0, 0))


def test_rng_streams_uncorrelated():
    x = np.concatenate([RngStream(0, "drift", i).normal(2000) for i in range(2)])
    r = np.corrcoef(x[:2000], x[2000:])[0, 1]
    assert abs(r) < 4 / math.sqrt(2000)


def test_derive_seed_deterministic():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(1, 3)
    assert 0 <= derive_seed(2**64 - 1, 5) < 2**64


@pytest.mark.parametrize("n,parts", [(1, 4), (10, 3), (7, 7), (100, 8)])
def test_chunk_bounds_cover(n, parts):
    b = chunk_bounds(n, parts)
    assert b[0][0] == 0 and b[-1][1] == n
    assert all(x[1] == y[0] for x, y in zip(b, b[1:]))


def test_map_chunks_order_independent_of_threads():
    fn = lambda a, b: list(range(a, b))  # noqa: E731
    one = sum(map_chunks(fn, 37, 1), [])
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(4) as ex:
        four = sum(map_chunks(fn, 37, 4, ex), [])
    assert one == four == list(range(37))
