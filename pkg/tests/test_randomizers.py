import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairwise_ldp.randomizers import (
    VRAND_SIGMA_CONST,
    PrivacyBudget,
    clip,
    derive_rng,
    laplace,
    laplace_log_density,
    laplace_noise,
    randomized_response,
    randomized_response_bit,
    rr_debias,
    rr_flip_prob,
    rr_likelihood,
    sphere_abs_mean,
    vrand,
    vrand_1d_positive_prob,
    vrand_batch,
    vrand_scale,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# -- sphere constant -----------------------------------------------------------------


@pytest.mark.parametrize("d", [1, 2, 3, 8, 32])
def test_sphere_abs_mean_monte_carlo(d):
    rng = np.random.default_rng(d)
    g = rng.standard_normal((200_000, d))
    u1 = np.abs(g[:, 0]) / np.linalg.norm(g, axis=1)
    se = u1.std() / math.sqrt(u1.size)
    assert abs(u1.mean() - sphere_abs_mean(d)) <= 5 * se + 1e-12


def test_sphere_abs_mean_closed_forms():
    assert sphere_abs_mean(1) == pytest.approx(1.0)
    assert sphere_abs_mean(2) == pytest.approx(2 / math.pi)
    assert sphere_abs_mean(3) == pytest.approx(0.5)
    # large d: E|u_1| ~ sqrt(2 / (pi d))
    assert sphere_abs_mean(10_000) == pytest.approx(math.sqrt(2 / (math.pi * 10_000)), rel=1e-3)


# -- vrand ---------------------------------------------------------------------------------


@pytest.mark.parametrize("x", [-1.0, -0.3, 0.0, 0.6, 1.0])
def test_vrand_1d_closed_form(x):
    e = math.e
    assert vrand_1d_positive_prob(x, 1.0, 1.0) == pytest.approx(0.5 + x * (e - 1) / (2 * (e + 1)), abs=1e-15)
    B = vrand_scale(1, 1.0, 1.0)
    assert B == pytest.approx((e + 1) / (e - 1))
    ys = vrand_batch(np.full((100_000, 1), x), 1.0, 1.0, np.random.default_rng(5))[:, 0]
    assert set(np.unique(np.round(ys / B, 12))) <= {-1.0, 1.0}
    p_hat = np.mean(ys > 0)
    p = vrand_1d_positive_prob(x, 1.0, 1.0)
    assert abs(p_hat - p) <= 5 * math.sqrt(p * (1 - p) / ys.size)
    assert abs(ys.mean() - x) <= 5 * ys.std() / math.sqrt(ys.size)


@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0, 2.0, 5.0])
def test_vrand_1d_exact_privacy(eps):
    grid = np.linspace(-1, 1, 100)
    p = np.array([vrand_1d_positive_prob(x, 1.0, eps) for x in grid])
    for probs in (p, 1 - p):
        ratio = probs.max() / probs.min()
        assert ratio <= math.exp(eps) * (1 + 1e-12)
    # the extremes attain the bound
    assert p.max() / p.min() == pytest.approx(math.exp(eps), rel=1e-12)


def test_vrand_zero_input_symmetric():
    d, C, eps = 6, 2.0, 1.0
    T = 100_000
    Y = vrand_batch(np.zeros((T, d)), C, eps, np.random.default_rng(0))
    B = vrand_scale(d, C, eps)
    assert np.all(np.abs(Y.mean(axis=0)) <= 4 * (B / math.sqrt(d)) / math.sqrt(T))


def test_vrand_output_on_sphere_and_metadata():
    out = vrand([0.3, -0.4], 1.0, 1.0, seed=3)
    assert out.mechanism_id == "vrand"
    assert np.linalg.norm(out.vector) == pytest.approx(vrand_scale(2, 1.0, 1.0))
    assert out.sigma_bound == pytest.approx(VRAND_SIGMA_CONST)


def test_vrand_deterministic():
    a = vrand([0.1, 0.2, 0.3], 1.0, 0.7, seed=11).vector
    b = vrand([0.1, 0.2, 0.3], 1.0, 0.7, seed=11).vector
    np.testing.assert_array_equal(a, b)


def test_vrand_norm_checks():
    with pytest.raises(ValueError):
        vrand([1.1, 0.0], 1.0, 1.0, seed=0)
    with pytest.raises(ValueError):
        vrand([0.1], 1.0, 0.0, seed=0)
    # tiny floating overshoot is renormalized
    x = np.array([1.0 + 1e-12, 0.0])
    assert np.all(np.isfinite(vrand(x, 1.0, 1.0, seed=0).vector))


@pytest.mark.parametrize(
    "d, C, eps",
    [(1, 1.0, 0.5), (3, 2.0, 1.0), (8, 1.0, 2.0), (20, 0.5, 1.0), (64, 1.5, 0.5)],
)
def test_vrand_unbiased(d, C, eps):
    rng = np.random.default_rng(d)
    x = unit(rng.standard_normal(d)) * C * rng.uniform(0, 1)
    T = 50_000
    Y = vrand_batch(np.tile(x, (T, 1)), C, eps, rng)
    se = Y.std(axis=0) / math.sqrt(T)
    assert np.all(np.abs(Y.mean(axis=0) - x) <= 5 * se)


@pytest.mark.parametrize("d", [1, 2, 8, 32])
@pytest.mark.parametrize("eps", [0.5, 1.0])
def test_vrand_sub_gaussian_proxy(d, eps):
    # per-direction variance stays below (c_v C / eps)^2 for eps <= 1
    rng = np.random.default_rng(100 + d)
    C = 1.0
    T = 40_000
    worst = 0.0
    for x in (np.zeros(d), unit(rng.standard_normal(d)) * C, unit(rng.standard_normal(d)) * 0.5 * C):
        Y = vrand_batch(np.tile(x, (T, 1)), C, eps, rng)
        for theta in (unit(rng.standard_normal(d)), np.eye(d)[0], unit(x) if np.any(x) else np.eye(d)[-1]):
            worst = max(worst, np.var((Y - x) @ theta))
    assert worst <= (VRAND_SIGMA_CONST * C / eps) ** 2


def test_vrand_sigma_calibration_value():
    # d = 32, eps = 1: the analytic upper bound B^2 / d sits below c_v^2
    d, eps = 32, 1.0
    B = vrand_scale(d, 1.0, eps)
    assert B**2 / d <= VRAND_SIGMA_CONST**2
    rng = np.random.default_rng(7)
    Y = vrand_batch(np.zeros((100_000, d)), 1.0, eps, rng)
    observed = math.sqrt(np.var(Y[:, 0]))
    assert 2.3 <= observed <= VRAND_SIGMA_CONST


# -- Laplace ---------------------------------------------------------------------------


def test_laplace_moments():
    b = 2.0
    z = laplace_noise(b, 1_000_000, np.random.default_rng(0))
    assert abs(z.mean()) <= 5 * b * math.sqrt(2) / 1e3
    assert z.var() == pytest.approx(2 * b * b, rel=0.05)


def test_laplace_shifts_value_and_rejects_bad_scale():
    assert laplace(3.0, 1.0, seed=1) != 3.0
    assert laplace(3.0, 1.0, seed=1) == laplace(3.0, 1.0, seed=1)
    with pytest.raises(ValueError):
        laplace_noise(0.0)


@pytest.mark.parametrize("eps", [0.25, 1.0, 3.0])
def test_laplace_density_ratio(eps):
    delta = 2.0
    b = delta / eps
    ys = np.linspace(-20, 20, 401)
    for v0, v1 in [(0.0, delta), (-1.0, 1.0), (0.5, 0.5 - delta)]:
        log_ratio = laplace_log_density(ys, v0, b) - laplace_log_density(ys, v1, b)
        assert np.max(np.abs(log_ratio)) <= eps + 1e-12


def test_laplace_sample_cdf():
    z = laplace_noise(1.0, 200_000, np.random.default_rng(4))
    for t in (-2.0, -0.5, 0.0, 0.7, 3.0):
        cdf = 0.5 * math.exp(t) if t < 0 else 1 - 0.5 * math.exp(-t)
        assert abs(np.mean(z <= t) - cdf) <= 5 * math.sqrt(cdf * (1 - cdf) / z.size) + 1e-9


# -- randomized response ----------------------------------------------------------------------


def test_rr_large_epsilon_is_identity():
    bits = np.array([0, 1, 1, 0, 1] * 100)
    np.testing.assert_array_equal(randomized_response(bits, 50.0, np.random.default_rng(0)), bits)
    assert rr_flip_prob(50.0) < 1e-20


@pytest.mark.parametrize("eps", [0.1, 1.0, 4.0])
def test_rr_exact_ratio(eps):
    worst = max(rr_likelihood(out, 0, eps) / rr_likelihood(out, 1, eps) for out in (0, 1))
    assert worst == pytest.approx(math.exp(eps), rel=1e-12)


def test_rr_debias_concentration():
    n, ones, eps = 100_000, 30_000, 1.0
    bits = np.r_[np.ones(ones, dtype=int), np.zeros(n - ones, dtype=int)]
    reported = randomized_response(bits, eps, np.random.default_rng(2))
    p = rr_flip_prob(eps)
    est = rr_debias(reported.sum(), n, eps)
    assert abs(est - ones) <= 4 * math.sqrt(n * p * (1 - p)) / (1 - 2 * p)


def test_rr_bit_validation():
    assert randomized_response_bit(1, 40.0, seed=0) == 1
    with pytest.raises(ValueError):
        randomized_response([2], 1.0)
    with pytest.raises(ValueError):
        randomized_response([1], -1.0)


# -- clip and budgets ---------------------------------------------------------------------------


def test_clip():
    assert clip(5, 2) == 2
    assert clip(-5, 2) == -2
    assert clip(1.5, 2) == 1.5
    with pytest.raises(ValueError):
        clip(1.0, -1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(0, 1e6))
def test_clip_property(x, tau):
    y = clip(x, tau)
    assert -tau <= y <= tau
    if abs(x) <= tau:
        assert y == x


def test_privacy_budget():
    b = PrivacyBudget.split(1.0, ["proj", "yL", "a", "v"])
    assert b["a"] == 0.25
    assert math.fsum(b.allocation.values()) == 1.0
    with pytest.raises(ValueError):
        PrivacyBudget(1.0, {"a": 0.5, "b": 0.4})
    with pytest.raises(ValueError):
        PrivacyBudget(0.0)
    with pytest.raises(ValueError):
        PrivacyBudget(1.0, {"a": 1.5, "b": -0.5})


def test_derive_rng_independent_streams():
    a = derive_rng(1, "x", 0).random(4)
    b = derive_rng(1, "x", 1).random(4)
    c = derive_rng(1, "x", 0).random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, c)
    with pytest.raises(ValueError):
        derive_rng(1, -3)
