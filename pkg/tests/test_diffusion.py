import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpsds.diffusion import (
    ancestral_sample,
    build_schedule,
    ddpm_sigma,
    ddpm_step,
    estimate_x0,
    noise_sample,
)
from tpsds.oracle import GaussianMixture, MixtureDenoiser, oracle_eps, quad

from conftest import single_gaussian


class ZeroRng:
    def standard_normal(self, shape):
        return np.zeros(shape)


class ZeroDenoiser:
    def predict_eps(self, x_t, t, condition=None):
        return np.zeros_like(x_t)


def test_linear_endpoints():
    s = build_schedule("ddpm_linear", 1000)
    assert s.betas[0] == 1e-4
    assert s.betas[-1] == 2e-2
    assert s.T == 1000


def test_two_step_product():
    s = build_schedule("ddpm_linear", 2)
    assert s.alpha_bars[1] == pytest.approx((1 - 1e-4) * (1 - 2e-2), rel=1e-15)


def test_cosine_monotone_in_unit_interval(cosine_schedule):
    ab = cosine_schedule.alpha_bars
    assert np.all(np.diff(ab) < 0)
    assert np.all((ab > 0) & (ab < 1))
    assert cosine_schedule.betas.max() <= 0.999


@pytest.mark.parametrize("T", [1, 0, -3])
def test_schedule_rejects_small_T(T):
    with pytest.raises(ValueError):
        build_schedule("ddpm_linear", T)


def test_schedule_rejects_unknown_kind():
    with pytest.raises(ValueError, match="unknown schedule"):
        build_schedule("sigmoid", 100)


def test_tables_are_read_only(linear_schedule):
    with pytest.raises(ValueError):
        linear_schedule.alpha_bars[0] = 0.5


@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from(["ddpm_linear", "cosine"]), T=st.integers(2, 2000))
def test_schedule_invariants(kind, T):
    s = build_schedule(kind, T)
    assert np.all((s.betas > 0) & (s.betas < 1))
    ab = s.alpha_bars
    assert np.all(np.diff(ab) < 0)
    assert np.all((ab > 0) & (ab < 1))
    prev = np.concatenate([[1.0], ab[:-1]])
    np.testing.assert_allclose(ab / prev, s.alphas, rtol=1e-12, atol=0)
    snr = s.snr()
    assert np.all(np.diff(snr) < 0)


def test_check_t_range(linear_schedule):
    for bad in (0, 1001, -1, 2.5):
        with pytest.raises(ValueError):
            linear_schedule.check_t(bad)


def test_noise_sample_zero_noise(linear_schedule):
    x = np.array([0.3, -1.2, 4.0])
    out = noise_sample(linear_schedule, x, 400, ZeroRng())
    np.testing.assert_array_equal(out.x_t, math.sqrt(linear_schedule.alpha_bar(400)) * x)


def test_noise_sample_reconstructs(linear_schedule, rng):
    x = rng.standard_normal(5)
    out = noise_sample(linear_schedule, x, 123, rng)
    ab = linear_schedule.alpha_bar(123)
    np.testing.assert_array_equal(out.x_t, math.sqrt(ab) * x + math.sqrt(1 - ab) * out.eps)
    assert out.t == 123


def test_noise_sample_rejects_bad_input(linear_schedule, rng):
    with pytest.raises(ValueError):
        noise_sample(linear_schedule, np.zeros(2), 0, rng)
    with pytest.raises(ValueError):
        noise_sample(linear_schedule, np.array([np.nan, 1.0]), 10, rng)


def test_terminal_correlation_matches_sqrt_alpha_bar(linear_schedule, rng):
    n = 10_000
    x = rng.standard_normal(n)
    x_t = noise_sample(linear_schedule, x, linear_schedule.T, rng).x_t
    rho = np.corrcoef(x, x_t)[0, 1]
    expected = math.sqrt(linear_schedule.alpha_bar(linear_schedule.T))
    se = (1 - expected**2) / math.sqrt(n)
    assert abs(rho - expected) < 3 * se


@pytest.mark.parametrize("t", [10, 300, 900])
def test_noised_zero_variance(linear_schedule, rng, t):
    draws = np.array([noise_sample(linear_schedule, np.zeros(1), t, rng).x_t[0] for _ in range(10_000)])
    assert draws.var() == pytest.approx(1 - linear_schedule.alpha_bar(t), rel=0.05)


@settings(max_examples=60, deadline=None)
@given(t=st.integers(1, 1000), seed=st.integers(0, 2**32 - 1))
def test_round_trip(t, seed):
    s = build_schedule("ddpm_linear", 1000)
    r = np.random.default_rng(seed)
    x = r.normal(scale=3.0, size=4)
    out = noise_sample(s, x, t, r)
    np.testing.assert_allclose(estimate_x0(s, out.x_t, out.eps, t), x, rtol=1e-10, atol=1e-10 * np.abs(x).max())


def test_estimate_x0_with_zero_prediction(linear_schedule):
    x_t = np.array([1.0, -2.0])
    np.testing.assert_allclose(estimate_x0(linear_schedule, x_t, np.zeros(2), 250), x_t / math.sqrt(linear_schedule.alpha_bar(250)))


def test_tweedie_single_gaussian_numeric(linear_schedule, rng):
    mu = np.array([2.0, -1.0])
    mix = single_gaussian(mu)
    for t in (1, 100, 500, 999):
        x_t = rng.standard_normal((20, 2)) * 2
        ab = linear_schedule.alpha_bar(t)
        got = estimate_x0(linear_schedule, x_t, oracle_eps(mix, linear_schedule, x_t, t), t)
        np.testing.assert_allclose(got, math.sqrt(ab) * x_t + (1 - ab) * mu, rtol=1e-9, atol=1e-9)


def test_tweedie_single_gaussian_symbolic():
    sp = pytest.importorskip("sympy")
    x, mu, a = sp.symbols("x mu abar", positive=True)
    eps = sp.sqrt(1 - a) * (x - sp.sqrt(a) * mu)  # oracle for N(mu, 1): noised variance stays 1
    x0 = (x - sp.sqrt(1 - a) * eps) / sp.sqrt(a)
    assert sp.simplify(x0 - (sp.sqrt(a) * x + (1 - a) * mu)) == 0


def test_ddpm_step_zero_denoiser(linear_schedule):
    x = np.array([0.5, -1.0])
    out = ddpm_step(linear_schedule, x, 600, ZeroDenoiser(), sigma_rule="zero")
    np.testing.assert_allclose(out, x / math.sqrt(linear_schedule.alpha(600)), rtol=1e-15)


def test_sigma_rules(linear_schedule):
    assert ddpm_sigma(linear_schedule, 1, "sqrt_one_minus_alpha") == 0.0
    assert ddpm_sigma(linear_schedule, 500, "zero") == 0.0
    assert ddpm_sigma(linear_schedule, 500, "sqrt_one_minus_alpha") == pytest.approx(math.sqrt(linear_schedule.betas[499]), rel=1e-12)
    with pytest.raises(ValueError):
        ddpm_sigma(linear_schedule, 500, "learned")
    with pytest.raises(ValueError):
        ddpm_step(linear_schedule, np.zeros(2), 1001, ZeroDenoiser())


def test_ddpm_step_needs_rng_when_noisy(linear_schedule):
    with pytest.raises(ValueError, match="rng"):
        ddpm_step(linear_schedule, np.zeros(2), 10, ZeroDenoiser())
    # t = 1 is deterministic, so no rng needed
    ddpm_step(linear_schedule, np.zeros(2), 1, ZeroDenoiser())


def test_ancestral_quad_weights(linear_schedule):
    mix = quad()
    samples = ancestral_sample(linear_schedule, MixtureDenoiser(mix, linear_schedule), 2000, 2, np.random.default_rng(7))
    nearest = mix.mode_distances(samples).argmin(axis=1)
    frac = np.bincount(nearest, minlength=4) / 2000
    np.testing.assert_allclose(frac, mix.weights, atol=0.05)


def test_ancestral_uneven_weights(linear_schedule):
    mix = GaussianMixture([0.7, 0.3], [[3.0], [-3.0]], [0.1, 0.1])
    samples = ancestral_sample(linear_schedule, MixtureDenoiser(mix, linear_schedule), 2000, 1, np.random.default_rng(11))
    frac = np.bincount(mix.mode_distances(samples).argmin(axis=1), minlength=2) / 2000
    np.testing.assert_allclose(frac, [0.7, 0.3], atol=0.05)
