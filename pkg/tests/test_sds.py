import math

import numpy as np
import pytest

from tpsds.oracle import MixtureDenoiser, bimodal_far, oracle_eps
from tpsds.scheduling import build_sampler
from tpsds.sds import (
    DivergenceError,
    SdsConfig,
    draw_noised,
    gradient_variance_sweep,
    optimize,
    sds_gradient,
    sds_gradient_samples,
    sds_loss_x0,
    sds_weight,
    x0_regression,
)

from conftest import single_gaussian


class TrueNoiseDenoiser:
    """Returns exactly the noise that produced x_t from a known clean point."""

    def __init__(self, schedule, x):
        self.schedule, self.x = schedule, np.asarray(x, dtype=float)

    def predict_eps(self, x_t, t, condition=None):
        ab = self.schedule.alpha_bar(t)
        return (x_t - math.sqrt(ab) * self.x) / math.sqrt(1 - ab)


class NanAt:
    def __init__(self, inner, t_bad):
        self.inner, self.t_bad = inner, t_bad

    def predict_eps(self, x_t, t, condition=None):
        out = self.inner.predict_eps(x_t, t, condition)
        return out * np.nan if t <= self.t_bad else out


@pytest.mark.parametrize(
    "kwargs",
    [dict(lr=0), dict(lr=-1), dict(N=0), dict(grad_samples=0), dict(w_rule="snr"), dict(N=2.5)],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SdsConfig(**kwargs)


def test_weight_rules(linear_schedule):
    assert sds_weight(linear_schedule, 10, "one") == 1.0
    ab = linear_schedule.alpha_bar(700)
    assert sds_weight(linear_schedule, 700, "sqrt_inv_snr") == pytest.approx(math.sqrt((1 - ab) / ab), rel=1e-15)


@pytest.mark.parametrize("w_rule", ["one", "sqrt_inv_snr"])
def test_expected_gradient_closed_form(linear_schedule, unit_gaussian_denoiser, w_rule):
    den, mu = unit_gaussian_denoiser
    r = np.random.default_rng(41)
    n = 100_000
    for _ in range(5):
        theta = r.normal(scale=2.0, size=3)
        t = int(r.integers(20, 981))
        g = sds_gradient_samples(linear_schedule, den, theta, t, n, r, w_rule)
        ab = linear_schedule.alpha_bar(t)
        expected = sds_weight(linear_schedule, t, w_rule) * math.sqrt(ab * (1 - ab)) * (theta - mu)
        se = g.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(g.mean(axis=0) - expected) < 3 * se), (t, theta)


@pytest.mark.parametrize("t", [50, 400, 850])
def test_gradient_variance_is_alpha_bar_squared(linear_schedule, unit_gaussian_denoiser, t):
    den, _ = unit_gaussian_denoiser
    g = sds_gradient_samples(linear_schedule, den, np.array([0.3, 0.0, -1.0]), t, 100_000, np.random.default_rng(t))
    np.testing.assert_allclose(g.var(axis=0, ddof=1), linear_schedule.alpha_bar(t) ** 2, rtol=0.05)


def test_zero_mean_at_the_mode(linear_schedule, unit_gaussian_denoiser):
    den, mu = unit_gaussian_denoiser
    n = 100_000
    for t in (10, 500, 990):
        g = sds_gradient_samples(linear_schedule, den, mu, t, n, np.random.default_rng(t))
        se = g.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(g.mean(axis=0)) < 3 * se)


def test_sds_gradient_averages_samples(linear_schedule, bimodal):
    den = MixtureDenoiser(bimodal, linear_schedule)
    cfg = SdsConfig(grad_samples=16)
    theta = np.array([1.0, 0.5])
    g = sds_gradient(linear_schedule, den, theta, 300, cfg, np.random.default_rng(5))
    ref = sds_gradient_samples(linear_schedule, den, theta, 300, 16, np.random.default_rng(5)).mean(axis=0)
    np.testing.assert_array_equal(g, ref)


def test_sds_gradient_divergence(linear_schedule, bimodal):
    den = NanAt(MixtureDenoiser(bimodal, linear_schedule), 1000)
    with pytest.raises(DivergenceError) as info:
        sds_gradient(linear_schedule, den, np.zeros(2), 42, SdsConfig(), np.random.default_rng(0), i=7)
    assert (info.value.i, info.value.t) == (7, 42)
    assert math.isnan(info.value.grad_norm)


def test_x0_loss_zero_with_true_noise(linear_schedule, rng):
    theta = np.array([0.4, -2.0])
    den = TrueNoiseDenoiser(linear_schedule, theta)
    for t in (1, 500, 1000):
        assert sds_loss_x0(linear_schedule, den, theta, t, rng) == pytest.approx(0.0, abs=1e-18 + 1e-20 / linear_schedule.alpha_bar(t))


def test_x0_loss_gradient_finite_difference(linear_schedule, bimodal, rng):
    den = MixtureDenoiser(bimodal, linear_schedule)
    theta = np.array([1.3, -0.4])
    for t in (5, 200, 600):
        draw = draw_noised(linear_schedule, den, theta, t, 1, rng)
        _, grad = x0_regression(linear_schedule, theta, draw, t)
        x0_hat = theta - grad
        h = 1e-6
        fd = np.array([
            (0.5 * np.sum((theta + h * e - x0_hat) ** 2) - 0.5 * np.sum((theta - h * e - x0_hat) ** 2)) / (2 * h)
            for e in np.eye(2)
        ])
        np.testing.assert_allclose(fd, grad, atol=1e-5)


def test_x0_form_is_rescaled_sds(linear_schedule, bimodal):
    den = MixtureDenoiser(bimodal, linear_schedule)
    r = np.random.default_rng(8)
    for _ in range(50):
        theta = r.normal(scale=3.0, size=2)
        t = int(r.integers(1, 1001))
        draw = draw_noised(linear_schedule, den, theta, t, 1, r)
        _, x0_grad = x0_regression(linear_schedule, theta, draw, t)
        eq2 = draw.eps_pred[0] - draw.eps[0]
        ab = linear_schedule.alpha_bar(t)
        np.testing.assert_allclose(x0_grad, math.sqrt((1 - ab) / ab) * eq2, rtol=1e-8)


def test_single_step_is_one_gradient_application(linear_schedule, bimodal):
    den = MixtureDenoiser(bimodal, linear_schedule)
    sampler = build_sampler("uniform_random", linear_schedule)
    cfg = SdsConfig(N=1, lr=0.05, seed=123)
    theta0 = np.array([0.2, 0.1])
    theta1, rec = optimize(linear_schedule, den, sampler, theta0, cfg)

    r = np.random.default_rng(123)
    t = sampler.timestep(1, 1, r)
    g = sds_gradient(linear_schedule, den, theta0, t, cfg, r)
    np.testing.assert_array_equal(theta1, theta0 - 0.05 * g)
    assert rec.t.tolist() == [t] and len(rec) == 1 and rec.completed


def test_optimize_is_deterministic(linear_schedule, bimodal):
    den = MixtureDenoiser(bimodal, linear_schedule)
    for kind in ("uniform_random", "tp", "two_stage"):
        sampler = build_sampler(kind, linear_schedule)
        cfg = SdsConfig(N=300, seed=9, grad_samples=2)
        a = optimize(linear_schedule, den, sampler, np.zeros(2), cfg)[1]
        b = optimize(linear_schedule, den, sampler, np.zeros(2), cfg)[1]
        for field in ("t", "grad_norm", "grad_variance", "x0_loss", "thetas"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))


def test_trajectory_shape(linear_schedule, bimodal):
    den = MixtureDenoiser(bimodal, linear_schedule)
    theta, rec = optimize(linear_schedule, den, build_sampler("tp", linear_schedule), np.zeros(2), SdsConfig(N=200))
    assert len(rec) == 200 and rec.completed
    assert np.all(np.diff(rec.i) == 1) and rec.i[0] == 1
    np.testing.assert_array_equal(rec.final_theta, theta)
    assert np.all(np.isnan(rec.grad_variance))  # one draw per step
    assert rec.mode_distances(bimodal.means).shape == (200, 2)


def test_optimize_aborts_on_divergence(linear_schedule, bimodal):
    den = NanAt(MixtureDenoiser(bimodal, linear_schedule), t_bad=100)
    sampler = build_sampler("linear", linear_schedule)
    with pytest.raises(DivergenceError) as info:
        optimize(linear_schedule, den, sampler, np.zeros(2), SdsConfig(N=1000))
    err = info.value
    assert err.t <= 100
    assert len(err.trajectory) == err.i - 1 and not err.trajectory.completed
    assert np.all(np.isfinite(err.trajectory.thetas))


def test_large_step_diverges(linear_schedule, bimodal):
    sampler = build_sampler("constant", linear_schedule, t_fixed=100)
    with pytest.raises(DivergenceError):
        optimize(linear_schedule, MixtureDenoiser(bimodal, linear_schedule), sampler, np.array([1.0, 0.0]), SdsConfig(N=2000, lr=50.0))


def test_optimize_rejects_mismatched_T(linear_schedule, bimodal):
    from tpsds.diffusion import build_schedule

    short = build_schedule("ddpm_linear", 100)
    with pytest.raises(ValueError, match="T="):
        optimize(linear_schedule, MixtureDenoiser(bimodal, linear_schedule), build_sampler("linear", short), np.zeros(2), SdsConfig(N=5))


def test_mode_is_a_fixed_point(linear_schedule):
    mu = np.array([1.0, -2.0])
    den = MixtureDenoiser(single_gaussian(mu), linear_schedule)
    sampler = build_sampler("uniform_random", linear_schedule)
    lr = 0.01
    worst = 0.0
    for seed in range(50):
        theta, _ = optimize(linear_schedule, den, sampler, mu, SdsConfig(N=100, lr=lr, grad_samples=64, seed=seed))
        worst = max(worst, float(np.linalg.norm(theta - mu)))
    assert worst < lr * math.sqrt(2) * 3


def test_variance_sweep(linear_schedule, unit_gaussian_denoiser):
    den, _ = unit_gaussian_denoiser
    ts = [50, 250, 500, 750, 950]
    sweep = gradient_variance_sweep(linear_schedule, den, np.array([0.5, 1.0, -0.2]), ts, 20_000, np.random.default_rng(2))
    assert np.all(sweep.trace >= 0)
    assert np.all(np.diff(sweep.per_dim) <= 0)
    assert sweep.per_dim[0] > sweep.per_dim[-1]
    np.testing.assert_allclose(sweep.per_dim, linear_schedule.alpha_bars[np.array(ts) - 1] ** 2, rtol=0.05)


def test_variance_at_T_is_small(linear_schedule, unit_gaussian_denoiser):
    den, _ = unit_gaussian_denoiser
    sweep = gradient_variance_sweep(linear_schedule, den, np.zeros(3), [1000], 1000, np.random.default_rng(3))
    assert sweep.per_dim[0] < 0.05


def test_variance_sweep_needs_two_samples(linear_schedule, unit_gaussian_denoiser):
    with pytest.raises(ValueError):
        gradient_variance_sweep(linear_schedule, unit_gaussian_denoiser[0], np.zeros(3), [10], 1, np.random.default_rng())


def _final_distances(schedule, sampler, seeds=50):
    mix = bimodal_far()
    den = MixtureDenoiser(mix, schedule)
    out = []
    for seed in range(seeds):
        theta, _ = optimize(schedule, den, sampler, np.zeros(2), SdsConfig(N=2000, lr=0.01, seed=seed))
        out.append(mix.mode_distances(theta).min())
    return np.array(out)


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="on the analytic bimodal toy, TP with m=500, s=125 stays near the origin saddle for N=2000 (see README, 'Known results')",
)
def test_tp_reaches_a_mode(linear_schedule):
    d = _final_distances(linear_schedule, build_sampler("tp", linear_schedule, m=500, s=125))
    assert (d < 0.2).mean() >= 0.9


@pytest.mark.slow
def test_constant_large_t_stays_coarse(linear_schedule):
    tp = _final_distances(linear_schedule, build_sampler("tp", linear_schedule, m=500, s=125))
    const = _final_distances(linear_schedule, build_sampler("constant", linear_schedule, t_fixed=900))
    assert np.median(const) > np.median(tp)


def test_oracle_gradient_uses_condition(linear_schedule, bimodal):
    den = MixtureDenoiser({"a": bimodal}, linear_schedule)
    theta = np.array([0.5, 0.5])
    d = draw_noised(linear_schedule, den, theta, 100, 3, np.random.default_rng(0), condition="a")
    np.testing.assert_array_equal(d.eps_pred, oracle_eps(bimodal, linear_schedule, d.x_t, 100))
