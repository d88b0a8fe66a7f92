"""Score distillation with an identity generator (the parameters are the sample).

The per-draw gradient is ``w(t) * (eps_pred(x_t, t) - eps)`` with
``x_t = sqrt(ab) theta + sqrt(1 - ab) eps``. The x0-regression form of the
loss, ``0.5 * ||theta - stop_grad(x0_hat)||^2``, has gradient
``theta - x0_hat = W_d(t) * (eps_pred - eps)``, i.e. the same direction
scaled by the inverse square-root SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from tpsds.diffusion import Denoiser, NoiseSchedule, estimate_x0
from tpsds.scheduling import TimestepSampler

W_RULES = ("one", "sqrt_inv_snr")


class DivergenceError(RuntimeError):
    """Non-finite gradient or parameters; carries the trajectory recorded so far."""

    def __init__(self, i: int | None, t: int, grad_norm: float, trajectory: TrajectoryRecord | None = None):
        super().__init__(f"divergence at iteration {i}, t={t}, grad_norm={grad_norm!r}")
        self.i = i
        self.t = t
        self.grad_norm = grad_norm
        self.trajectory = trajectory


@dataclass(frozen=True)
class SdsConfig:
    w_rule: str = "one"
    lr: float = 0.01
    N: int = 2000
    grad_samples: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.w_rule not in W_RULES:
            raise ValueError(f"w_rule must be one of {W_RULES}, got {self.w_rule!r}")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError(f"lr must be positive, got {self.lr!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if int(self.grad_samples) != self.grad_samples or self.grad_samples < 1:
            raise ValueError(f"grad_samples must be a positive integer, got {self.grad_samples!r}")


def sds_weight(schedule: NoiseSchedule, t: int, w_rule: str = "one") -> float:
    if w_rule == "one":
        schedule.check_t(t)
        return 1.0
    if w_rule == "sqrt_inv_snr":
        ab = schedule.alpha_bar(t)
        return math.sqrt((1.0 - ab) / ab)
    raise ValueError(f"unknown w_rule {w_rule!r}")


@dataclass(frozen=True)
class SdsDraw:
    """One batch of noising draws at a fixed ``(theta, t)``."""

    eps: np.ndarray  # (n, d)
    x_t: np.ndarray
    eps_pred: np.ndarray


def draw_noised(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    theta: np.ndarray,
    t: int,
    n: int,
    rng: np.random.Generator,
    condition: Any = None,
) -> SdsDraw:
    ab = schedule.alpha_bar(t)
    theta = np.asarray(theta, dtype=np.float64)
    eps = rng.standard_normal((n, theta.size))
    x_t = math.sqrt(ab) * theta + math.sqrt(1.0 - ab) * eps
    return SdsDraw(eps=eps, x_t=x_t, eps_pred=denoiser.predict_eps(x_t, t, condition))


def sds_gradient_samples(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    theta: np.ndarray,
    t: int,
    n: int,
    rng: np.random.Generator,
    w_rule: str = "one",
    condition: Any = None,
) -> np.ndarray:
    """Per-draw SDS integrands, shape ``(n, d)``."""
    draw = draw_noised(schedule, denoiser, theta, t, n, rng, condition)
    return sds_weight(schedule, t, w_rule) * (draw.eps_pred - draw.eps)


def _check_finite_grad(grad: np.ndarray, t: int, i: int | None) -> None:
    if not np.all(np.isfinite(grad)):
        raise DivergenceError(i, t, float(np.linalg.norm(grad)))


def sds_gradient(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    theta: np.ndarray,
    t: int,
    config: SdsConfig,
    rng: np.random.Generator,
    condition: Any = None,
    i: int | None = None,
) -> np.ndarray:
    """Monte-Carlo SDS gradient averaged over ``config.grad_samples`` noise draws."""
    samples = sds_gradient_samples(schedule, denoiser, theta, t, config.grad_samples, rng, config.w_rule, condition)
    grad = samples.mean(axis=0)
    _check_finite_grad(grad, t, i)
    return grad


def x0_regression(schedule: NoiseSchedule, theta: np.ndarray, draw: SdsDraw, t: int, k: int = 0) -> tuple[float, np.ndarray]:
    """Loss ``0.5 ||theta - x0_hat||^2`` and its gradient (``x0_hat`` held fixed) for draw ``k``."""
    x0_hat = estimate_x0(schedule, draw.x_t[k], draw.eps_pred[k], t)
    resid = np.asarray(theta, dtype=np.float64) - x0_hat
    return 0.5 * float(resid @ resid), resid


def sds_loss_x0(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    theta: np.ndarray,
    t: int,
    rng: np.random.Generator,
    condition: Any = None,
) -> float:
    """Single-draw x0-regression SDS loss with unit weight."""
    draw = draw_noised(schedule, denoiser, theta, t, 1, rng, condition)
    loss, resid = x0_regression(schedule, theta, draw, t)
    _check_finite_grad(resid, t, None)
    return loss


@dataclass
class TrajectoryRecord:
    """Per-iteration log of one optimization run.

    ``thetas[k]`` is the parameter vector after iteration ``i[k]``.
    ``grad_variance`` is the mean per-coordinate sample variance of the
    per-draw integrands (NaN when ``grad_samples == 1``).
    """

    i: np.ndarray
    t: np.ndarray
    grad_norm: np.ndarray
    grad_variance: np.ndarray
    x0_loss: np.ndarray
    thetas: np.ndarray
    theta0: np.ndarray
    N: int
    sampler: str = ""
    seed: int | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.i.size)

    @property
    def completed(self) -> bool:
        return len(self) == self.N

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1] if len(self) else self.theta0

    def mode_distances(self, means: np.ndarray) -> np.ndarray:
        """Distance from every recorded theta to every mean, shape ``(rows, K)``."""
        means = np.asarray(means, dtype=np.float64)
        with np.errstate(over="ignore"):  # far-off thetas of a divergent run give inf
            return np.sqrt(((self.thetas[:, None, :] - means[None]) ** 2).sum(axis=-1))


class _Recorder:
    def __init__(self, N: int, d: int):
        self.t = np.zeros(N, dtype=np.int64)
        self.grad_norm = np.zeros(N)
        self.grad_variance = np.full(N, np.nan)
        self.x0_loss = np.zeros(N)
        self.thetas = np.zeros((N, d))
        self.rows = 0

    def add(self, t, grad_norm, grad_variance, x0_loss, theta):
        k = self.rows
        self.t[k] = t
        self.grad_norm[k] = grad_norm
        self.grad_variance[k] = grad_variance
        self.x0_loss[k] = x0_loss
        self.thetas[k] = theta
        self.rows += 1

    def finish(self, theta0, N, sampler, seed) -> TrajectoryRecord:
        n = self.rows
        return TrajectoryRecord(
            i=np.arange(1, n + 1),
            t=self.t[:n].copy(),
            grad_norm=self.grad_norm[:n].copy(),
            grad_variance=self.grad_variance[:n].copy(),
            x0_loss=self.x0_loss[:n].copy(),
            thetas=self.thetas[:n].copy(),
            theta0=theta0,
            N=N,
            sampler=sampler,
            seed=seed,
        )


def optimize(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    sampler: TimestepSampler,
    theta0: np.ndarray,
    config: SdsConfig,
    condition: Any = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, TrajectoryRecord]:
    """Plain gradient descent on the SDS objective with timesteps from ``sampler``.

    The random stream is ``default_rng(config.seed)`` unless ``rng`` is given;
    per iteration it first feeds the sampler (random variants only), then the
    noise draws. Raises :class:`DivergenceError` with the partial trajectory
    attached if the gradient or the parameters become non-finite.
    """
    theta0 = np.array(theta0, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(theta0)):
        raise ValueError("theta0 must be finite")
    if sampler.T != schedule.T:
        raise ValueError(f"sampler built for T={sampler.T} but schedule has T={schedule.T}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    N, n = int(config.N), int(config.grad_samples)
    rec = _Recorder(N, theta0.size)
    name = sampler.default_name()
    theta = theta0.copy()
    # a run that blows up overflows before it turns non-finite; that is caught below, not warned about
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, N + 1):
            t = sampler.timestep(i, N, rng)
            draw = draw_noised(schedule, denoiser, theta, t, n, rng, condition)
            samples = sds_weight(schedule, t, config.w_rule) * (draw.eps_pred - draw.eps)
            grad = samples.mean(axis=0)
            grad_norm = float(np.linalg.norm(grad))
            if not np.all(np.isfinite(grad)):
                raise DivergenceError(i, t, grad_norm, rec.finish(theta0, N, name, config.seed))
            grad_var = float(samples.var(axis=0, ddof=1).mean()) if n > 1 else math.nan
            x0_loss, _ = x0_regression(schedule, theta, draw, t)
            theta = theta - config.lr * grad
            if not np.all(np.isfinite(theta)):
                raise DivergenceError(i, t, grad_norm, rec.finish(theta0, N, name, config.seed))
            rec.add(t, grad_norm, grad_var, x0_loss, theta)
    return theta, rec.finish(theta0, N, name, config.seed)


@dataclass(frozen=True)
class VarianceSweep:
    t: np.ndarray
    trace: np.ndarray  # summed per-coordinate variance
    per_dim: np.ndarray


def gradient_variance_sweep(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    theta: np.ndarray,
    t_list,
    samples: int,
    rng: np.random.Generator,
    condition: Any = None,
) -> VarianceSweep:
    """Monte-Carlo variance of the unit-weight SDS gradient at a fixed ``theta``, per timestep."""
    if int(samples) != samples or samples < 2:
        raise ValueError("need at least 2 samples to estimate a variance")
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    ts = np.array([schedule.check_t(t) for t in t_list], dtype=np.int64)
    trace = np.empty(ts.size)
    for k, t in enumerate(ts):
        g = sds_gradient_samples(schedule, denoiser, theta, int(t), int(samples), rng, "one", condition)
        trace[k] = g.var(axis=0, ddof=1).sum()
    return VarianceSweep(t=ts, trace=trace, per_dim=trace / theta.size)
