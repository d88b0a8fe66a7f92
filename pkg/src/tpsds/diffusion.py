"""Discrete-time DDPM machinery: noise schedules, forward noising, x0 recovery
and the ancestral reverse step.

Timesteps are 1-based, ``t in {1..T}``. Tables are stored 0-based, so the
value for timestep ``t`` lives at index ``t - 1``. ``alpha_bar_0 = 1`` is
implicit and never stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

SCHEDULE_KINDS = ("ddpm_linear", "cosine")

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 2e-2
COSINE_OFFSET = 0.008
COSINE_MAX_BETA = 0.999


class Denoiser(Protocol):
    """Noise predictor ``eps(x_t; condition, t)``.

    Must return an array shaped like ``x_t`` and be deterministic in its inputs.
    """

    def predict_eps(self, x_t: np.ndarray, t: int, condition: Any = None) -> np.ndarray: ...


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-timestep ``beta``, ``alpha`` and cumulative ``alpha_bar`` tables."""

    kind: str
    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        betas = _frozen(self.betas)
        if betas.ndim != 1 or betas.size < 2:
            raise ValueError("betas must be a 1-D array with at least 2 entries")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        alphas = _frozen(1.0 - betas)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", _frozen(np.cumprod(alphas)))

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def check_t(self, t: int) -> int:
        if isinstance(t, (bool, np.bool_)) or int(t) != t:
            raise ValueError(f"timestep must be an integer, got {t!r}")
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 1..{self.T}")
        return t

    def alpha(self, t: int) -> float:
        return float(self.alphas[self.check_t(t) - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.check_t(t) - 1])

    def snr(self) -> np.ndarray:
        """Signal-to-noise ratio ``alpha_bar / (1 - alpha_bar)`` for t = 1..T."""
        return self.alpha_bars / (1.0 - self.alpha_bars)

    def timesteps(self) -> np.ndarray:
        return np.arange(1, self.T + 1)


def build_schedule(kind: str = "ddpm_linear", T: int = 1000) -> NoiseSchedule:
    """Build a ``ddpm_linear`` (beta ramp 1e-4 -> 2e-2) or ``cosine`` schedule."""
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    T = int(T)
    if kind == "ddpm_linear":
        betas = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T)
    elif kind == "cosine":
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos((steps / T + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2
        curve = f / f[0]
        betas = np.clip(1.0 - curve[1:] / curve[:-1], 0.0, COSINE_MAX_BETA)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    return NoiseSchedule(kind=kind, betas=betas)


@dataclass(frozen=True)
class NoisedSample:
    x_t: np.ndarray
    eps: np.ndarray
    t: int


def noise_sample(
    schedule: NoiseSchedule,
    x: np.ndarray,
    t: int,
    rng: np.random.Generator,
) -> NoisedSample:
    """Forward-noise ``x`` to timestep ``t``: ``sqrt(ab) x + sqrt(1 - ab) eps``."""
    ab = schedule.alpha_bar(t)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    eps = np.asarray(rng.standard_normal(x.shape), dtype=np.float64)
    x_t = math.sqrt(ab) * x + math.sqrt(1.0 - ab) * eps
    return NoisedSample(x_t=x_t, eps=eps, t=int(t))


def estimate_x0(schedule: NoiseSchedule, x_t: np.ndarray, eps_pred: np.ndarray, t: int) -> np.ndarray:
    """Invert the forward process using a noise prediction."""
    ab = schedule.alpha_bar(t)
    return (np.asarray(x_t) - math.sqrt(1.0 - ab) * np.asarray(eps_pred)) / math.sqrt(ab)


def ddpm_sigma(schedule: NoiseSchedule, t: int, sigma_rule: str) -> float:
    t = schedule.check_t(t)
    if sigma_rule == "zero" or t == 1:
        return 0.0
    if sigma_rule == "sqrt_one_minus_alpha":
        return math.sqrt(1.0 - schedule.alpha(t))
    raise ValueError(f"unknown sigma rule {sigma_rule!r}")


def ddpm_step(
    schedule: NoiseSchedule,
    x_t: np.ndarray,
    t: int,
    denoiser: Denoiser,
    sigma_rule: str = "sqrt_one_minus_alpha",
    rng: np.random.Generator | None = None,
    condition: Any = None,
) -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}``.

    ``x_t`` may carry leading batch axes; the denoiser sees it unchanged.
    The step at ``t = 1`` never adds noise.
    """
    sigma = ddpm_sigma(schedule, t, sigma_rule)
    a = schedule.alpha(t)
    ab = schedule.alpha_bar(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_pred = denoiser.predict_eps(x_t, t, condition)
    mean = (x_t - (1.0 - a) / math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(a)
    if sigma == 0.0:
        return mean
    if rng is None:
        raise ValueError("rng is required when sigma_t > 0")
    return mean + sigma * rng.standard_normal(x_t.shape)


def ancestral_sample(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    n: int,
    dim: int,
    rng: np.random.Generator,
    sigma_rule: str = "sqrt_one_minus_alpha",
    condition: Any = None,
) -> np.ndarray:
    """Run the full reverse chain ``t = T -> 1`` from ``x_T ~ N(0, I)`` for ``n`` samples."""
    x = rng.standard_normal((n, dim))
    for t in range(schedule.T, 0, -1):
        x = ddpm_step(schedule, x, t, denoiser, sigma_rule, rng, condition)
    return x
