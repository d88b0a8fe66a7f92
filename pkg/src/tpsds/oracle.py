"""Exact noise predictor for isotropic Gaussian mixtures.

Under forward noising, component ``k`` of the mixture maps to
``N(sqrt(ab) mu_k, (ab var_k + 1 - ab) I)``, so the noised density, its score
and the posterior mean of the clean sample are all closed form.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from tpsds.diffusion import NoiseSchedule


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        means = np.array(self.means, dtype=np.float64)
        variances = np.array(self.variances, dtype=np.float64).reshape(-1)
        if means.ndim == 1:
            means = means[:, None]
        if means.ndim != 2:
            raise ValueError("means must be a K x d array")
        K = weights.size
        if K == 0 or means.shape[0] != K or variances.size != K:
            raise ValueError(
                f"inconsistent component counts: {K} weights, {means.shape[0]} means, {variances.size} variances"
            )
        if not np.all(weights > 0):
            raise ValueError("mixture weights must be positive")
        if abs(weights.sum() - 1.0) >= 1e-12:
            raise ValueError(f"mixture weights sum to {weights.sum()!r}, not 1")
        if not np.all(variances > 0):
            raise ValueError("mixture variances must be positive")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances))):
            raise ValueError("mixture parameters must be finite")
        for name, a in (("weights", weights), ("means", means), ("variances", variances)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def K(self) -> int:
        return int(self.weights.size)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    def noised(self, schedule: NoiseSchedule, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Component means and variances of the mixture after noising to ``t``."""
        ab = schedule.alpha_bar(t)
        return math.sqrt(ab) * self.means, ab * self.variances + (1.0 - ab)

    def mode_distances(self, x: np.ndarray) -> np.ndarray:
        """Euclidean distance from ``x`` (shape ``(..., d)``) to every mean, shape ``(..., K)``."""
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(over="ignore"):
            return np.sqrt(((x[..., None, :] - self.means) ** 2).sum(axis=-1))


def _check_dim(mixture: GaussianMixture, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != mixture.dim:
        raise ValueError(f"expected trailing dimension {mixture.dim}, got shape {x.shape}")
    return x


def _component_terms(mixture: GaussianMixture, schedule: NoiseSchedule, x_t: np.ndarray, t: int):
    x_t = _check_dim(mixture, x_t)
    mu, var = mixture.noised(schedule, t)
    diff = x_t[..., None, :] - mu  # (..., K, d)
    sq = (diff**2).sum(axis=-1)
    d = mixture.dim
    log_comp = np.log(mixture.weights) - 0.5 * d * np.log(2 * math.pi * var) - 0.5 * sq / var
    return diff, var, log_comp


def _logsumexp(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shift = a.max(axis=-1, keepdims=True)
    e = np.exp(a - shift)
    total = e.sum(axis=-1, keepdims=True)
    return (shift + np.log(total))[..., 0], e / total


def log_density(mixture: GaussianMixture, schedule: NoiseSchedule, x_t: np.ndarray, t: int) -> np.ndarray | float:
    """Log density of the noised mixture at ``x_t``."""
    _, _, log_comp = _component_terms(mixture, schedule, x_t, t)
    out, _ = _logsumexp(log_comp)
    return float(out) if out.ndim == 0 else out


def responsibilities(mixture: GaussianMixture, schedule: NoiseSchedule, x_t: np.ndarray, t: int) -> np.ndarray:
    _, _, log_comp = _component_terms(mixture, schedule, x_t, t)
    return _logsumexp(log_comp)[1]


def score(mixture: GaussianMixture, schedule: NoiseSchedule, x_t: np.ndarray, t: int) -> np.ndarray:
    """Gradient of the noised log density."""
    diff, var, log_comp = _component_terms(mixture, schedule, x_t, t)
    _, r = _logsumexp(log_comp)
    return -((r / var)[..., None] * diff).sum(axis=-2)


def oracle_eps(mixture: GaussianMixture, schedule: NoiseSchedule, x_t: np.ndarray, t: int) -> np.ndarray:
    """Bayes-optimal noise prediction, ``-sqrt(1 - ab) * score``."""
    ab = schedule.alpha_bar(t)
    return -math.sqrt(1.0 - ab) * score(mixture, schedule, x_t, t)


def posterior_mean(mixture: GaussianMixture, schedule: NoiseSchedule, x_t: np.ndarray, t: int) -> np.ndarray:
    """``E[x_0 | x_t]`` as the responsibility-weighted per-component posterior means.

    Computed without going through the score, so it can cross-check
    ``estimate_x0(x_t, oracle_eps(x_t))``.
    """
    ab = schedule.alpha_bar(t)
    diff, var, log_comp = _component_terms(mixture, schedule, x_t, t)
    _, r = _logsumexp(log_comp)
    gain = mixture.variances * math.sqrt(ab) / var  # (K,)
    per_comp = mixture.means + gain[:, None] * diff  # (..., K, d)
    return (r[..., None] * per_comp).sum(axis=-2)


class MixtureDenoiser:
    """Denoiser backed by one or more mixtures; ``condition`` picks the mixture.

    A bare mixture is registered under the ``None`` condition.
    """

    def __init__(self, mixtures: GaussianMixture | Mapping[Any, GaussianMixture], schedule: NoiseSchedule):
        if isinstance(mixtures, GaussianMixture):
            mixtures = {None: mixtures}
        if not mixtures:
            raise ValueError("at least one mixture is required")
        self.mixtures = dict(mixtures)
        self.schedule = schedule

    def mixture(self, condition: Any = None) -> GaussianMixture:
        try:
            return self.mixtures[condition]
        except KeyError:
            raise ValueError(f"no mixture registered for condition {condition!r}") from None

    def predict_eps(self, x_t: np.ndarray, t: int, condition: Any = None) -> np.ndarray:
        return oracle_eps(self.mixture(condition), self.schedule, x_t, t)


def bimodal_far() -> GaussianMixture:
    return GaussianMixture(
        weights=[0.5, 0.5], means=[[4.0, 0.0], [-4.0, 0.0]], variances=[0.05, 0.05], name="bimodal-far"
    )


def quad() -> GaussianMixture:
    return GaussianMixture(
        weights=[0.25] * 4,
        means=[[3.0, 3.0], [3.0, -3.0], [-3.0, 3.0], [-3.0, -3.0]],
        variances=[0.05] * 4,
        name="quad",
    )


PRESET_MIXTURES = {"bimodal-far": bimodal_far, "quad": quad}


def preset_mixture(name: str) -> GaussianMixture:
    try:
        return PRESET_MIXTURES[name]()
    except KeyError:
        raise ValueError(f"unknown mixture preset {name!r}; known: {sorted(PRESET_MIXTURES)}") from None
