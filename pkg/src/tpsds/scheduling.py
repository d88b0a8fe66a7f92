"""Timestep schedules for score distillation.

The time-prioritized schedule spends iterations on each timestep in
proportion to a prior weight ``W(t) = W_d(t) * W_p(t) / Z`` and walks ``t``
monotonically from ``T`` down to 1. ``W_d = sqrt((1 - ab) / ab)`` is the
inverse square-root SNR of the noise schedule and ``W_p`` is an unnormalized
Gaussian bump centred at ``m`` with width ``s`` (both in timestep units).

Baselines and ablations live next to it: uniform random sampling, linear
descent (optionally truncated from below), single-factor priors, a constant
timestep, power-law annealing and two-stage random sampling.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np

from tpsds.diffusion import NoiseSchedule

PAPER_M = 500.0
PAPER_S = 125.0

# artifact defaults for the annealing / two-stage comparisons (endpoints are not pinned upstream)
POWER_T_MAX = 980
POWER_T_MIN = 20
POWER_P = 0.5
TWO_STAGE_BOUNDARY = 0.5
TWO_STAGE_STAGE1 = (20, 980)
TWO_STAGE_STAGE2 = (20, 500)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PriorWeight:
    """Normalized timestep prior and its tail-mass table.

    Arrays are indexed by ``t - 1``. ``cum[t' - 1]`` holds ``sum_{t >= t'} W(t)``.
    With ``use_wd`` or ``use_wp`` switched off the corresponding factor is
    replaced by 1 (the single-factor ablations).
    """

    schedule: NoiseSchedule
    m: float
    s: float
    use_wd: bool = True
    use_wp: bool = True
    W_d: np.ndarray = field(init=False, repr=False)
    W_p: np.ndarray = field(init=False, repr=False)
    W: np.ndarray = field(init=False, repr=False)
    cum: np.ndarray = field(init=False, repr=False)
    log_Z: float = field(init=False)

    def __post_init__(self) -> None:
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ValueError(f"s must be a positive finite number, got {self.s!r}")
        if not math.isfinite(self.m):
            raise ValueError(f"m must be finite, got {self.m!r}")
        ab = self.schedule.alpha_bars
        t = self.schedule.timesteps().astype(np.float64)
        log_wd = 0.5 * (np.log1p(-ab) - np.log(ab))
        log_wp = -((t - self.m) ** 2) / (2.0 * self.s**2)
        log_w = np.zeros_like(t)
        if self.use_wd:
            log_w = log_w + log_wd
        if self.use_wp:
            log_w = log_w + log_wp
        # normalize in log space; a narrow W_p far from m would otherwise underflow Z
        shift = log_w.max()
        log_Z = shift + math.log(np.exp(log_w - shift).sum())
        W = np.exp(log_w - log_Z)
        cum = np.cumsum(W[::-1])[::-1]
        for name, value in (
            ("W_d", np.sqrt((1.0 - ab) / ab)),
            ("W_p", np.exp(log_wp)),
            ("W", W),
            ("cum", cum),
        ):
            object.__setattr__(self, name, _frozen(value))
        object.__setattr__(self, "log_Z", float(log_Z))

    @property
    def T(self) -> int:
        return self.schedule.T

    @property
    def Z(self) -> float:
        """Normalizer ``sum_t W_d(t) W_p(t)`` (with disabled factors set to 1)."""
        return math.exp(self.log_Z)

    @property
    def kind(self) -> str:
        if self.use_wd and self.use_wp:
            return "tp"
        if self.use_wp:
            return "wp_only"
        if self.use_wd:
            return "wd_only"
        return "flat"

    def argmax(self) -> int:
        """Timestep with the largest weight (first on ties)."""
        return int(np.argmax(self.W)) + 1


def build_prior_weight(
    schedule: NoiseSchedule,
    m: float = PAPER_M,
    s: float = PAPER_S,
    *,
    use_wd: bool = True,
    use_wp: bool = True,
) -> PriorWeight:
    return PriorWeight(schedule=schedule, m=float(m), s=float(s), use_wd=use_wd, use_wp=use_wp)


def _check_iteration(i: int, N: int) -> tuple[int, int]:
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    if int(i) != i or not 1 <= i <= N:
        raise ValueError(f"iteration {i!r} outside 1..{N}")
    return int(i), int(N)


def _nearest_tail_index(cum: np.ndarray, target: float) -> int:
    """0-based index ``k`` minimizing ``|cum[k] - target|``, ties to the larger ``k``.

    ``cum`` is non-increasing. Searching its reversal (non-decreasing) leaves
    at most two candidate plateaus, one on each side of ``target``.
    """
    rev = cum[::-1]
    n = rev.size
    hi = int(np.searchsorted(rev, target, side="left"))
    candidates = []
    if hi < n:
        candidates.append(hi)  # leftmost j with rev[j] >= target
    if hi > 0:
        # leftmost member of the plateau just below target
        candidates.append(int(np.searchsorted(rev, rev[hi - 1], side="left")))
    best = min(candidates, key=lambda j: (abs(rev[j] - target), j))
    return n - 1 - best


def schedule_timestep(prior: PriorWeight, i: int, N: int) -> int:
    """Timestep at iteration ``i`` of ``N``: ``argmin_t' |sum_{t >= t'} W(t) - i/N|``.

    Ties go to the larger ``t'``, which keeps the schedule non-increasing.
    """
    i, N = _check_iteration(i, N)
    return _nearest_tail_index(prior.cum, i / N) + 1


def schedule_timestep_bruteforce(prior: PriorWeight, i: int, N: int) -> int:
    """Reference scan over every ``t'``; used to cross-check the binary search."""
    i, N = _check_iteration(i, N)
    dist = np.abs(prior.cum - i / N)
    return int(np.flatnonzero(dist == dist.min())[-1]) + 1


def _check_range(lo: int, hi: int, T: int, what: str) -> tuple[int, int]:
    if int(lo) != lo or int(hi) != hi:
        raise ValueError(f"{what} bounds must be integers, got ({lo!r}, {hi!r})")
    lo, hi = int(lo), int(hi)
    if lo > hi:
        raise ValueError(f"{what}: min {lo} > max {hi}")
    if lo < 1 or hi > T:
        raise ValueError(f"{what}: range {lo}..{hi} not within 1..{T}")
    return lo, hi


class TimestepSampler:
    """Maps iteration ``i`` of ``N`` to a timestep in ``1..T``."""

    kind: ClassVar[str]
    deterministic: ClassVar[bool] = True
    T: int

    def timestep(self, i: int, N: int, rng: np.random.Generator | None = None) -> int:
        raise NotImplementedError

    def default_name(self) -> str:
        return self.kind

    def curve(self, N: int) -> np.ndarray:
        """``t(i)`` for ``i = 1..N``; deterministic samplers only."""
        if not self.deterministic:
            raise TypeError(f"{self.kind} sampler is random; it has no fixed curve")
        return np.array([self.timestep(i, N) for i in range(1, N + 1)], dtype=np.int64)


@dataclass(frozen=True)
class UniformRandom(TimestepSampler):
    kind: ClassVar[str] = "uniform_random"
    deterministic: ClassVar[bool] = False
    T: int
    t_min: int = 1
    t_max: int | None = None

    def __post_init__(self) -> None:
        t_max = self.T if self.t_max is None else self.t_max
        lo, hi = _check_range(self.t_min, t_max, self.T, "uniform_random")
        object.__setattr__(self, "t_min", lo)
        object.__setattr__(self, "t_max", hi)

    def timestep(self, i, N, rng=None):
        _check_iteration(i, N)
        if rng is None:
            raise ValueError("uniform_random needs an rng")
        return int(rng.integers(self.t_min, self.t_max + 1))

    def default_name(self):
        if (self.t_min, self.t_max) == (1, self.T):
            return "uniform"
        return f"uniform_{self.t_min}-{self.t_max}"


@dataclass(frozen=True)
class TimePrioritized(TimestepSampler):
    """Prior-weighted non-increasing schedule; covers ``tp``, ``wp_only`` and ``wd_only``."""

    prior: PriorWeight

    @property
    def kind(self) -> str:  # type: ignore[override]
        return self.prior.kind

    @property
    def T(self) -> int:  # type: ignore[override]
        return self.prior.T

    def timestep(self, i, N, rng=None):
        return schedule_timestep(self.prior, i, N)

    def curve(self, N):
        _check_iteration(N, N)
        return np.array([_nearest_tail_index(self.prior.cum, i / N) + 1 for i in range(1, N + 1)], dtype=np.int64)

    def default_name(self):
        p = self.prior
        if p.kind == "wd_only":
            return "wd_only"
        return f"{p.kind}_m{p.m:g}_s{p.s:g}"


def _linear_t(T: int, i: int, N: int) -> int:
    if N == 1:
        return T
    # round-half-up of T - (i-1)(T-1)/(N-1), in exact integer arithmetic
    num = T * (N - 1) - (i - 1) * (T - 1)
    den = N - 1
    return (2 * num + den) // (2 * den)


@dataclass(frozen=True)
class Linear(TimestepSampler):
    kind: ClassVar[str] = "linear"
    T: int

    def timestep(self, i, N, rng=None):
        i, N = _check_iteration(i, N)
        return _linear_t(self.T, i, N)


@dataclass(frozen=True)
class TruncatedLinear(TimestepSampler):
    kind: ClassVar[str] = "truncated_linear"
    T: int
    floor: int = 200

    def __post_init__(self) -> None:
        if int(self.floor) != self.floor or not 1 <= self.floor <= self.T:
            raise ValueError(f"truncated_linear floor {self.floor!r} not within 1..{self.T}")

    def timestep(self, i, N, rng=None):
        i, N = _check_iteration(i, N)
        return max(_linear_t(self.T, i, N), int(self.floor))

    def default_name(self):
        return f"truncated_linear_{self.floor}"


@dataclass(frozen=True)
class Constant(TimestepSampler):
    kind: ClassVar[str] = "constant"
    T: int
    t_fixed: int = 500

    def __post_init__(self) -> None:
        if int(self.t_fixed) != self.t_fixed or not 1 <= self.t_fixed <= self.T:
            raise ValueError(f"constant t_fixed {self.t_fixed!r} not within 1..{self.T}")

    def timestep(self, i, N, rng=None):
        _check_iteration(i, N)
        return int(self.t_fixed)

    def default_name(self):
        return f"constant_{self.t_fixed}"


@dataclass(frozen=True)
class PowerAnnealed(TimestepSampler):
    """``t(i) = t_max - (t_max - t_min) (i/N)^p``, rounded half-up."""

    kind: ClassVar[str] = "power_annealed"
    T: int
    t_max: int = POWER_T_MAX
    t_min: int = POWER_T_MIN
    p: float = POWER_P

    def __post_init__(self) -> None:
        _check_range(self.t_min, self.t_max, self.T, "power_annealed")
        if not (self.p > 0 and math.isfinite(self.p)):
            raise ValueError(f"power_annealed p must be positive, got {self.p!r}")

    def timestep(self, i, N, rng=None):
        i, N = _check_iteration(i, N)
        value = self.t_max - (self.t_max - self.t_min) * (i / N) ** self.p
        return min(max(math.floor(value + 0.5), self.t_min), self.t_max)

    def default_name(self):
        return f"power_annealed_p{self.p:g}"


@dataclass(frozen=True)
class TwoStage(TimestepSampler):
    """Uniform draws from ``stage1`` while ``i/N <= boundary_fraction``, then from ``stage2``."""

    kind: ClassVar[str] = "two_stage"
    deterministic: ClassVar[bool] = False
    T: int
    boundary_fraction: float = TWO_STAGE_BOUNDARY
    stage1: tuple[int, int] = TWO_STAGE_STAGE1
    stage2: tuple[int, int] = TWO_STAGE_STAGE2

    def __post_init__(self) -> None:
        if not 0 < self.boundary_fraction < 1:
            raise ValueError(f"boundary_fraction must lie in (0, 1), got {self.boundary_fraction!r}")
        object.__setattr__(self, "stage1", _check_range(*self.stage1, self.T, "two_stage stage1"))
        object.__setattr__(self, "stage2", _check_range(*self.stage2, self.T, "two_stage stage2"))

    def timestep(self, i, N, rng=None):
        i, N = _check_iteration(i, N)
        if rng is None:
            raise ValueError("two_stage needs an rng")
        lo, hi = self.stage1 if i / N <= self.boundary_fraction else self.stage2
        return int(rng.integers(lo, hi + 1))


SAMPLER_KINDS = (
    "uniform_random",
    "tp",
    "linear",
    "truncated_linear",
    "wp_only",
    "wd_only",
    "constant",
    "power_annealed",
    "two_stage",
)

# parameters accepted by each kind in build_sampler / config files
SAMPLER_PARAMS: dict[str, tuple[str, ...]] = {
    "uniform_random": ("t_min", "t_max"),
    "tp": ("m", "s"),
    "linear": (),
    "truncated_linear": ("floor",),
    "wp_only": ("m", "s"),
    "wd_only": (),
    "constant": ("t_fixed",),
    "power_annealed": ("t_max", "t_min", "p"),
    "two_stage": ("boundary_fraction", "stage1_range", "stage2_range"),
}


def build_sampler(kind: str, schedule: NoiseSchedule, **params: Any) -> TimestepSampler:
    """Construct a sampler variant by name, validating its parameters against ``schedule``."""
    if kind == "uniform":
        kind = "uniform_random"
    if kind not in SAMPLER_PARAMS:
        raise ValueError(f"unknown sampler kind {kind!r}; expected one of {SAMPLER_KINDS}")
    unknown = set(params) - set(SAMPLER_PARAMS[kind])
    if unknown:
        raise ValueError(f"unexpected parameters for {kind}: {sorted(unknown)}")
    T = schedule.T
    if kind == "uniform_random":
        return UniformRandom(T=T, t_min=params.get("t_min", 1), t_max=params.get("t_max", T))
    if kind in ("tp", "wp_only"):
        prior = build_prior_weight(
            schedule, params.get("m", PAPER_M), params.get("s", PAPER_S), use_wd=(kind == "tp")
        )
        return TimePrioritized(prior)
    if kind == "wd_only":
        return TimePrioritized(build_prior_weight(schedule, PAPER_M, PAPER_S, use_wp=False))
    if kind == "linear":
        return Linear(T=T)
    if kind == "truncated_linear":
        return TruncatedLinear(T=T, floor=params.get("floor", 200))
    if kind == "constant":
        if "t_fixed" not in params:
            raise ValueError("constant sampler needs t_fixed")
        return Constant(T=T, t_fixed=params["t_fixed"])
    if kind == "power_annealed":
        return PowerAnnealed(
            T=T,
            t_max=params.get("t_max", POWER_T_MAX),
            t_min=params.get("t_min", POWER_T_MIN),
            p=params.get("p", POWER_P),
        )
    return TwoStage(
        T=T,
        boundary_fraction=params.get("boundary_fraction", TWO_STAGE_BOUNDARY),
        stage1=tuple(params.get("stage1_range", TWO_STAGE_STAGE1)),
        stage2=tuple(params.get("stage2_range", TWO_STAGE_STAGE2)),
    )


def sampler_from_mapping(spec: Mapping[str, Any], schedule: NoiseSchedule) -> TimestepSampler:
    params = {k: v for k, v in spec.items() if k not in ("kind", "name")}
    return build_sampler(spec["kind"], schedule, **params)


def sample_timestep(sampler: TimestepSampler, i: int, N: int, rng: np.random.Generator | None = None) -> int:
    return sampler.timestep(i, N, rng)
