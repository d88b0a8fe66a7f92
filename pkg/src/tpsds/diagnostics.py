"""Post-hoc measurements over optimization runs and images.

* mode coverage / diversity entropy over the final parameters of many seeds,
* first-passage convergence statistics,
* radially averaged power spectra for the frequency-content diagnostic.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass

import numpy as np

from tpsds.oracle import GaussianMixture
from tpsds.sds import TrajectoryRecord

DEFAULT_TAU = 0.2


def _check_tau(tau: float) -> float:
    if not (tau > 0 and math.isfinite(tau)):
        raise ValueError(f"tau must be positive, got {tau!r}")
    return float(tau)


def coverage_entropy(counts: Sequence[int]) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum()) + 0.0  # +0.0 turns -0.0 into 0.0


@dataclass(frozen=True)
class DiversityReport:
    """Where each run ended up.

    ``counts[k]`` runs finished within ``tau`` of mode ``k``; the remaining
    runs are ``unconverged`` (finite but outside every ball) or ``diverged``.
    Entropy is over converged runs only.
    """

    counts: list[int]
    unconverged: int
    diverged: int
    n_seeds: int
    entropy: float
    max_entropy: float
    tau: float

    @property
    def fractions(self) -> list[float]:
        return [c / self.n_seeds for c in self.counts]

    @property
    def failed(self) -> int:
        return self.unconverged + self.diverged

    def to_dict(self) -> dict:
        out = asdict(self)
        out["fractions"] = self.fractions
        return out


def coverage_from_distances(final_distances: np.ndarray, tau: float, diverged: Sequence[bool] | None = None) -> DiversityReport:
    """Build a :class:`DiversityReport` from an ``(runs, K)`` array of final mode distances."""
    tau = _check_tau(tau)
    d = np.atleast_2d(np.asarray(final_distances, dtype=np.float64))
    runs, K = d.shape
    if runs == 0:
        raise ValueError("no runs to summarize")
    bad = np.zeros(runs, dtype=bool) if diverged is None else np.asarray(diverged, dtype=bool)
    bad = bad | ~np.all(np.isfinite(d), axis=1)
    counts = np.zeros(K, dtype=np.int64)
    unconverged = 0
    for row, is_bad in zip(d, bad):
        if is_bad:
            continue
        k = int(np.argmin(row))
        if row[k] < tau:
            counts[k] += 1
        else:
            unconverged += 1
    return DiversityReport(
        counts=[int(c) for c in counts],
        unconverged=unconverged,
        diverged=int(bad.sum()),
        n_seeds=runs,
        entropy=coverage_entropy(counts),
        max_entropy=math.log(K),
        tau=tau,
    )


def mode_coverage(trajectories: Iterable[TrajectoryRecord], mixture: GaussianMixture, tau: float = DEFAULT_TAU) -> DiversityReport:
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("empty trajectory set")
    final = np.array([mixture.mode_distances(r.final_theta) for r in trajectories])
    return coverage_from_distances(final, tau, [not r.completed for r in trajectories])


def first_passage(distances: np.ndarray, tau: float) -> int | None:
    """First 1-based row whose nearest-mode distance is below ``tau``, else ``None``."""
    d = np.asarray(distances, dtype=np.float64)
    nearest = d.min(axis=1) if d.ndim == 2 else d
    hits = np.flatnonzero(nearest < tau)
    return int(hits[0]) + 1 if hits.size else None


@dataclass(frozen=True)
class ConvergenceReport:
    """First-passage iterations for a set of runs of one sampler.

    Censored runs (``None``) never entered a ``tau`` ball; median and
    quartiles are over uncensored runs, and ``median_censored_at_N`` counts
    censored runs as ``N``.
    """

    first_passage: list[int | None]
    n_censored: int
    median: float | None
    q25: float | None
    q75: float | None
    median_censored_at_N: float
    N: int
    tau: float

    def to_dict(self) -> dict:
        return asdict(self)


def convergence_from_passages(passages: Sequence[int | None], N: int, tau: float) -> ConvergenceReport:
    if not passages:
        raise ValueError("empty trajectory set")
    hit = np.array([p for p in passages if p is not None], dtype=np.float64)
    filled = np.array([N if p is None else p for p in passages], dtype=np.float64)
    stats = [float(np.percentile(hit, q)) for q in (50, 25, 75)] if hit.size else [None, None, None]
    return ConvergenceReport(
        first_passage=list(passages),
        n_censored=len(passages) - int(hit.size),
        median=stats[0],
        q25=stats[1],
        q75=stats[2],
        median_censored_at_N=float(np.median(filled)),
        N=int(N),
        tau=float(tau),
    )


def convergence_stats(trajectories: Iterable[TrajectoryRecord], mixture: GaussianMixture, tau: float = DEFAULT_TAU) -> ConvergenceReport:
    tau = _check_tau(tau)
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("empty trajectory set")
    Ns = {r.N for r in trajectories}
    if len(Ns) != 1:
        raise ValueError(f"trajectories disagree on N: {sorted(Ns)}")
    passages = [first_passage(r.mode_distances(mixture.means), tau) if len(r) else None for r in trajectories]
    return convergence_from_passages(passages, Ns.pop(), tau)


@dataclass(frozen=True)
class SpectrumReport:
    """Radially averaged power of an image.

    ``power[r]`` is the mean of ``|F|^2`` over DC-centred pixels whose rounded
    radius is ``r``, for ``r < floor(min(H, W) / 2)``. ``F`` is the
    unnormalized forward DFT, so ``total_power == H * W * sum(image ** 2)``.
    """

    radii: np.ndarray
    power: np.ndarray
    counts: np.ndarray
    low_freq_fraction: float
    total_power: float
    shape: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "radii": self.radii.tolist(),
            "power": self.power.tolist(),
            "counts": self.counts.tolist(),
            "low_freq_fraction": self.low_freq_fraction,
            "total_power": self.total_power,
        }


def power_spectrum_2d(image: np.ndarray) -> np.ndarray:
    """DC-centred ``|fft2(image)|^2`` (unnormalized transform)."""
    return np.abs(np.fft.fftshift(np.fft.fft2(image))) ** 2


def radius_grid(H: int, W: int) -> np.ndarray:
    y, x = np.indices((H, W))
    return np.floor(np.hypot(y - H // 2, x - W // 2) + 0.5).astype(np.int64)


def radial_power_spectrum(image: np.ndarray) -> SpectrumReport:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or min(image.shape) < 4:
        raise ValueError(f"expected an H x W grid with H, W >= 4, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image must be finite")
    H, W = image.shape
    P = power_spectrum_2d(image)
    r = radius_grid(H, W)
    nbins = min(H, W) // 2
    inside = r < nbins
    counts = np.bincount(r[inside], minlength=nbins)
    sums = np.bincount(r[inside], weights=P[inside], minlength=nbins)
    total = float(P.sum())
    low_cut = max(1, math.ceil(nbins / 4))
    low = float(P[r < low_cut].sum())
    return SpectrumReport(
        radii=np.arange(nbins),
        power=sums / counts,
        counts=counts,
        low_freq_fraction=low / total if total > 0 else 1.0,
        total_power=total,
        shape=(H, W),
    )
