"""Figures for schedule exports, sweep reports and spectra.

Uses the object-oriented matplotlib API with an Agg canvas, so nothing
touches pyplot's global state and figures can be drawn from worker
processes.
"""

from __future__ import annotations

from collections.abc import Mapping
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "savefig.dpi": 150,
}


def new_figure(ncols: int = 1, width: float = 4.8, height: float = 3.2):
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(width * ncols, height))
        FigureCanvasAgg(fig)
        axes = fig.subplots(1, ncols)
    return fig, axes


def save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with mpl.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path)
    return path


def plot_prior(prior, curve: np.ndarray, path: str | Path) -> Path:
    """Min-max normalized ``W_d``, ``W_p``, ``W`` next to the resulting ``t(i)``."""
    from tpsds.tables import minmax

    fig, (ax_w, ax_t) = new_figure(ncols=2)
    t = np.arange(1, prior.T + 1)
    for values, label, style in ((prior.W_d, "$W_d$", ":"), (prior.W_p, "$W_p$", "--"), (prior.W, "$W$", "-")):
        ax_w.plot(t, minmax(values), style, label=label)
    ax_w.set_xlabel("timestep t")
    ax_w.set_ylabel("normalized weight")
    ax_w.set_title(f"prior weight (m={prior.m:g}, s={prior.s:g})")
    ax_w.legend(frameon=False)
    N = curve.size
    ax_t.plot(np.arange(1, N + 1) / N, curve, color="C3")
    ax_t.set_xlabel("iteration i / N")
    ax_t.set_ylabel("t(i)")
    ax_t.set_ylim(0, prior.T)
    ax_t.set_title("timestep schedule")
    return save(fig, path)


def plot_timestep_curves(curves: Mapping[str, np.ndarray], T: int, path: str | Path) -> Path:
    fig, ax = new_figure()
    for name, t in curves.items():
        i = np.arange(1, t.size + 1)
        random_like = t.size > 1 and np.any(np.diff(t) > 0)
        if random_like:
            ax.plot(i, t, ".", ms=1.0, alpha=0.35, label=name)
        else:
            ax.plot(i, t, label=name)
    ax.set_xlabel("iteration i")
    ax.set_ylabel("timestep t")
    ax.set_ylim(0, T)
    ax.legend(frameon=False, markerscale=6)
    return save(fig, path)


def plot_distance_curves(curves: Mapping[str, np.ndarray], tau: float, path: str | Path) -> Path:
    """Median (over seeds) distance to the nearest mode against iteration."""
    fig, ax = new_figure()
    for name, d in curves.items():
        ax.plot(np.arange(1, d.size + 1), d, label=name)
    ax.axhline(tau, color="0.5", lw=0.8, ls="--", label=f"tau={tau:g}")
    ax.set_yscale("log")
    ax.set_xlabel("iteration i")
    ax.set_ylabel("median distance to nearest mode")
    ax.legend(frameon=False)
    return save(fig, path)


def plot_coverage(reports: Mapping, path: str | Path) -> Path:
    """Stacked bars: runs per mode, unconverged and diverged, per sampler."""
    fig, ax = new_figure(width=max(4.8, 0.8 * len(reports) + 2))
    names = list(reports)
    x = np.arange(len(names))
    bottom = np.zeros(len(names))
    K = len(next(iter(reports.values())).counts) if reports else 0
    for k in range(K):
        vals = np.array([reports[n].counts[k] for n in names], dtype=float)
        ax.bar(x, vals, bottom=bottom, label=f"mode {k + 1}")
        bottom += vals
    for attr, color in (("unconverged", "0.6"), ("diverged", "k")):
        vals = np.array([getattr(reports[n], attr) for n in names], dtype=float)
        if vals.any():
            ax.bar(x, vals, bottom=bottom, color=color, label=attr)
            bottom += vals
    ax.set_xticks(x, names, rotation=30, ha="right")
    ax.set_ylabel("runs")
    ax.legend(frameon=False, ncols=2)
    return save(fig, path)


def plot_first_passage(reports: Mapping, path: str | Path) -> Path:
    fig, ax = new_figure(width=max(4.8, 0.8 * len(reports) + 2))
    names = list(reports)
    data = [[p for p in reports[n].first_passage if p is not None] for n in names]
    positions = [k for k, d in enumerate(data) if d]
    if positions:
        ax.boxplot([data[k] for k in positions], positions=positions, widths=0.5)
    for k, n in enumerate(names):
        ax.annotate(f"{reports[n].n_censored} cens.", (k, 0), xycoords=("data", "axes fraction"), ha="center", va="bottom", fontsize=7)
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_xlim(-0.6, len(names) - 0.4)
    ax.set_ylabel("first-passage iteration")
    return save(fig, path)


def plot_spectrum(report, path: str | Path) -> Path:
    fig, ax = new_figure()
    power = np.where(report.power > 0, report.power, np.nan)
    ax.plot(report.radii, power, "o-", ms=2.5)
    ax.set_yscale("log")
    ax.set_xlabel("radial frequency (bins)")
    ax.set_ylabel("mean power")
    ax.set_title(f"low-frequency fraction {report.low_freq_fraction:.3f}")
    return save(fig, path)
