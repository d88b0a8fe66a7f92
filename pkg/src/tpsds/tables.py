"""Delimited output. Floats use the shortest round-trip repr so files are byte-stable."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np

from tpsds.scheduling import PriorWeight


def fmt(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def minmax(a: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]; a constant column maps to zeros."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


WEIGHT_HEADER = ["t", "W_d", "W_p", "W", "cum", "W_d_norm", "W_p_norm", "W_norm"]


def weight_table_rows(prior: PriorWeight):
    t = np.arange(1, prior.T + 1)
    cols = [prior.W_d, prior.W_p, prior.W, prior.cum, minmax(prior.W_d), minmax(prior.W_p), minmax(prior.W)]
    for k in range(prior.T):
        yield [int(t[k]), *(c[k] for c in cols)]


def write_weight_table(path: str | Path, prior: PriorWeight) -> Path:
    return write_csv(path, WEIGHT_HEADER, weight_table_rows(prior))


def write_timestep_table(path: str | Path, curve: np.ndarray) -> Path:
    """``(i, t, t_norm)`` rows; ``t_norm`` is min-max scaled over the curve itself, like the weight columns."""
    curve = np.asarray(curve)
    norm = minmax(curve)
    return write_csv(path, ["i", "t", "t_norm"], ([k + 1, int(curve[k]), float(norm[k])] for k in range(curve.size)))
