"""Sweep execution: one optimization run per (sampler, seed), plus exports.

Output layout under the run directory::

    manifest.json
    {name}_summary.csv
    trajectories/{sampler}_seed{seed}.csv
    schedules/{sampler}_weights.csv      # prior-weighted samplers
    schedules/{sampler}_timesteps.csv    # deterministic samplers
    reports/{name}-{sampler}_diversity.json
    reports/{name}-{sampler}_convergence.json
    figures/*.png                        # written by render_report
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from tpsds import __version__
from tpsds.config import ExperimentConfig, parse_config
from tpsds.diagnostics import (
    ConvergenceReport,
    DiversityReport,
    convergence_from_passages,
    coverage_from_distances,
    first_passage,
)
from tpsds.diffusion import build_schedule
from tpsds.oracle import MixtureDenoiser
from tpsds.scheduling import TimePrioritized, build_prior_weight
from tpsds.sds import DivergenceError, SdsConfig, TrajectoryRecord, optimize
from tpsds.tables import read_csv, write_csv, write_timestep_table, write_weight_table

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "TPSDS_OUTPUT_DIR"


def derive_run_seed(master_seed: int, sampler_name: str, seed: int) -> int:
    """64-bit stream seed for one run: SHA-256 of ``"master/sampler/seed"``.

    Depends only on its own triple, so adding or reordering samplers leaves
    every other run's stream untouched.
    """
    digest = hashlib.sha256(f"{master_seed}/{sampler_name}/{seed}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def trajectory_filename(sampler: str, seed: int) -> str:
    return f"{sampler}_seed{seed}.csv"


def trajectory_header(K: int) -> list[str]:
    return ["run_id", "seed", "sampler", "i", "t", "grad_norm", "x0_loss", *(f"dist_mode_{k + 1}" for k in range(K))]


def write_trajectory(path: Path, record: TrajectoryRecord, means: np.ndarray, run_id: str) -> Path:
    dists = record.mode_distances(means)
    rows = (
        [run_id, record.seed, record.sampler, int(record.i[k]), int(record.t[k]), record.grad_norm[k], record.x0_loss[k], *dists[k]]
        for k in range(len(record))
    )
    return write_csv(path, trajectory_header(means.shape[0]), rows)


@dataclass
class RunResult:
    sampler: str
    seed: int
    run_seed: int
    status: str  # "completed" | "diverged"
    rows: int
    failure_iteration: int | None
    failure_t: int | None
    final_distances: list[float]
    first_passage: int | None
    file: str


def execute_run(config: ExperimentConfig, sampler_name: str, seed: int, out_dir: str | Path) -> RunResult:
    """Run one (sampler, seed) pair and write its trajectory CSV."""
    out_dir = Path(out_dir)
    schedule = config.schedule()
    spec = next(s for s in config.samplers if s.name == sampler_name)
    sampler = config.build_samplers(schedule)[spec.name]
    denoiser = MixtureDenoiser(config.mixture, schedule)
    run_seed = derive_run_seed(config.master_seed, sampler_name, seed)
    jitter_rng = np.random.default_rng([run_seed, 1])
    theta0 = config.theta0.build(config.mixture.dim, jitter_rng)
    sds = SdsConfig(
        w_rule=config.sds.w_rule, lr=config.sds.lr, N=config.sds.N, grad_samples=config.sds.grad_samples, seed=run_seed
    )
    failure_i = failure_t = None
    try:
        _, record = optimize(schedule, denoiser, sampler, theta0, sds)
        status = "completed"
    except DivergenceError as exc:
        record = exc.trajectory
        status, failure_i, failure_t = "diverged", exc.i, exc.t
        log.warning("run %s seed %d diverged at i=%s t=%s", sampler_name, seed, exc.i, exc.t)
    record.sampler, record.seed = sampler_name, seed
    rel = Path("trajectories") / trajectory_filename(sampler_name, seed)
    write_trajectory(out_dir / rel, record, config.mixture.means, f"{sampler_name}-seed{seed}")
    final = config.mixture.mode_distances(record.final_theta)
    if status == "diverged":
        final = np.full(config.mixture.K, np.inf)
    fp = first_passage(record.mode_distances(config.mixture.means), config.tau) if len(record) else None
    return RunResult(
        sampler=sampler_name,
        seed=seed,
        run_seed=run_seed,
        status=status,
        rows=len(record),
        failure_iteration=failure_i,
        failure_t=failure_t,
        final_distances=[float(x) for x in final],
        first_passage=fp,
        file=rel.as_posix(),
    )


def _execute_packed(args):
    return execute_run(*args)


def summarize(results: list[RunResult], K: int, N: int, tau: float) -> tuple[DiversityReport, ConvergenceReport]:
    dists = np.array([r.final_distances for r in results]).reshape(len(results), K)
    diversity = coverage_from_distances(dists, tau, [r.status != "completed" for r in results])
    convergence = convergence_from_passages([r.first_passage for r in results], N, tau)
    return diversity, convergence


SUMMARY_HEADER_BASE = [
    "sampler", "n_seeds", "converged", "unconverged", "diverged", "entropy",
    "median_first_passage", "q25_first_passage", "q75_first_passage", "n_censored", "median_censored_at_N",
]


def _summary_row(name: str, div: DiversityReport, conv: ConvergenceReport) -> list[Any]:
    opt = lambda v: "" if v is None else v  # noqa: E731
    return [
        name, div.n_seeds, sum(div.counts), div.unconverged, div.diverged, div.entropy,
        opt(conv.median), opt(conv.q25), opt(conv.q75), conv.n_censored, conv.median_censored_at_N, *div.counts,
    ]


def _write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def write_schedule_tables(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    paths = []
    for name, sampler in config.build_samplers().items():
        if isinstance(sampler, TimePrioritized):
            paths.append(write_weight_table(out_dir / "schedules" / f"{name}_weights.csv", sampler.prior))
        if sampler.deterministic:
            paths.append(write_timestep_table(out_dir / "schedules" / f"{name}_timesteps.csv", sampler.curve(config.sds.N)))
    return paths


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    workers: int | None = None,
    dry_run: bool = False,
) -> tuple[int, dict[str, Any]]:
    """Execute every (sampler, seed) run of ``config``; returns ``(exit_status, manifest)``.

    Divergent runs are recorded in the manifest and do not stop the sweep.
    The output directory is, in priority order: ``out_dir``, the
    ``TPSDS_OUTPUT_DIR`` environment variable, ``config.output_dir``.
    """
    out = Path(out_dir or os.environ.get(OUTPUT_DIR_ENV) or config.output_dir)
    workers = workers or config.workers
    jobs = [(s.name, seed) for s in config.samplers for seed in config.seeds]
    if dry_run:
        return 0, {"config_hash": config.config_hash(), "runs": len(jobs), "output_dir": str(out), "dry_run": True}

    started = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    files = [p.relative_to(out).as_posix() for p in write_schedule_tables(config, out)]

    packed = [(config, name, seed, out) for name, seed in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute_packed, packed))
    else:
        results = [_execute_packed(args) for args in packed]
    files += [r.file for r in results]

    K, N = config.mixture.K, config.sds.N
    summary_rows = []
    reports = {}
    for spec in config.samplers:
        mine = [r for r in results if r.sampler == spec.name]
        div, conv = summarize(mine, K, N, config.tau)
        run_set = f"{config.name}-{spec.name}"
        for kind, rep in (("diversity", div), ("convergence", conv)):
            p = _write_json(out / "reports" / f"{run_set}_{kind}.json", {"sampler": spec.name, **rep.to_dict()})
            files.append(p.relative_to(out).as_posix())
        reports[spec.name] = {"diversity": f"reports/{run_set}_diversity.json", "convergence": f"reports/{run_set}_convergence.json"}
        summary_rows.append(_summary_row(spec.name, div, conv))
    summary = write_csv(
        out / f"{config.name}_summary.csv",
        SUMMARY_HEADER_BASE + [f"mode_{k + 1}" for k in range(K)],
        summary_rows,
    )
    files.append(summary.relative_to(out).as_posix())

    manifest = {
        "name": config.name,
        "config_hash": config.config_hash(),
        "config": config.canonical(),
        "versions": {
            "tpsds": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "wall_clock_seconds": time.perf_counter() - started,
        "workers": workers,
        "files": sorted(files),
        "reports": reports,
        "runs": [asdict(r) for r in results],
        "failures": [
            {"sampler": r.sampler, "seed": r.seed, "iteration": r.failure_iteration, "t": r.failure_t}
            for r in results
            if r.status != "completed"
        ],
    }
    for run in manifest["runs"]:
        run["final_distances"] = [d if np.isfinite(d) else None for d in run["final_distances"]]
    _write_json(out / "manifest.json", manifest)
    return 0, manifest


def load_run_dir(run_dir: str | Path) -> tuple[dict[str, Any], ExperimentConfig]:
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    return manifest, parse_config(manifest["config"])


def read_trajectory_csv(path: str | Path) -> dict[str, np.ndarray]:
    header, rows = read_csv(path)
    cols = list(zip(*rows)) if rows else [[] for _ in header]
    out: dict[str, np.ndarray] = {}
    for name, col in zip(header, cols):
        if name in ("run_id", "sampler"):
            out[name] = np.array(col, dtype=object)
        elif name in ("seed", "i", "t"):
            out[name] = np.array(col, dtype=np.int64)
        else:
            out[name] = np.array(col, dtype=np.float64)
    return out


def render_report(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Rebuild per-sampler reports from the trajectory CSVs of a finished run and draw figures."""
    from tpsds import plotting

    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir
    manifest, config = load_run_dir(run_dir)
    K, N, tau = config.mixture.K, config.sds.N, config.tau
    dist_cols = [f"dist_mode_{k + 1}" for k in range(K)]

    t_curves: dict[str, np.ndarray] = {}
    dist_curves: dict[str, np.ndarray] = {}
    reports: dict[str, tuple[DiversityReport, ConvergenceReport]] = {}
    rows = []
    for spec in config.samplers:
        runs = [r for r in manifest["runs"] if r["sampler"] == spec.name]
        final, passages, bad, nearest = [], [], [], []
        for r in runs:
            tr = read_trajectory_csv(run_dir / r["file"])
            d = np.stack([tr[c] for c in dist_cols], axis=1) if tr["i"].size else np.zeros((0, K))
            complete = tr["i"].size == N and r["status"] == "completed"
            bad.append(not complete)
            final.append(d[-1] if complete else np.full(K, np.inf))
            passages.append(first_passage(d, tau) if d.size else None)
            if complete:
                nearest.append(d.min(axis=1))
            t_curves.setdefault(spec.name, tr["t"])
        div = coverage_from_distances(np.array(final).reshape(len(runs), K), tau, bad)
        conv = convergence_from_passages(passages, N, tau)
        reports[spec.name] = (div, conv)
        if nearest:
            dist_curves[spec.name] = np.median(np.stack(nearest), axis=0)
        rows.append(_summary_row(spec.name, div, conv))

    paths = [
        write_csv(out / f"{config.name}_summary.csv", SUMMARY_HEADER_BASE + [f"mode_{k + 1}" for k in range(K)], rows)
    ]
    fig_dir = out / "figures"
    paths.append(plotting.plot_timestep_curves(t_curves, config.T, fig_dir / f"{config.name}_timesteps.png"))
    if dist_curves:
        paths.append(plotting.plot_distance_curves(dist_curves, tau, fig_dir / f"{config.name}_distance.png"))
    paths.append(plotting.plot_coverage({k: v[0] for k, v in reports.items()}, fig_dir / f"{config.name}_coverage.png"))
    paths.append(plotting.plot_first_passage({k: v[1] for k, v in reports.items()}, fig_dir / f"{config.name}_first_passage.png"))
    return paths


def export_schedule(
    kind: str,
    T: int,
    m: float,
    s: float,
    N: int,
    out_dir: str | Path,
    prefix: str = "schedule",
    figure: bool = True,
) -> list[Path]:
    """Write the prior-weight table, the ``t(i)`` curve and (optionally) a figure of both."""
    schedule = build_schedule(kind, T)
    prior = build_prior_weight(schedule, m, s)
    curve = TimePrioritized(prior).curve(N)
    out = Path(out_dir)
    paths = [
        write_weight_table(out / f"{prefix}_weights.csv", prior),
        write_timestep_table(out / f"{prefix}_timesteps.csv", curve),
    ]
    if figure:
        from tpsds import plotting

        paths.append(plotting.plot_prior(prior, curve, out / f"{prefix}_figure.png"))
    return paths


def main_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
