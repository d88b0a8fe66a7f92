"""Command line entry point: ``tpsds run|export-schedule|spectrum|report``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from tpsds.config import PRESETS, ConfigError, resolve_config
from tpsds.diagnostics import radial_power_spectrum
from tpsds.runner import OUTPUT_DIR_ENV, export_schedule, main_logging, render_report, run_experiment
from tpsds.tables import write_csv


def _default_out(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_DIR_ENV) or ".")


def cmd_run(args) -> int:
    config = resolve_config(args.config)
    if args.seed_override is not None:
        config = config.with_overrides(master_seed=args.seed_override)
    status, manifest = run_experiment(config, out_dir=args.out, workers=args.workers, dry_run=args.dry_run)
    if args.dry_run:
        print(f"config OK: {config.name}, {manifest['runs']} runs -> {manifest['output_dir']}")
        return status
    n_fail = len(manifest["failures"])
    print(f"{config.name}: {len(manifest['runs'])} runs, {n_fail} diverged, {len(manifest['files'])} files")
    return status


def cmd_export_schedule(args) -> int:
    for p in export_schedule(args.kind, args.T, args.m, args.s, args.N, _default_out(args.out), figure=not args.no_figure):
        print(p)
    return 0


def cmd_spectrum(args) -> int:
    grid = np.loadtxt(args.grid, delimiter=",", ndmin=2)
    report = radial_power_spectrum(grid)
    out = _default_out(args.out)
    stem = Path(args.grid).stem
    csv_path = write_csv(
        out / f"{stem}_spectrum.csv",
        ["radius", "power", "count"],
        zip(report.radii.tolist(), report.power.tolist(), report.counts.tolist()),
    )
    json_path = out / f"{stem}_spectrum.json"
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(csv_path)
    print(json_path)
    if not args.no_figure:
        from tpsds.plotting import plot_spectrum

        print(plot_spectrum(report, out / f"{stem}_spectrum.png"))
    print(f"low-frequency fraction: {report.low_freq_fraction!r}")
    return 0


def cmd_report(args) -> int:
    for p in render_report(args.run_dir, args.out):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpsds", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a sweep from a JSON config or a preset name")
    p.add_argument("config", help=f"path to config.json or one of: {', '.join(PRESETS)}")
    p.add_argument("--workers", type=int, default=None, help="parallel worker processes")
    p.add_argument("--seed-override", type=int, default=None, help="replace the config's master_seed")
    p.add_argument("--dry-run", action="store_true", help="validate the config only")
    p.add_argument("--out", default=None, help=f"output directory (else ${OUTPUT_DIR_ENV}, else config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("export-schedule", help="write W(t) table and t(i) curve")
    p.add_argument("--kind", default="ddpm_linear", choices=["ddpm_linear", "cosine"])
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--m", type=float, default=500.0)
    p.add_argument("--s", type=float, default=125.0)
    p.add_argument("--N", type=int, default=10000)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_export_schedule)

    p = sub.add_parser("spectrum", help="radially averaged power spectrum of a CSV grid")
    p.add_argument("grid")
    p.add_argument("--out", default=None)
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("report", help="summaries and figures for a finished run directory")
    p.add_argument("run_dir")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    main_logging(args.verbose)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
