"""Batch command-line entry point.

`qsdlab run` integrates an ensemble from a JSON config or a named preset
and writes CSV trajectories plus a JSON report; `qsdlab report` rebuilds
the aggregate report from a finished directory.  Exit codes: 0 success,
2 configuration or input problems, 3 numerical abort during integration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import PRESET_NAMES, ConfigError, RunConfig, preset
from .ensemble import run_ensemble
from .linalg import DensityValidationError
from .output import write_outputs
from .report import format_report, report_run_dir
from .trajectory import NumericalAbort

OUT_ENV_VAR = "QSDLAB_OUT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsdlab",
        description="Mixed-state quantum state diffusion simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="integrate an ensemble and write outputs")
    src = run_p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="path to a JSON run config")
    src.add_argument("--preset", help=f"one of: {', '.join(PRESET_NAMES)}")
    run_p.add_argument("--seed", type=int, help="override the config seed")
    run_p.add_argument("--n-traj", type=int, help="override the trajectory count")
    run_p.add_argument("--n-workers", type=int, help="override the worker count")
    run_p.add_argument("--dt", type=float, help="override the time step")
    run_p.add_argument("--t-max", type=float, help="override the final time")
    run_p.add_argument(
        "--out",
        help=f"output directory (default: ${OUT_ENV_VAR} or ./qsdlab-out)",
    )

    rep_p = sub.add_parser("report", help="summarize a finished run directory")
    rep_p.add_argument("--in", dest="run_dir", required=True, help="run directory")
    return parser


def _resolve_config(args) -> RunConfig:
    if args.preset is not None:
        cfg = preset(args.preset)
    else:
        cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.n_traj is not None:
        cfg.n_traj = args.n_traj
    if args.n_workers is not None:
        cfg.n_workers = args.n_workers
    if args.dt is not None:
        cfg.dt = args.dt
    if args.t_max is not None:
        cfg.t_max = args.t_max
    if args.out is not None:
        cfg.out_dir = args.out
    if cfg.out_dir is None:
        cfg.out_dir = os.environ.get(OUT_ENV_VAR, "qsdlab-out")
    return cfg.validate()


def _cmd_run(args) -> int:
    try:
        cfg = _resolve_config(args)
    except (ConfigError, DensityValidationError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_ensemble(cfg)
        paths = write_outputs(result, cfg.out_dir)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    with open(paths["ensemble"]) as fh:
        report = json.load(fh)
    print(format_report(report))
    print(f"outputs written to {cfg.out_dir}")
    return EXIT_OK


def _cmd_report(args) -> int:
    if not os.path.isdir(args.run_dir):
        print(f"error: no such run directory: {args.run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = report_run_dir(args.run_dir)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_path = os.path.join(args.run_dir, "report.json")
    with open(out_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(format_report(report))
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
