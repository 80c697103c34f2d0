"""Command line entry point: ``physreg {run,dim,sweep,approx-error} CONFIG``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import __version__
from .bench import SWEEP_COLUMNS, approx_rows, dim_reports, emit_csv, run_experiment, summary_table, sweep_rows, write_rows
from .config import load_config
from .errors import ConfigError
from .variety import write_dim_csv

log = logging.getLogger("physreg")


def _parser():
    p = argparse.ArgumentParser(prog="physreg", description="Physics-informed regression benchmarks.")
    p.add_argument("--version", action="version", version=f"physreg {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment config (.ini)")
    common.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    common.add_argument("--out", help="output CSV path (default: the config's output key or stdout)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("--quiet", action="store_true", help="suppress the summary and progress output")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="fit RR and PILR on every cell and seed")
    sub.add_parser("dim", parents=[common], help="variety dimension for every basis / trial set")
    sub.add_parser("sweep", parents=[common], help="validation MSE of every search candidate")
    sub.add_parser("approx-error", parents=[common], help="best-in-span error per basis and seed")
    return p


def _out_path(args, cfg, suffix):
    path = args.out or (cfg.output and _with_suffix(cfg.output, suffix))
    if path:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
    return path


def _with_suffix(path, suffix):
    if not suffix:
        return path
    root, ext = os.path.splitext(path)
    return f"{root}_{suffix}{ext or '.csv'}"


def _stdout_or(path, write):
    write(path or sys.stdout)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seeds=[args.seed])
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "run":
            progress = None if args.quiet else (lambda label, seed, rows: log.info("%s seed %s done", label, seed))
            report = run_experiment(cfg, jobs=args.jobs, progress=progress)
            path = _out_path(args, cfg, "")
            _stdout_or(path, lambda p: emit_csv(report, p))
            if not args.quiet:
                print(summary_table(report), file=sys.stderr if not path else sys.stdout)
            failed = [r for r in report.rows if r.get("status") != "ok"]
            return 2 if failed and len(failed) == len(report.rows) else 0
        if args.command == "dim":
            reps = dim_reports(cfg)
            _stdout_or(_out_path(args, cfg, "dim"), lambda p: write_dim_csv(reps, p))
            if not args.quiet:
                for name, rep in reps:
                    print(f"{name}: d={rep.d} d_V={rep.d_V} ({rep.method})", file=sys.stderr)
            return 0
        if args.command == "sweep":
            rows = sweep_rows(cfg)
            _stdout_or(_out_path(args, cfg, "sweep"), lambda p: write_rows(rows, SWEEP_COLUMNS, p))
            return 0
        rows = approx_rows(cfg)
        cols = ["experiment", "d", "n", "seed", "approx_error"]
        _stdout_or(_out_path(args, cfg, "approx"), lambda p: write_rows(rows, cols, p))
        if not args.quiet:
            for d in sorted({r["d"] for r in rows}):
                vals = [r["approx_error"] for r in rows if r["d"] == d]
                print(f"d={d}: mean approximation error {sum(vals) / len(vals):.6g}", file=sys.stderr)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ArithmeticError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
