"""Command-line entry point.

    perfdrift run|baseline|sensitivity|export-data [--config FILE] [--set key=value ...]
              [--seed N] [--output-dir DIR] [--jobs N]
    perfdrift grad-check

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import build_simulation_config, load_config, parse_override, resolve, write_manifest
from .errors import ConfigError
from .gdan import gradient_report
from .simulate import aggregate, emit_metrics_csv, emit_raw_csv, export_datasets, run_repetitions

GRAD_TOL = 1e-4
EXPERIMENTS = ("run", "baseline", "sensitivity", "export-data")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfdrift", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="TOML file with dotted keys")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output-dir", type=Path)
        sp.add_argument("--jobs", type=int, default=1, help="parallel repetitions (results do not change)")
    gc = sub.add_parser("grad-check")
    gc.add_argument("--seeds", type=int, default=20)
    gc.add_argument("--corrupt", type=float, default=1.0, help=argparse.SUPPRESS)
    return p


def _resolve(args) -> dict:
    file_values = load_config(args.config) if args.config is not None else {}
    overrides = dict(parse_override(item) for item in args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    overrides["meta.command"] = args.command
    overrides["meta.version"] = __version__
    return resolve(file_values, overrides)


def _output_dir(args, flat: dict) -> Path:
    if args.output_dir is not None:
        out = args.output_dir
    else:
        out = Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-{flat['seed']}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _experiment(args) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    flat = _resolve(args)
    config = build_simulation_config(flat)
    if args.command == "sensitivity":
        sizes = flat["sensitivity.sizes"]
        if not sizes or not all(isinstance(n, int) and not isinstance(n, bool) for n in sizes):
            raise ConfigError("'sensitivity.sizes' must be a non-empty list of integers")
        configs = {n: build_simulation_config({**flat, "n_points": n}) for n in sizes}
    if args.command == "export-data":
        iters = flat["export.iterations"]
        if not iters or not all(isinstance(i, int) and 0 <= i <= config.n_iterations for i in iters):
            raise ConfigError(f"'export.iterations' must list integers in [0, {config.n_iterations}]")

    out = _output_dir(args, flat)
    if args.command in ("run", "baseline"):
        config = replace(config, baseline=args.command == "baseline")
        results = run_repetitions(config, args.jobs)
        emit_metrics_csv(aggregate(results), out / "metrics.csv")
        if flat["raw_dump"]:
            emit_raw_csv(results, out / "metrics_raw.csv")
    elif args.command == "sensitivity":
        for n, cfg in configs.items():
            emit_metrics_csv(aggregate(run_repetitions(cfg, args.jobs)), out / f"metrics_{n}.csv")
    else:
        for path in export_datasets(config, iters, out):
            print(path)
    write_manifest(flat, out / "run_manifest.toml")
    print(f"wrote {out}")
    return 0


def _grad_check(args) -> int:
    ok = True
    for name, err in gradient_report(seeds=args.seeds, corrupt=args.corrupt):
        passed = err < GRAD_TOL
        ok &= passed
        print(f"{name:24s} max_rel_err={err:.3e} {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "grad-check":
            return _grad_check(args)
        return _experiment(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any runtime failure maps to exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
