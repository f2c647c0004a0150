"""Command-line entry point.

``optclust simulate CONFIG`` runs a synthetic experiment grid and
``optclust dataset FILE CONFIG`` runs the stratified-sampling experiment on
a labeled delimited file.  Both write ``long.csv``, ``runtimes.csv`` and
``summary.csv`` into the output directory.

Environment overrides: ``OPTCLUST_WORKERS`` (worker processes) and
``OPTCLUST_OUTPUT_DIR`` (output directory); command-line flags win.

Exit codes: 0 success, 2 configuration error, 3 size-guard refusal, 4 I/O error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .clusterer import InfeasibleSizeError
from .core import OptclustError
from .experiment import ConfigError, load_config, run_dataset, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GUARD = 3
EXIT_IO = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optclust", description="Bayes-optimal clustering with missing features.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--force", action="store_true", help="allow exhaustive search for n > 22")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--quiet", action="store_true", help="do not print the summary table")

    sim = sub.add_parser("simulate", help="synthetic error-vs-missing-probability experiment")
    sim.add_argument("config")
    common(sim)
    ds = sub.add_parser("dataset", help="stratified-sampling experiment on a labeled file")
    ds.add_argument("file")
    ds.add_argument("config")
    common(ds)
    return p


def _env_int(name: str):
    v = os.environ.get(name)
    if v in (None, ""):
        return None
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{name}={v!r} is not an integer") from None


def _print_summary(result, stream):
    stream.write(f"{'setup':>8} {'p':>6} {'method':<14} {'mean':>8} {'se':>8} {'n':>5}\n")
    for row in result.summary:
        stream.write(
            f"{row['setup']:>8} {row['missing_prob']:>6.3f} {row['method']:<14} "
            f"{row['mean_error']:>8.4f} {row['se']:>8.4f} {row['count']:>5}\n"
        )


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.force:
            changes["force"] = True
        workers = args.workers if args.workers is not None else _env_int("OPTCLUST_WORKERS")
        if workers is not None:
            if workers < 1:
                raise ConfigError("workers must be >= 1")
            changes["workers"] = workers
        out = args.out or os.environ.get("OPTCLUST_OUTPUT_DIR") or cfg.output
        cfg = replace(cfg, **changes)
        if args.command == "simulate":
            result = run_experiment(cfg, out_dir=out)
        else:
            result = run_dataset(args.file, cfg, out_dir=out)
    except InfeasibleSizeError as exc:
        print(f"optclust: refused: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except OSError as exc:
        print(f"optclust: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, OptclustError) as exc:
        print(f"optclust: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet:
        _print_summary(result, sys.stdout)
    print(f"wrote {result.paths['long']}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
