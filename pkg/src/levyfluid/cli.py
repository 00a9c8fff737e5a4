"""Command-line entry point.

Subcommands:

    levyfluid run --config FILE [--seed N] [--out DIR] [--workers K]
    levyfluid validate --config FILE
    levyfluid basis --m M --d D [--out FILE]

Exit codes: 0 pass, 1 verdict fail, 2 config error, 3 runtime blow-up.
The default worker count comes from the LEVYFLUID_WORKERS environment
variable (1 if unset).
"""

from __future__ import annotations

import argparse
import sys

from .basis import build_basis
from .config import ConfigError, config_hash, parse_config
from .experiments import default_workers, run_experiment

__all__ = ["main"]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="levyfluid",
        description="Spectral Galerkin lab for jump-driven nonlinear bipolar fluids",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a configured experiment")
    run.add_argument("--config", required=True, help="experiment config file")
    run.add_argument("--seed", type=int, default=None, help="override ensemble.seed")
    run.add_argument("--out", default=None, help="override the output directory")
    run.add_argument("--workers", type=int, default=None,
                     help="parallel path workers (default $LEVYFLUID_WORKERS or 1)")

    val = sub.add_parser("validate", help="parse and validate a config file")
    val.add_argument("--config", required=True)

    bas = sub.add_parser("basis", help="dump the mode table of a basis")
    bas.add_argument("--m", type=int, required=True, help="number of modes")
    bas.add_argument("--d", type=int, default=2, help="torus dimension (2 or 3)")
    bas.add_argument("--out", default=None, help="write JSON here instead of stdout")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)

    if args.command == "basis":
        try:
            basis = build_basis(args.m, args.d)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        text = basis.to_json()
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        else:
            print(text)
        return 0

    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["ensemble.seed"] = args.seed
    try:
        cfg = parse_config(args.config, overrides or None)
    except ConfigError as exc:
        for ln, key, msg in exc.problems:
            where = f"line {ln}: " if ln else ""
            print(f"config error: {where}{key}: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"ok: {cfg.experiment} (config hash {config_hash(cfg)[:16]})")
        return 0

    workers = args.workers if args.workers is not None else default_workers()
    code, summary = run_experiment(cfg, out_dir=args.out, workers=workers)
    print(f"{cfg.experiment}: {summary.get('verdict', 'FAIL')} (exit {code})")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
