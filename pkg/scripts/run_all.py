#!/usr/bin/env python3
"""Run every experiment config in scripts/configs and summarize verdicts.

Usage: python scripts/run_all.py [--workers K] [--out-root DIR]

Each run writes its artifact bundle under the config's `out` directory
(relative paths are resolved against --out-root, default `results/`).
Exits nonzero if any experiment fails its verdict.
"""

import argparse
import sys
import time
from pathlib import Path

from levyfluid.config import parse_config
from levyfluid.experiments import default_workers, run_experiment

CONFIG_DIR = Path(__file__).parent / "configs"


def main(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out-root", default=".")
    parser.add_argument("--only", nargs="*", help="config stems to run")
    args = parser.parse_args(argv)
    workers = args.workers if args.workers is not None else default_workers()

    paths = sorted(CONFIG_DIR.glob("*.cfg"))
    if args.only:
        paths = [p for p in paths if p.stem in set(args.only)]
    worst = 0
    for path in paths:
        cfg = parse_config(path)
        out_dir = Path(args.out_root) / cfg.out
        t0 = time.time()
        code, summary = run_experiment(cfg, out_dir=out_dir, workers=workers)
        verdict = summary.get("verdict", "FAIL")
        print(f"{path.stem:<18} {verdict:<5} exit={code}  {time.time() - t0:6.1f}s  -> {out_dir}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
