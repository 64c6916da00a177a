#!/usr/bin/env python3
"""Run the shipped experiment configs through the ``sgmcmc`` CLI.

    python scripts/run_experiments.py                 # everything, into results/
    python scripts/run_experiments.py verify lda      # a subset
    python scripts/run_experiments.py --steps 100000  # shorter synthetic runs
"""

import argparse
import sys
import time
from pathlib import Path

from sgmcmc.cli import main as cli_main

HERE = Path(__file__).resolve().parent
CONFIGS = {
    "synthetic-1d": "synthetic_1d.ini",
    "synthetic-2d": "synthetic_2d.ini",
    "verify": "verify.ini",
    "lda": "lda.ini",
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("experiments", nargs="*", help=f"any of {', '.join(CONFIGS)} (default: all)")
    parser.add_argument("--out", default="results")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--steps", type=int, help="override n_steps for the synthetic runs")
    args = parser.parse_args(argv)
    unknown = set(args.experiments) - set(CONFIGS)
    if unknown:
        parser.error(f"unknown experiments: {', '.join(sorted(unknown))}")

    status = 0
    for name in args.experiments or list(CONFIGS):
        cmd = [name, "--config", str(HERE / "configs" / CONFIGS[name]), "--out", str(Path(args.out) / name)]
        if args.seed is not None:
            cmd += ["--seed", str(args.seed)]
        if args.steps is not None and name.startswith("synthetic"):
            cmd += ["--steps", str(args.steps)]
        start = time.perf_counter()
        code = cli_main(cmd)
        print(f"{name}: exit {code} after {time.perf_counter() - start:.0f}s")
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
