"""``sgmcmc`` command line.

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigurationError, NumericError, ParseError, StepError
from .experiments import EXPERIMENTS, load_config, parse_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_DIVERGED = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgmcmc", description="Run stochastic-gradient MCMC experiments.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="INI config file (defaults are used when omitted)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, help="base seed; chain i uses seed + i")
    parser.add_argument("--steps", type=int, help="override n_steps")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config, args.experiment, args.seed, args.steps)
        else:
            cfg = parse_config("", args.experiment, args.seed, args.steps)
    except (ConfigurationError, ParseError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(cfg, args.out)
    except (ConfigurationError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, StepError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    if result.failures:
        for check, subject, value, threshold, _ in result.failures:
            print(f"FAIL {check} {subject}: {value:.3e} (threshold {threshold:g})", file=sys.stderr)
        return EXIT_VERIFY
    if result.diverged:
        print("numeric divergence: at least one chain left the finite range", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {result.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
