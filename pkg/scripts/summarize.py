#!/usr/bin/env python3
"""Print per-preset summaries of the CSVs written by ``run_experiments.py``."""

import argparse
import csv
from collections import defaultdict
from pathlib import Path

import numpy as np


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def synthetic_1d(out):
    groups = defaultdict(list)
    for r in rows(out / "metrics.csv"):
        groups[r["target"], r["preset"]].append(float(r["kl"]))
    print("synthetic-1d: KL per chain")
    for (target, preset), kl in sorted(groups.items()):
        print(f"  {target:<10} {preset:<13} " + "  ".join(f"{v:.4f}" for v in kl) + f"   mean {np.mean(kl):.4f}")


def synthetic_2d(out):
    print("synthetic-2d: tau(theta_1), mean error in MC standard errors")
    for r in rows(out / "metrics.csv"):
        z = [(float(r[f"mean_{i}"]) - float(r[f"truth_{i}"])) / float(r[f"mcse_{i}"]) for i in range(2)]
        print(f"  {r['preset']:<8} chain {r['chain']}  tau {float(r['autocorr_time']):7.1f}   "
              f"z = ({z[0]:+.1f}, {z[1]:+.1f})")


def verify(out):
    checks = rows(out / "verify.csv")
    failed = [c for c in checks if c["passed"] != "true"]
    print(f"verify: {len(checks) - len(failed)}/{len(checks)} checks pass")
    for c in failed:
        print(f"  FAIL {c['check']} {c['subject']} value {float(c['value']):.3e}")


def lda(out):
    print("lda: first -> final held-out perplexity")
    for r in rows(out / "metrics.csv"):
        first, final = float(r["first_perplexity"]), float(r["final_perplexity"])
        print(f"  {r['preset']:<8} seed {r['seed']}  {first:7.2f} -> {final:7.2f}  ({100 * (1 - final / first):.0f}% lower)")


SUMMARIES = {"synthetic-1d": synthetic_1d, "synthetic-2d": synthetic_2d, "verify": verify, "lda": lda}


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results")
    args = parser.parse_args()
    for name, fn in SUMMARIES.items():
        path = Path(args.out) / name
        if (path / "config.ini").exists():
            fn(path)
