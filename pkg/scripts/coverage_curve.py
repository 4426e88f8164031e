"""Binned conditional coverage of LCR as n grows with h_n = c n^(-1/4).

Usage: python3 scripts/coverage_curve.py [--design ex1A] [--seeds 10] [--c 1.0] [--out curve.csv]
"""

import argparse

import numpy as np

from lcp.harness.experiments import LocalizerConfig, conditional_coverage_curve
from lcp.harness.generators import SyntheticSpec
from lcp.harness.io import write_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--design", default="ex1A")
    ap.add_argument("--alpha", type=float, default=0.9)
    ap.add_argument("--sizes", default="500,2000,8000")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--out", default="coverage_curve.csv")
    args = ap.parse_args()
    centers = np.linspace(-2, 2, 11)
    rows = []
    for n in (int(s) for s in args.sizes.split(",")):
        loc = LocalizerConfig("euclidean", args.c * n**-0.25)
        curves = [
            conditional_coverage_curve(
                SyntheticSpec(args.design, n_train=n, n_calib=n, n_test=4000, seed=s), "LCR", loc, args.alpha, centers, 0.4
            ).coverage
            for s in range(args.seeds)
        ]
        mean = np.mean(curves, axis=0)
        rows += [{"n": n, "x": x, "coverage": c} for x, c in zip(centers, mean)]
        print(f"n={n}: max deviation {np.max(np.abs(mean - args.alpha)):.4f}")
    write_rows(args.out, rows)


if __name__ == "__main__":
    main()
