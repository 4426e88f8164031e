"""Monte Carlo for the two failure modes of the unadjusted level, plus marginal coverage.

Usage: python3 scripts/counterexamples.py [--reps 2000] [--seed 0]
"""

import argparse

from lcp.harness.experiments import marginal_coverage_mc, prop1_experiment, prop2_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print("isolated test point:", prop1_experiment(reps=args.reps, seed=args.seed))
    for p in (1, 5):
        print(f"discrete design p={p}:", prop2_experiment(p=p, reps=args.reps, tests_per_rep=10, seed=args.seed))
    for rule in ("lcp", "randomized", "naive"):
        cov, se = marginal_coverage_mc(reps=args.reps, rule=rule, seed=args.seed)
        print(f"marginal coverage ({rule}): {cov:.4f} (SE {se:.4f})")


if __name__ == "__main__":
    main()
