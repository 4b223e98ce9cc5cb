"""Confidence-interval coverage of the subsolution estimator over many seeds.

The estimator is unbiased but its per-replication values are right-skewed,
so a single seed can miss the exact value; this shows how often.

    python3 scripts/coverage_study.py --seeds 30 --reps 20000 --tables 1 4 8
"""

import argparse

import numpy as np

from qnet_is.experiment import make_kernel, table_config
from qnet_is.oracle import exact_probability
from qnet_is.sampler import estimate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=30)
    ap.add_argument("--reps", type=int, default=20000)
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--tables", nargs="*", default=["1", "4", "5", "6", "8", "9"])
    args = ap.parse_args()
    for tid in args.tables:
        configs = table_config(tid)
        # table 1 lists several eps values; use the eps = 0.02 runs
        cfg = next((c for c in configs if c.eps == 0.02), configs[0])
        model, target = cfg.build_model(), cfg.build_target()
        kernel, _ = make_kernel(cfg, model, target, args.n)
        exact = exact_probability(model, target, args.n)
        z, rel, means = [], [], []
        for seed in range(1, args.seeds + 1):
            s = estimate(model, target, args.n, kernel, args.reps, seed)
            z.append((s.mean - exact) / s.std_err)
            rel.append(s.relative_error)
            means.append(s.mean)
        z = np.array(z)
        print(f"table {tid}: coverage={np.mean(np.abs(z) < 1.96):.2f} mean z={z.mean():+.2f} "
              f"median rel err={np.median(rel):.3f} max rel err={max(rel):.3f} "
              f"grand mean/exact={np.mean(means) / exact:.3f}")


if __name__ == "__main__":
    main()
