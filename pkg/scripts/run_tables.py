"""Run the shipped table configs and print a compact comparison.

    python3 scripts/run_tables.py            # all tables
    python3 scripts/run_tables.py 1 8 --reps 5000
"""

import argparse
import time

from qnet_is.experiment import TABLE_IDS, apply_overrides, run_experiment, table_config, write_results
from qnet_is.oracle import OracleCache


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("tables", nargs="*", default=list(TABLE_IDS))
    ap.add_argument("--reps", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--outdir", default="results")
    args = ap.parse_args()
    cache = OracleCache(f"{args.outdir}/exact_cache.json")
    for tid in args.tables:
        configs = apply_overrides(table_config(tid), replications=args.reps, seed=args.seed)
        t0 = time.perf_counter()
        rows = [r for c in configs for r in run_experiment(c, exact_cache=cache)]
        elapsed = time.perf_counter() - t0
        write_results(f"{args.outdir}/table{tid}", configs, rows, {"wall_time": elapsed})
        print(f"table {tid} ({elapsed:.1f}s)")
        for r in rows:
            exact = r["exact_value"]
            z = (r["estimate"] - exact) / r["std_err"] if exact and r["std_err"] > 0 else float("nan")
            print(f"  {r['label']:>20} n={r['n']:<3} est={r['estimate']:.3e} se={r['std_err']:.2e}"
                  f" exact={exact if exact is None else format(exact, '.3e')} z={z:+.2f}")


if __name__ == "__main__":
    main()
