"""Paired-seed comparison of networked and independent agents.

Both modes share the fixed landscape of the default config; only the run
seed varies. Prints one row per seed and a sign-test summary.

    python3 scripts/run_ablation.py --pairs 20 --out ablation.json
"""
import argparse
import json
import math
import time
from dataclasses import replace

from epinet import ExperimentConfig, run_experiment
from epinet.analysis import analyze


def sign_test_p(wins: int, n: int) -> float:
    """One-sided binomial p-value of at least ``wins`` successes out of ``n``."""
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2**n


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pairs", type=int, default=20)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()

    base = ExperimentConfig()
    rows = []
    t0 = time.perf_counter()
    for seed in range(args.first_seed, args.first_seed + args.pairs):
        row = {"seed": seed}
        for mode in ("networked", "independent"):
            rep = analyze(run_experiment(replace(base, seed=seed, mode=mode)).log)
            row[mode] = {k: rep[k] for k in ("duplication_rate", "coverage")}
            row[mode]["cumulative_significance"] = rep["cumulative_significance"][-1]
        row["independent_more_duplicated"] = row["independent"]["duplication_rate"] > row["networked"]["duplication_rate"]
        rows.append(row)
        print(
            f"seed {seed:3d}  dup networked {row['networked']['duplication_rate']:.4f}  "
            f"independent {row['independent']['duplication_rate']:.4f}  "
            f"coverage {row['networked']['coverage']:.3f}/{row['independent']['coverage']:.3f}",
            flush=True,
        )
    wins = sum(r["independent_more_duplicated"] for r in rows)
    summary = {
        "pairs": len(rows),
        "independent_more_duplicated": wins,
        "sign_test_p": sign_test_p(wins, len(rows)),
        "seconds": time.perf_counter() - t0,
        "rows": rows,
    }
    print(f"{wins}/{len(rows)} pairs, one-sided sign test p = {summary['sign_test_p']:.2e}, {summary['seconds']:.0f}s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(summary, fh, indent=2)


if __name__ == "__main__":
    main()
