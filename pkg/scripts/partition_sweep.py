"""Replay one all-type-c stream under coarser and coarser partitionings.

    python scripts/partition_sweep.py --size 400 --counts 10,5,2,1
"""

import argparse
from pathlib import Path

from icd_oracle.generate import GeneratorParams, generate_random_dag
from icd_oracle.harness import ScenarioConfig, sweep_partitions, write_metrics_csv
from icd_oracle.oracle import OracleConfig
from icd_oracle.reduction import nested_groupings


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=400, choices=[200, 400, 600, 800])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--counts", default="10,5,2,1")
    ap.add_argument("--period", type=float, default=0.1)
    ap.add_argument("--mode", choices=["deterministic", "wallclock"], default="deterministic")
    ap.add_argument("--out", type=Path, default=Path("results/partitions.csv"))
    args = ap.parse_args()

    model = generate_random_dag(GeneratorParams.benchmark(args.size, args.seed))
    cfg = ScenarioConfig.benchmark(args.size, seed=args.seed, mix=(0, 0, 1), p_mcr_s=args.period)
    counts = [int(k) for k in args.counts.split(",")]
    rows = sweep_partitions(model, cfg, nested_groupings(model, counts), OracleConfig(exact_mixed=False),
                            args.mode)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", encoding="utf-8") as fh:
        write_metrics_csv(fh, [r.report for r in rows], {"size": args.size, "seed": args.seed})
    print(f"{'k':>3} {'type_b%':>8} {'type_ab%':>9} {'fallback%':>10} {'acc_stall':>14}")
    for r in rows:
        print(f"{r.k:>3} {r.type_b_pct:>8.1f} {r.type_ab_pct:>9.1f} {r.fallback_pct:>10.1f} {r.accumulated_stall:>14}")


if __name__ == "__main__":
    main()
