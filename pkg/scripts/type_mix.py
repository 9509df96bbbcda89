"""Accumulated stall across the (a, b, c) type-mix simplex on a benchmark-shaped model.

    python scripts/type_mix.py --size 400 --resolution 3 --mode deterministic
"""

import argparse
from pathlib import Path

from icd_oracle.generate import GeneratorParams, generate_random_dag
from icd_oracle.harness import ScenarioConfig, mix_grid, sweep_type_mix, write_metrics_csv
from icd_oracle.oracle import OracleConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=400, choices=[100, 200, 400, 600, 800])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--resolution", type=int, default=3)
    ap.add_argument("--period", type=float, default=0.1)
    ap.add_argument("--mode", choices=["deterministic", "wallclock"], default="deterministic")
    ap.add_argument("--out", type=Path, default=Path("results/type_mix.csv"))
    args = ap.parse_args()

    model = generate_random_dag(GeneratorParams.benchmark(args.size, args.seed))
    cfg = ScenarioConfig.benchmark(args.size, seed=args.seed, p_mcr_s=args.period)
    sw = sweep_type_mix(model, cfg, args.resolution, OracleConfig(exact_mixed=False), args.mode)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", encoding="utf-8") as fh:
        write_metrics_csv(fh, sw.reports, {"size": args.size, "seed": args.seed, "mode": args.mode})
    print(f"{'a':>5} {'b':>5} {'c':>5} {'fallback%':>10} {'acc_stall':>14}")
    for mix, rep in zip(mix_grid(args.resolution), sw.reports):
        print(f"{mix[0]:>5.2f} {mix[1]:>5.2f} {mix[2]:>5.2f} {rep.fallback_pct:>10.1f} {rep.accumulated_stall:>14}")


if __name__ == "__main__":
    main()
