#!/usr/bin/env python3
"""Run the four-arm convergence comparison for one plant and export the CSVs.

Equivalent to ``infoilqr compare`` but convenient to edit for ad-hoc studies.

    python scripts/run_comparison.py --plant pendulum --seed 0 --out results/compare
"""

import argparse
from pathlib import Path

from infoilqr.harness import ExperimentConfig, run_compare, write_compare_csv, export_run


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--plant", choices=("pendulum", "cartpole"), default="pendulum")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="results/compare")
    parser.add_argument("--horizon", type=int, default=None)
    args = parser.parse_args()

    config = ExperimentConfig(
        plant=args.plant,
        scenario="partial_noisy_averaged",
        observation="partial",
        horizon=args.horizon,
        seeds=(args.seed,),
    )
    out_dir = Path(args.out) / args.plant
    results = run_compare(config, args.seed)
    for scenario, records in results.items():
        for record in records:
            export_run(record, out_dir)
            print(
                f"{scenario}: {len(record.records)} iterations, "
                f"final cost {record.final_cost:.2f} ({record.termination})"
            )
    path = out_dir / f"compare_{args.plant}.csv"
    write_compare_csv(results, path)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
