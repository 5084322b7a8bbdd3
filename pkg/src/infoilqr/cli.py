"""Command-line interface for running experiments and verification checks.

Subcommands:

- ``run``: one scenario from a config file, single seed.
- ``ensemble``: every configured seed, plus a summary CSV.
- ``compare``: the four-arm convergence comparison for one plant.
- ``check``: the oracle/property verification suite.

Exit codes: 0 converged, 1 configuration error, 2 stopped at the iteration
limit, 3 divergence or identification failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .diagnostics import run_all_checks
from .harness import (
    ConfigError,
    ExperimentConfig,
    RunRecord,
    export_ensemble,
    export_run,
    load_config,
    resolve_output_dir,
    run_compare,
    run_ensemble,
    run_scenario,
    write_compare_csv,
)
from .optimizer import OptimizationError, SolveHooks
from .sysid import RolloutDataset

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MAX_ITERATIONS = 2
EXIT_DIVERGED = 3


def _dump_hooks(config: ExperimentConfig, out_dir: Path, seed: int) -> SolveHooks:
    dump_dir = out_dir / config.scenario / f"seed_{seed}" / "datasets"
    dump_dir.mkdir(parents=True, exist_ok=True)

    def on_dataset(iteration: int, dataset: RolloutDataset):
        dump_identification_dataset(dataset, dump_dir / f"iteration_{iteration:03d}.txt")

    return SolveHooks(on_dataset=on_dataset)


def dump_identification_dataset(dataset: RolloutDataset, path) -> None:
    """Columnar text dump: one line per (timestep, rollout) regression row.

    Columns: t, rollout index, the regressor entries in the documented
    [dZ^q | du_{t-1} ... du_{t-q}] order, then the response entries.
    """
    q = dataset.q
    with open(path, "w") as handle:
        handle.write(
            f"# rollouts={dataset.n_rollouts} horizon={dataset.horizon} q={q} "
            f"n_z={dataset.n_z} n_u={dataset.n_u}\n"
        )
        d = q * (dataset.n_z + dataset.n_u)
        header = ["t", "rollout"] + [f"phi{i}" for i in range(d)] + [
            f"y{i}" for i in range(dataset.n_z)
        ]
        handle.write(" ".join(header) + "\n")
        for t in range(q, dataset.horizon + 1):
            regressors, response = dataset.regressors(t)
            for j in range(dataset.n_rollouts):
                row = [str(t), str(j)]
                row += [format(v, ".17g") for v in regressors[j]]
                row += [format(v, ".17g") for v in response[j]]
                handle.write(" ".join(row) + "\n")


def _termination_exit(termination: str) -> int:
    return EXIT_MAX_ITERATIONS if termination == "max_iterations" else EXIT_OK


def _print_run(record: RunRecord) -> None:
    print(
        f"{record.plant}/{record.scenario} seed={record.seed}: "
        f"{len(record.records)} iterations, cost {record.initial_cost:.4g} -> "
        f"{record.final_cost:.4g}, {record.termination}, "
        f"{record.rollouts_total} rollouts"
    )


def cmd_run(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.seeds[0]
    out_dir = resolve_output_dir(config, args.out)
    hooks = None
    if args.dump_datasets or config.dump_datasets:
        hooks = _dump_hooks(config, out_dir, seed)
    record = run_scenario(config, seed, hooks)
    paths = export_run(record, out_dir, include_timing=args.timing)
    _print_run(record)
    for path in paths:
        print(f"wrote {path}")
    return _termination_exit(record.termination)


def cmd_ensemble(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = ExperimentConfig(**{**config.__dict__, "seeds": (args.seed,)})
    out_dir = resolve_output_dir(config, args.out)
    ensemble = run_ensemble(config)
    paths = export_ensemble(ensemble, config, out_dir, include_timing=args.timing)
    for record in ensemble.records:
        _print_run(record)
    for seed, message in ensemble.failures:
        print(f"seed {seed} FAILED: {message}", file=sys.stderr)
    for path in paths:
        print(f"wrote {path}")
    if ensemble.failures:
        return EXIT_DIVERGED
    if not ensemble.records:
        return EXIT_CONFIG
    return max(_termination_exit(r.termination) for r in ensemble.records)


def cmd_compare(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.seeds[0]
    out_dir = resolve_output_dir(config, args.out)
    results = run_compare(config, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    for scenario, records in results.items():
        for record in records:
            _print_run(record)
            export_run(record, out_dir, include_timing=args.timing)
    compare_path = out_dir / f"compare_{config.plant}.csv"
    write_compare_csv(results, compare_path, include_timing=args.timing)
    print(f"wrote {compare_path}")
    worst = max(
        _termination_exit(r.termination) for records in results.values() for r in records
    )
    return worst


def cmd_check(args) -> int:
    results = run_all_checks(seed=args.seed if args.seed is not None else 0)
    for result in results:
        print(result.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infoilqr",
        description="Data-driven iLQR experiments for partially observed plants",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="path to the experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument(
            "--dump-datasets",
            action="store_true",
            help="write per-iteration identification datasets",
        )
        p.add_argument(
            "--timing",
            action="store_true",
            help="include wall-clock millis in CSVs (breaks byte reproducibility)",
        )

    add_common(sub.add_parser("run", help="run one scenario"))
    add_common(sub.add_parser("ensemble", help="run all configured seeds"))
    add_common(sub.add_parser("compare", help="run the four-arm comparison suite"))
    check = sub.add_parser("check", help="run the oracle verification suite")
    check.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "ensemble": cmd_ensemble,
        "compare": cmd_compare,
        "check": cmd_check,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OptimizationError as err:
        print(f"optimization failed: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
