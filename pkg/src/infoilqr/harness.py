"""Experiment configuration, scenario wiring, ensembles, and CSV persistence.

A scenario names one experimental arm:

- ``nominal_noiseless``: the baseline run with every noise source forced to
  zero (works in either observation mode),
- ``fully_observed_noisy_unmodified`` / ``_modified``: process noise with
  perfect full-state measurements; the modified arm feeds the previous
  backward pass's gains into the identification rollouts,
- ``partial_noisy_unmodified`` / ``_modified`` / ``_averaged``: positions
  only with process and measurement noise; the averaged arm additionally
  runs ``n_avg`` rollouts per perturbation sequence and per forward pass.

Config files are flat ``key = value`` text (grammar documented in the
README).  All persisted CSV output is byte-reproducible for a fixed
(config, seed) pair; wall-clock timing is therefore zeroed in the files
unless timing export is explicitly requested.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .optimizer import (
    CostSpec,
    IterationRecord,
    OptimizationError,
    SolveHooks,
    SolveResult,
    SolverOptions,
    solve,
)
from .plants import (
    Cartpole,
    LinearPlant,
    NoiseSpec,
    ObservationMode,
    Pendulum,
    Plant,
    Trajectory,
    full_state_mode,
    positions_only_mode,
)
from .seeding import child_seed
from .sysid import PerturbationPlan

SCENARIOS = (
    "nominal_noiseless",
    "fully_observed_noisy_unmodified",
    "fully_observed_noisy_modified",
    "partial_noisy_unmodified",
    "partial_noisy_modified",
    "partial_noisy_averaged",
)
FULL_SCENARIOS = ("fully_observed_noisy_unmodified", "fully_observed_noisy_modified")
PARTIAL_SCENARIOS = (
    "partial_noisy_unmodified",
    "partial_noisy_modified",
    "partial_noisy_averaged",
)
MODIFIED_SCENARIOS = (
    "fully_observed_noisy_modified",
    "partial_noisy_modified",
    "partial_noisy_averaged",
)

PLANTS = ("pendulum", "cartpole", "synthetic_ltv")

CONVERGENCE_COLUMNS = ("iteration", "cost", "alpha", "residual", "rollouts", "millis")
SUMMARY_COLUMNS = ("seed",) + CONVERGENCE_COLUMNS + ("padded",)
COMPARE_COLUMNS = ("scenario",) + SUMMARY_COLUMNS

OUTPUT_DIR_ENV = "INFOILQR_OUT"


class ConfigError(ValueError):
    """Invalid experiment configuration; names the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


# Per-plant defaults, calibrated at desk scale so every scenario arm behaves
# as designed (noiseless runs converge tightly, noisy identification keeps a
# workable signal-to-noise ratio).
_PLANT_DEFAULTS = {
    "pendulum": dict(
        horizon=150,
        sigma_u=1.0,
        q_diag_full=(1.0, 0.1),
        q_diag_partial=(1.0,),
        r_diag=(0.02,),
        terminal_scale=2000.0,
    ),
    "cartpole": dict(
        horizon=200,
        sigma_u=2.0,
        q_diag_full=(0.2, 1.0, 0.02, 0.1),
        q_diag_partial=(0.2, 1.0),
        r_diag=(0.1,),
        terminal_scale=250.0,
    ),
    "synthetic_ltv": dict(
        horizon=30,
        sigma_u=0.1,
        q_diag_full=(1.0, 1.0),
        q_diag_partial=(1.0,),
        r_diag=(0.5,),
        terminal_scale=10.0,
    ),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one scenario run needs, with validated invariants."""

    plant: str = "pendulum"
    scenario: str = "nominal_noiseless"
    observation: str = "full"            # "full" or "partial"
    horizon: Optional[int] = None
    q: Optional[int] = None
    dt: float = 0.01

    # plant parameters
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    damping: float = 0.0
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_length: float = 0.5
    a_matrix: Optional[tuple] = None     # synthetic plant rows
    b_matrix: Optional[tuple] = None

    # cost (diagonals; dimension follows the observation mode)
    q_diag: Optional[tuple] = None
    r_diag: Optional[tuple] = None
    qt_diag: Optional[tuple] = None
    target: Optional[tuple] = None

    # noise protocol
    initial_deviation_std: float = 0.002
    noise_fraction: float = 0.1
    process_std: Optional[float] = None
    measurement_std: Optional[float] = None

    # identification plan
    sigma_u: Optional[float] = None
    n_s: int = 32
    n_avg: Optional[int] = None

    # solver
    max_iterations: int = 150
    min_iterations: int = 3
    residual_tol: float = 1e-4
    cost_decrease_tol: float = 1e-5

    seeds: tuple = (0,)
    output_dir: str = "results"
    dump_datasets: bool = False

    def __post_init__(self):
        if self.plant not in PLANTS:
            raise ConfigError("plant", f"unknown plant {self.plant!r}; expected one of {PLANTS}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                "scenario", f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}"
            )
        if self.observation not in ("full", "partial"):
            raise ConfigError("observation", "must be 'full' or 'partial'")

        # scenario <-> observation binding
        if self.scenario in FULL_SCENARIOS and self.observation != "full":
            raise ConfigError("observation", f"scenario {self.scenario} requires full observation")
        if self.scenario in PARTIAL_SCENARIOS and self.observation != "partial":
            raise ConfigError(
                "observation", f"scenario {self.scenario} requires partial observation"
            )

        # noise invariants
        if self.scenario == "nominal_noiseless":
            for key in ("process_std", "measurement_std"):
                value = getattr(self, key)
                if value is not None and value != 0.0:
                    raise ConfigError(key, "must be 0 in the nominal_noiseless scenario")
        if self.scenario in FULL_SCENARIOS:
            if self.measurement_std is not None and self.measurement_std != 0.0:
                raise ConfigError(
                    "measurement_std", "fully observed scenarios assume perfect measurements"
                )

        # averaging invariants
        if self.scenario == "partial_noisy_averaged":
            if self.n_avg is not None and self.n_avg <= 1:
                raise ConfigError("n_avg", "the averaged scenario requires n_avg > 1")
        elif self.n_avg is not None and self.n_avg != 1:
            raise ConfigError("n_avg", f"scenario {self.scenario} forces n_avg = 1")

        if not self.seeds:
            raise ConfigError("seeds", "need at least one seed")
        if self.noise_fraction < 0:
            raise ConfigError("noise_fraction", "must be non-negative")

    # ---- resolved values -------------------------------------------------

    @property
    def defaults(self) -> dict:
        return _PLANT_DEFAULTS[self.plant]

    def resolved_horizon(self) -> int:
        return self.horizon if self.horizon is not None else self.defaults["horizon"]

    def resolved_q(self) -> int:
        if self.q is not None:
            return self.q
        return 1 if self.observation == "full" else 2

    def resolved_n_avg(self) -> int:
        if self.n_avg is not None:
            return self.n_avg
        return 32 if self.scenario == "partial_noisy_averaged" else 1

    def resolved_sigma_u(self) -> float:
        return self.sigma_u if self.sigma_u is not None else self.defaults["sigma_u"]

    def resolved_noise(self, seed: int) -> NoiseSpec:
        if self.scenario == "nominal_noiseless":
            return NoiseSpec(seed=child_seed(seed, 1))
        derived = self.noise_fraction * self.initial_deviation_std
        process = self.process_std if self.process_std is not None else derived
        if self.scenario in FULL_SCENARIOS:
            measurement = 0.0
        else:
            measurement = self.measurement_std if self.measurement_std is not None else derived
        return NoiseSpec(
            process_std=process,
            measurement_std=measurement,
            initial_deviation_std=self.initial_deviation_std,
            seed=child_seed(seed, 1),
        )

    def resolved_plan(self, seed: int) -> PerturbationPlan:
        return PerturbationPlan(
            sigma_u=self.resolved_sigma_u(),
            n_s=self.n_s,
            n_avg=self.resolved_n_avg(),
            seed=child_seed(seed, 2),
        )

    def hash(self) -> str:
        payload = repr(sorted(self.__dict__.items())).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def make_plant(config: ExperimentConfig) -> Plant:
    if config.plant == "pendulum":
        return Pendulum(
            mass=config.mass,
            length=config.length,
            gravity=config.gravity,
            damping=config.damping,
            dt=config.dt,
        )
    if config.plant == "cartpole":
        return Cartpole(
            cart_mass=config.cart_mass,
            pole_mass=config.pole_mass,
            pole_length=config.pole_length,
            gravity=config.gravity,
            dt=config.dt,
        )
    if config.a_matrix is None or config.b_matrix is None:
        raise ConfigError("a_matrix", "synthetic_ltv requires a_matrix and b_matrix")
    return LinearPlant(np.asarray(config.a_matrix), np.asarray(config.b_matrix))


def make_mode(config: ExperimentConfig, plant: Plant) -> ObservationMode:
    if config.observation == "full":
        return full_state_mode(plant.n_x)
    return positions_only_mode(plant)


def initial_state(config: ExperimentConfig, plant: Plant) -> np.ndarray:
    """Swing-up start: hanging with everything at rest; origin for synthetic."""
    x0 = np.zeros(plant.n_x)
    if config.plant == "pendulum":
        x0[0] = np.pi
    elif config.plant == "cartpole":
        x0[1] = np.pi
    else:
        x0[:] = 1.0
    return x0


def make_cost(config: ExperimentConfig, mode: ObservationMode) -> CostSpec:
    n_z = mode.n_z
    d = config.defaults
    if config.q_diag is not None:
        q_diag = np.asarray(config.q_diag, dtype=float)
    else:
        key = "q_diag_full" if config.observation == "full" else "q_diag_partial"
        q_diag = np.asarray(d[key], dtype=float)
        if q_diag.shape != (n_z,):
            q_diag = np.ones(n_z)  # synthetic plants have free dimensions
    if q_diag.shape != (n_z,):
        raise ConfigError("q_diag", f"need {n_z} entries for this observation mode")
    r_diag = np.asarray(config.r_diag if config.r_diag is not None else d["r_diag"], dtype=float)
    if config.qt_diag is not None:
        qt_diag = np.asarray(config.qt_diag, dtype=float)
    else:
        qt_diag = d["terminal_scale"] * q_diag
    if qt_diag.shape != (n_z,):
        raise ConfigError("qt_diag", f"need {n_z} entries for this observation mode")
    target = np.asarray(config.target if config.target is not None else np.zeros(n_z), dtype=float)
    if target.shape != (n_z,):
        raise ConfigError("target", f"need {n_z} entries for this observation mode")
    return CostSpec(np.diag(q_diag), np.diag(r_diag), np.diag(qt_diag), target)


# ---- config file parsing -------------------------------------------------

_LIST_KEYS = {"q_diag", "r_diag", "qt_diag", "target", "seeds"}
_MATRIX_KEYS = {"a_matrix", "b_matrix"}
_INT_KEYS = {"horizon", "q", "n_s", "n_avg", "max_iterations", "min_iterations"}
_FLOAT_KEYS = {
    "dt",
    "mass",
    "length",
    "gravity",
    "damping",
    "cart_mass",
    "pole_mass",
    "pole_length",
    "initial_deviation_std",
    "noise_fraction",
    "process_std",
    "measurement_std",
    "sigma_u",
    "residual_tol",
    "cost_decrease_tol",
}
_STR_KEYS = {"plant", "scenario", "observation", "output_dir"}
_BOOL_KEYS = {"dump_datasets"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _LIST_KEYS:
            parts = [p for p in raw.replace(",", " ").split() if p]
            if key == "seeds":
                return tuple(int(p) for p in parts)
            return tuple(float(p) for p in parts)
        if key in _MATRIX_KEYS:
            rows = [r.strip() for r in raw.split(";") if r.strip()]
            return tuple(tuple(float(p) for p in r.replace(",", " ").split()) for r in rows)
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if key in _STR_KEYS:
            return raw
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(key, str(err)) from None
    raise ConfigError(key, "unknown key")


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        values[key] = _parse_value(key, raw)
    # partial scenarios imply the partial observation mode unless stated
    scenario = values.get("scenario", "nominal_noiseless")
    if "observation" not in values:
        values["observation"] = "partial" if scenario in PARTIAL_SCENARIOS else "full"
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    """Parse and validate a flat key-value config file."""
    return parse_config_text(Path(path).read_text())


# ---- running scenarios ---------------------------------------------------

@dataclass
class RunRecord:
    """One completed scenario run; reproducible from (config, seed)."""

    config_hash: str
    plant: str
    scenario: str
    seed: int
    records: list
    final_trajectory: Trajectory
    final_gains: Optional[tuple]
    termination: str
    initial_cost: float
    final_cost: float
    rollouts_total: int
    rollouts_identification: int
    rollouts_forward: int


def solver_options(config: ExperimentConfig, hooks: Optional[SolveHooks] = None) -> SolverOptions:
    return SolverOptions(
        modified=config.scenario in MODIFIED_SCENARIOS,
        n_avg=config.resolved_n_avg(),
        max_iterations=config.max_iterations,
        min_iterations=config.min_iterations,
        residual_tol=config.residual_tol,
        cost_decrease_tol=config.cost_decrease_tol,
        hooks=hooks,
    )


def run_scenario(
    config: ExperimentConfig, seed: int, hooks: Optional[SolveHooks] = None
) -> RunRecord:
    """Wire one scenario arm and run the optimizer to termination."""
    plant = make_plant(config)
    mode = make_mode(config, plant)
    cost = make_cost(config, mode)
    result = solve(
        plant,
        initial_state(config, plant),
        config.resolved_horizon(),
        config.resolved_q(),
        mode,
        cost,
        config.resolved_noise(seed),
        config.resolved_plan(seed),
        solver_options(config, hooks),
    )
    gains = None
    if result.backward is not None:
        k_full, big_k_full = result.backward.full_gains()
        gains = (k_full, big_k_full)
    return RunRecord(
        config_hash=config.hash(),
        plant=config.plant,
        scenario=config.scenario,
        seed=seed,
        records=result.records,
        final_trajectory=result.nominal,
        final_gains=gains,
        termination=result.termination,
        initial_cost=result.initial_cost,
        final_cost=result.final_cost,
        rollouts_total=result.rollouts_total,
        rollouts_identification=result.rollouts_identification,
        rollouts_forward=result.rollouts_forward,
    )


@dataclass
class EnsembleResult:
    records: list                  # successful RunRecords, in seed order
    failures: list                 # (seed, error message) pairs
    cost_matrix: np.ndarray        # (n_records, max_iters), carry-forward padded
    cost_mean: np.ndarray
    cost_std: np.ndarray
    total_rollouts: int

    @property
    def final_costs(self) -> np.ndarray:
        return np.array([r.final_cost for r in self.records])


def run_ensemble(config: ExperimentConfig) -> EnsembleResult:
    """Run every configured seed; per-seed failures do not abort the rest."""
    records = []
    failures = []
    for seed in config.seeds:
        try:
            records.append(run_scenario(config, seed))
        except (OptimizationError, ValueError) as err:
            failures.append((seed, str(err)))
    if records:
        width = max(len(r.records) for r in records)
        cost_matrix = np.empty((len(records), width))
        for i, rec in enumerate(records):
            costs = [it.cost for it in rec.records]
            cost_matrix[i, : len(costs)] = costs
            cost_matrix[i, len(costs) :] = costs[-1] if costs else np.nan
        cost_mean = cost_matrix.mean(axis=0)
        cost_std = cost_matrix.std(axis=0)
    else:
        cost_matrix = np.zeros((0, 0))
        cost_mean = np.zeros(0)
        cost_std = np.zeros(0)
    return EnsembleResult(
        records=records,
        failures=failures,
        cost_matrix=cost_matrix,
        cost_mean=cost_mean,
        cost_std=cost_std,
        total_rollouts=sum(r.rollouts_total for r in records),
    )


# ---- CSV persistence -----------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _iteration_row(record: IterationRecord, include_timing: bool):
    millis = int(round(record.millis)) if include_timing else 0
    return [
        record.iteration,
        _fmt(record.cost),
        _fmt(record.alpha),
        _fmt(record.residual),
        record.rollouts,
        millis,
    ]


def write_convergence_csv(record: RunRecord, path, include_timing: bool = False) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CONVERGENCE_COLUMNS)
        for it in record.records:
            writer.writerow(_iteration_row(it, include_timing))


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    n_x = trajectory.states.shape[1]
    n_u = trajectory.controls.shape[1]
    n_z = trajectory.measurements.shape[1]
    header = (
        ["t"]
        + [f"x{i}" for i in range(n_x)]
        + [f"u{i}" for i in range(n_u)]
        + [f"z{i}" for i in range(n_z)]
    )
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for t in range(trajectory.states.shape[0]):
            row = [t] + [_fmt(v) for v in trajectory.states[t]]
            if t < trajectory.controls.shape[0]:
                row += [_fmt(v) for v in trajectory.controls[t]]
            else:
                row += [""] * n_u
            row += [_fmt(v) for v in trajectory.measurements[t]]
            writer.writerow(row)


def _summary_rows(records: Sequence[RunRecord], include_timing: bool):
    width = max(len(r.records) for r in records)
    rows = []
    for rec in records:
        for i in range(width):
            padded = 1 if i >= len(rec.records) else 0
            it = rec.records[min(i, len(rec.records) - 1)]
            row = [rec.seed]
            if padded:
                row += [
                    i + 1,
                    _fmt(it.cost),
                    _fmt(0.0),
                    _fmt(it.residual),
                    0,
                    0,
                ]
            else:
                row += _iteration_row(it, include_timing)
            row.append(padded)
            rows.append(row)
    return rows


def write_summary_csv(records: Sequence[RunRecord], path, include_timing: bool = False) -> None:
    """Long-format per-seed iteration rows, carry-forward padded to equal length."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SUMMARY_COLUMNS)
        for row in _summary_rows(records, include_timing):
            writer.writerow(row)


def write_compare_csv(runs_by_scenario: dict, path, include_timing: bool = False) -> None:
    """Combined curves of several scenario arms, one block per scenario."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(COMPARE_COLUMNS)
        for scenario, records in runs_by_scenario.items():
            for row in _summary_rows(records, include_timing):
                writer.writerow([scenario] + row)


def resolve_output_dir(config: ExperimentConfig, override: Optional[str] = None) -> Path:
    env = os.environ.get(OUTPUT_DIR_ENV)
    return Path(override or env or config.output_dir)


def export_run(
    record: RunRecord, out_dir, include_timing: bool = False
) -> list:
    """Write convergence.csv and trajectory.csv for one run; returns the paths."""
    out = Path(out_dir) / record.scenario / f"seed_{record.seed}"
    out.mkdir(parents=True, exist_ok=True)
    conv = out / "convergence.csv"
    traj = out / "trajectory.csv"
    write_convergence_csv(record, conv, include_timing)
    write_trajectory_csv(record.final_trajectory, traj)
    return [conv, traj]


def export_ensemble(
    ensemble: EnsembleResult, config: ExperimentConfig, out_dir, include_timing: bool = False
) -> list:
    paths = []
    for record in ensemble.records:
        paths.extend(export_run(record, out_dir, include_timing))
    if ensemble.records:
        summary = Path(out_dir) / config.scenario / "summary.csv"
        write_summary_csv(ensemble.records, summary, include_timing)
        paths.append(summary)
    return paths


def compare_arms(config: ExperimentConfig) -> list:
    """The four partial-case arms of the convergence comparison."""
    arms = []
    for scenario in (
        "nominal_noiseless",
        "partial_noisy_unmodified",
        "partial_noisy_modified",
        "partial_noisy_averaged",
    ):
        arms.append(
            replace(
                config,
                scenario=scenario,
                observation="partial",
                n_avg=None,
                process_std=None,
                measurement_std=None,
            )
        )
    return arms


def run_compare(config: ExperimentConfig, seed: int) -> dict:
    """Run the four-arm comparison suite for one plant at one seed."""
    results = {}
    for arm in compare_arms(config):
        results[arm.scenario] = [run_scenario(arm, seed)]
    return results
