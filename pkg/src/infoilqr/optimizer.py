"""Trajectory optimization loop on the identified information-state model.

Each iteration: simulate the nominal forward, identify the local LTV
information-state model from perturbed rollouts, run a Riccati backward pass
for value terms (v_t, V_t) and gains (k_t, K_t), then apply a line-searched
closed-loop update

    u_t  <-  u_nom_t - alpha k_t - K_t (Z_t - Z_nom_t)

until the per-step stationarity residual R u_nom_t + B^T v_{t+1} vanishes,
the cost plateaus, or the iteration budget runs out.

Conventions.  The scalar cost carries no 1/2 factor,

    J = sum_t (z_t - z*)^T Q (z_t - z*) + u_t^T R u_t  +  terminal,

so the value model propagated by the backward pass is the *half* gradient /
Hessian pair: V_T = Q_T and V_t = Q + A^T V A - A^T V B (R + B^T V B)^{-1}
B^T V A, and the true derivative of J with respect to u_nom_t equals
2 (R u_nom_t + B^T v_{t+1}).  Gains are unaffected by the common factor.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .info_state import LtvInfoStep, assemble_ltv, info_dim
from .plants import (
    INFORMATION_STATE,
    DivergenceError,
    FeedbackAugmentedPolicy,
    NoiseSpec,
    ObservationMode,
    OpenLoopPolicy,
    Plant,
    Trajectory,
    rollout,
    simulate_batch,
)
from .seeding import child_seed
from .sysid import PerturbationPlan, collect_rollouts, fit_arma

_COND_LIMIT = 1e10
_REG_INITIAL = 1e-6
_REG_MAX = 1e3

# Seed-derivation phase tags inside one solve iteration.
_PHASE_FORWARD = 1
_PHASE_SYSID = 2
_PHASE_UPDATE = 3


class BackwardPassError(RuntimeError):
    def __init__(self, timestep: int, detail: str):
        self.timestep = timestep
        super().__init__(f"backward pass failed at timestep {timestep}: {detail}")


class OptimizationError(RuntimeError):
    """Wraps failures of inner stages with iteration context."""

    def __init__(self, iteration: int, stage: str, cause: Exception):
        self.iteration = iteration
        self.stage = stage
        self.cause = cause
        super().__init__(f"iteration {iteration}, {stage}: {cause}")


@dataclass(frozen=True)
class CostSpec:
    """Quadratic cost on measurement deviations from a target, plus controls.

    Q and Q_T must be symmetric positive semidefinite, R symmetric positive
    definite (its inverse appears in the gain formulas).
    """

    q_run: np.ndarray
    r: np.ndarray
    q_terminal: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q_run", np.asarray(self.q_run, dtype=float))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "q_terminal", np.asarray(self.q_terminal, dtype=float))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))
        for name, mat in (("Q", self.q_run), ("Q_T", self.q_terminal)):
            if not np.allclose(mat, mat.T):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(mat)) < -1e-10:
                raise ValueError(f"{name} must be positive semidefinite")
        if not np.allclose(self.r, self.r.T):
            raise ValueError("R must be symmetric")
        try:
            np.linalg.cholesky(self.r)
        except np.linalg.LinAlgError:
            raise ValueError("R must be positive definite") from None
        if self.target.shape != (self.q_run.shape[0],):
            raise ValueError("target dimension must match Q")

    @property
    def n_z(self) -> int:
        return self.q_run.shape[0]

    @property
    def n_u(self) -> int:
        return self.r.shape[0]


def evaluate_cost(measurements: np.ndarray, controls: np.ndarray, cost: CostSpec) -> float:
    """Quadratic trajectory cost on measurements and controls."""
    z = np.asarray(measurements, dtype=float)
    u = np.atleast_2d(np.asarray(controls, dtype=float))
    if z.shape[0] != u.shape[0] + 1:
        raise ValueError("need one more measurement than controls")
    if z.shape[1] != cost.n_z or u.shape[1] != cost.n_u:
        raise ValueError("trajectory dimensions do not match the cost spec")
    err = z - cost.target
    running = np.einsum("ti,ij,tj->", err[:-1], cost.q_run, err[:-1])
    control = np.einsum("ti,ij,tj->", u, cost.r, u)
    terminal = err[-1] @ cost.q_terminal @ err[-1]
    return float(running + control + terminal)


def embed_measurement_matrix(
    mat: np.ndarray, q: int, n_z: int, n_u: int, full: bool = False
) -> np.ndarray:
    """Place a measurement-space quadratic weight into info-state coordinates.

    By default the weight acts on the newest measurement block only, so the
    summed info-state cost counts each measurement exactly once.  ``full``
    repeats it block-diagonally over all q measurement blocks instead.
    """
    d = info_dim(q, n_z, n_u)
    out = np.zeros((d, d))
    blocks = q if full else 1
    for i in range(blocks):
        out[i * n_z : (i + 1) * n_z, i * n_z : (i + 1) * n_z] = mat
    return out


def embed_measurement_vector(vec: np.ndarray, q: int, n_z: int, n_u: int) -> np.ndarray:
    out = np.zeros(info_dim(q, n_z, n_u))
    out[:n_z] = vec
    return out


@dataclass
class BackwardPassResult:
    """Value terms and gains for timesteps t_start..T-1 (values through T)."""

    t_start: int
    horizon: int
    k_seq: np.ndarray   # (T - t_start, n_u) feedforward
    gain_seq: np.ndarray  # (T - t_start, n_u, d) feedback K_t
    v_seq: np.ndarray   # (T - t_start + 1, d)
    big_v_seq: np.ndarray  # (T - t_start + 1, d, d)
    optimality_residuals: np.ndarray  # ||R u_t + B^T v_{t+1}|| per step
    expected_reduction: float  # sum_t k_t^T (R + B^T V B) k_t

    @property
    def max_residual(self) -> float:
        return float(np.max(self.optimality_residuals))

    def full_gains(self) -> tuple[np.ndarray, np.ndarray]:
        """Gains over 0..T-1; steps before t_start reuse the earliest pair."""
        reps = self.t_start
        k_full = np.concatenate([np.repeat(self.k_seq[:1], reps, axis=0), self.k_seq])
        gain_full = np.concatenate([np.repeat(self.gain_seq[:1], reps, axis=0), self.gain_seq])
        return k_full, gain_full


def _regularized_solve(s_mat: np.ndarray, timestep: int):
    """Return a solver for S after ensuring it is well conditioned."""
    s_use = s_mat
    mu = _REG_INITIAL
    while True:
        if np.all(np.isfinite(s_use)) and np.linalg.cond(s_use) < _COND_LIMIT:
            return s_use
        if mu > _REG_MAX:
            raise BackwardPassError(timestep, "R + B^T V B is numerically singular")
        s_use = s_mat + mu * np.eye(s_mat.shape[0])
        mu *= 10.0


def backward_pass(
    ltv: Sequence[LtvInfoStep],
    u_nominal: np.ndarray,
    z_nominal: np.ndarray,
    cost: CostSpec,
    q: int,
    t_start: int = 0,
) -> BackwardPassResult:
    """Riccati sweep over the lifted model for steps t_start..T-1.

    ``ltv[i]`` is the transition at time t_start + i.  The running weight
    acts on the newest measurement block; terminal conditions are the
    embedded Q_T and its gradient at the final measurement error.
    """
    u_nominal = np.atleast_2d(np.asarray(u_nominal, dtype=float))
    z_nominal = np.atleast_2d(np.asarray(z_nominal, dtype=float))
    horizon = u_nominal.shape[0]
    if len(ltv) != horizon - t_start:
        raise ValueError(f"need {horizon - t_start} transitions, got {len(ltv)}")
    n_z, n_u = cost.n_z, cost.n_u
    d = info_dim(q, n_z, n_u)
    if ltv and ltv[0].dim != d:
        raise ValueError(f"transition dimension {ltv[0].dim} != info dim {d}")

    q_tilde = embed_measurement_matrix(cost.q_run, q, n_z, n_u)
    err = z_nominal - cost.target
    big_v = embed_measurement_matrix(cost.q_terminal, q, n_z, n_u)
    v = embed_measurement_vector(cost.q_terminal @ err[horizon], q, n_z, n_u)

    steps = horizon - t_start
    k_seq = np.zeros((steps, n_u))
    gain_seq = np.zeros((steps, n_u, d))
    v_seq = np.zeros((steps + 1, d))
    big_v_seq = np.zeros((steps + 1, d, d))
    residuals = np.zeros(steps)
    v_seq[steps] = v
    big_v_seq[steps] = big_v
    expected_reduction = 0.0

    for t in range(horizon - 1, t_start - 1, -1):
        i = t - t_start
        a_mat, b_mat = ltv[i].a_mat, ltv[i].b_mat
        vb = big_v @ b_mat
        s_mat = cost.r + b_mat.T @ vb
        s_mat = 0.5 * (s_mat + s_mat.T)
        s_mat = _regularized_solve(s_mat, t)
        g = cost.r @ u_nominal[t] + b_mat.T @ v
        k = np.linalg.solve(s_mat, g)
        l_mat = vb.T @ a_mat  # B^T V A
        gain = np.linalg.solve(s_mat, l_mat)
        v_new = embed_measurement_vector(cost.q_run @ err[t], q, n_z, n_u) + a_mat.T @ v - gain.T @ g
        big_v_new = q_tilde + a_mat.T @ big_v @ a_mat - l_mat.T @ gain
        big_v_new = 0.5 * (big_v_new + big_v_new.T)
        if not (np.all(np.isfinite(v_new)) and np.all(np.isfinite(big_v_new))):
            raise BackwardPassError(t, "non-finite value terms")
        k_seq[i] = k
        gain_seq[i] = gain
        residuals[i] = np.linalg.norm(g)
        expected_reduction += float(k @ s_mat @ k)
        v, big_v = v_new, big_v_new
        v_seq[i] = v
        big_v_seq[i] = big_v
    return BackwardPassResult(
        t_start=t_start,
        horizon=horizon,
        k_seq=k_seq,
        gain_seq=gain_seq,
        v_seq=v_seq,
        big_v_seq=big_v_seq,
        optimality_residuals=residuals,
        expected_reduction=expected_reduction,
    )


def riccati_step_inverse_form(
    big_v_next: np.ndarray, a_mat: np.ndarray, b_mat: np.ndarray, r: np.ndarray, q_run: np.ndarray
) -> np.ndarray:
    """One value-Hessian step in the matrix-inversion form.

    V_t = Q + A^T (V_{t+1}^{-1} + B R^{-1} B^T)^{-1} A.  Requires V_{t+1}
    invertible; agrees with the expanded form used in production whenever it
    is.  Kept as an independent algebraic route for cross-checks.
    """
    inner = np.linalg.inv(np.linalg.inv(big_v_next) + b_mat @ np.linalg.solve(r, b_mat.T))
    out = q_run + a_mat.T @ inner @ a_mat
    return 0.5 * (out + out.T)


def control_gradient(
    ltv: Sequence[LtvInfoStep],
    u_nominal: np.ndarray,
    z_nominal: np.ndarray,
    cost: CostSpec,
    q: int,
    t_start: int = 0,
) -> np.ndarray:
    """Half-gradient of the trajectory cost with respect to each nominal control.

    Plain adjoint recursion lam_t = Q-term + A^T lam_{t+1} (no gain
    correction); returns g_t = R u_t + B^T lam_{t+1} for t_start..T-1.  The
    full derivative of the no-half cost is 2 g_t.  This coincides with the
    backward-pass residual at a stationary trajectory.
    """
    u_nominal = np.atleast_2d(np.asarray(u_nominal, dtype=float))
    z_nominal = np.atleast_2d(np.asarray(z_nominal, dtype=float))
    horizon = u_nominal.shape[0]
    n_z, n_u = cost.n_z, cost.n_u
    err = z_nominal - cost.target
    lam = embed_measurement_vector(cost.q_terminal @ err[horizon], q, n_z, n_u)
    grads = np.zeros((horizon - t_start, n_u))
    for t in range(horizon - 1, t_start - 1, -1):
        step = ltv[t - t_start]
        grads[t - t_start] = cost.r @ u_nominal[t] + step.b_mat.T @ lam
        lam = embed_measurement_vector(cost.q_run @ err[t], q, n_z, n_u) + step.a_mat.T @ lam
    return grads


def forward_update(
    plant: Plant,
    nominal: Trajectory,
    gains: BackwardPassResult,
    alpha: float,
    cost: CostSpec,
    noise: NoiseSpec,
    mode: ObservationMode,
    q: int,
    n_avg: int = 1,
    initial_state: Optional[np.ndarray] = None,
) -> tuple[Trajectory, float]:
    """Closed-loop update rollout(s); returns the new nominal and its cost.

    Applies u = u_nom - alpha k - K (Z - Z_nom) stepwise against the old
    nominal; the information state at t = 0 is pinned to the nominal one.
    With ``n_avg`` > 1 the returned nominal is the elementwise mean of
    ``n_avg`` independently seeded rollouts.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    horizon = nominal.horizon
    k_full, gain_full = gains.full_gains()
    policy = FeedbackAugmentedPolicy(
        nominal.controls,
        nominal.measurements,
        q,
        gains=-gain_full,
        offsets=-alpha * k_full,
        feedback_space=INFORMATION_STATE,
        zero_initial_feedback=True,
    )
    specs = [replace(noise, seed=child_seed(noise.seed, m)) for m in range(n_avg)]
    x0 = nominal.states[0] if initial_state is None else np.asarray(initial_state, dtype=float)
    states, controls, meas = simulate_batch(plant, x0, policy, specs, horizon, mode)
    new_nominal = Trajectory(states.mean(axis=0), controls.mean(axis=0), meas.mean(axis=0))
    return new_nominal, evaluate_cost(new_nominal.measurements, new_nominal.controls, cost)


DEFAULT_ALPHAS = tuple(0.7**i for i in range(16))  # 1, 0.7, ..., 0.7^15


@dataclass
class LineSearchResult:
    alpha: float
    trajectory: Optional[Trajectory]
    cost: float
    improving: bool
    candidates_evaluated: int


def line_search(
    plant: Plant,
    nominal: Trajectory,
    current_cost: float,
    gains: BackwardPassResult,
    cost: CostSpec,
    noise: NoiseSpec,
    mode: ObservationMode,
    q: int,
    n_avg: int = 1,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    armijo_c1: float = 1e-4,
    initial_state: Optional[np.ndarray] = None,
) -> LineSearchResult:
    """Backtracking step-size search with an Armijo acceptance rule.

    Accepts the first alpha whose candidate cost satisfies
    J_new <= J_old - c1 alpha sum_t k_t (R + B^T V B) k_t.  Candidates share
    noise seeds so the comparison isolates the step size.  If none is
    accepted, the smallest-alpha non-diverged candidate is returned flagged
    as non-improving; if every candidate diverges, the last error is raised.
    """
    fallback = None
    last_error: Optional[Exception] = None
    evaluated = 0
    for alpha in alphas:
        try:
            candidate, cand_cost = forward_update(
                plant, nominal, gains, alpha, cost, noise, mode, q, n_avg, initial_state
            )
        except DivergenceError as err:
            last_error = err
            continue
        evaluated += 1
        if cand_cost <= current_cost - armijo_c1 * alpha * gains.expected_reduction:
            return LineSearchResult(alpha, candidate, cand_cost, True, evaluated)
        fallback = (alpha, candidate, cand_cost)
    if fallback is None:
        raise last_error if last_error is not None else RuntimeError("empty line-search schedule")
    alpha, candidate, cand_cost = fallback
    return LineSearchResult(alpha, candidate, cand_cost, False, evaluated)


@dataclass
class IterationRecord:
    """One optimizer iteration as persisted in the convergence CSV."""

    iteration: int
    cost: float
    alpha: float
    residual: float
    rollouts: int
    millis: float
    sysid_rollouts: int = 0
    update_rollouts: int = 0


@dataclass
class SolveHooks:
    """Optional callbacks for instrumenting the loop (tests, logging, dumps)."""

    on_identification: Optional[Callable] = None  # (iteration, gains_or_none)
    on_dataset: Optional[Callable] = None         # (iteration, RolloutDataset)
    on_iteration: Optional[Callable] = None       # (IterationRecord)


@dataclass(frozen=True)
class SolverOptions:
    modified: bool = False          # feed previous gains back into identification
    n_avg: int = 1                  # rollouts averaged per forward pass / perturbation
    max_iterations: int = 100
    min_iterations: int = 5         # plateau detection is armed after this many
    residual_tol: float = 1e-4
    cost_decrease_tol: float = 1e-5
    plateau_patience: int = 2       # consecutive small relative decreases to stop
    stall_patience: int = 3         # consecutive failed line searches to stop (noiseless)
    alphas: tuple = DEFAULT_ALPHAS
    armijo_c1: float = 1e-4
    initial_controls: Optional[np.ndarray] = None
    hooks: Optional[SolveHooks] = None


@dataclass
class SolveResult:
    nominal: Trajectory
    records: list
    termination: str
    initial_cost: float
    final_cost: float
    backward: Optional[BackwardPassResult]
    rollouts_total: int
    rollouts_identification: int
    rollouts_forward: int

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])


def solve(
    plant: Plant,
    initial_state: np.ndarray,
    horizon: int,
    q: int,
    mode: ObservationMode,
    cost: CostSpec,
    noise: NoiseSpec,
    plan: PerturbationPlan,
    options: SolverOptions = SolverOptions(),
) -> SolveResult:
    """Run the full identification / backward-pass / update loop.

    Identification fits response times from q + n_x on (earlier regressors
    are structurally rank-deficient until perturbations have excited the full
    state); transitions below that index reuse the earliest fitted one, so
    the backward pass still produces correct per-step gains everywhere (exact
    for time-invariant plants).  Termination: stationarity residual below
    ``residual_tol`` scaled by the control magnitude, a cost plateau, a
    non-improving line search in the noiseless case, or ``max_iterations``.
    """
    # Earliest response time whose regressor can be full rank: perturbations
    # must have excited the reachable space, with a two-step margin.
    t_fit = q + plant.n_x + 2
    if horizon <= t_fit + 2:
        raise ValueError(f"horizon {horizon} too short for q={q} and n_x={plant.n_x}")
    hooks = options.hooks or SolveHooks()
    noisy = not noise.noiseless
    x0 = np.asarray(initial_state, dtype=float)

    if options.initial_controls is None:
        u_init = np.zeros((horizon, plant.n_u))
    else:
        u_init = np.asarray(options.initial_controls, dtype=float)

    rollouts_id = 0
    rollouts_fwd = 0
    base = plant.rollout_count

    def run_initial():
        spec = replace(noise, seed=child_seed(noise.seed, 0, _PHASE_FORWARD))
        specs = [replace(spec, seed=child_seed(spec.seed, m)) for m in range(options.n_avg)]
        states, controls, meas = simulate_batch(
            plant, x0, OpenLoopPolicy(u_init), specs, horizon, mode
        )
        return Trajectory(states.mean(axis=0), controls.mean(axis=0), meas.mean(axis=0))

    try:
        nominal = run_initial()
    except DivergenceError as err:
        raise OptimizationError(0, "initial forward pass", err) from err
    rollouts_fwd += options.n_avg
    current_cost = evaluate_cost(nominal.measurements, nominal.controls, cost)
    initial_cost = current_cost

    records: list[IterationRecord] = []
    backward: Optional[BackwardPassResult] = None
    prev_gains_full: Optional[np.ndarray] = None
    termination = "max_iterations"
    plateau_run = 0
    stall_run = 0

    for iteration in range(1, options.max_iterations + 1):
        tic = time.perf_counter()
        before = plant.rollout_count
        iter_noise = replace(noise, seed=child_seed(noise.seed, iteration, _PHASE_SYSID))
        iter_plan = replace(plan, seed=child_seed(plan.seed, iteration), n_avg=options.n_avg)
        id_gains = prev_gains_full if options.modified else None
        if hooks.on_identification:
            hooks.on_identification(iteration, id_gains)
        try:
            dataset = collect_rollouts(plant, nominal, id_gains, iter_plan, iter_noise, mode, q)
            if hooks.on_dataset:
                hooks.on_dataset(iteration, dataset)
            model = fit_arma(dataset, gains_used=id_gains, t_start=t_fit)
        except Exception as err:
            raise OptimizationError(iteration, "identification", err) from err
        sysid_used = plant.rollout_count - before
        rollouts_id += sysid_used

        ltv = [assemble_ltv(step) for step in model.steps]
        ltv = [ltv[0]] * (t_fit - 1) + ltv  # extend the earliest fit down to t = 0
        try:
            backward = backward_pass(
                ltv, nominal.controls, nominal.measurements, cost, q, t_start=0
            )
        except BackwardPassError as err:
            raise OptimizationError(iteration, "backward pass", err) from err

        residual = backward.max_residual
        control_scale = float(np.max(np.abs(cost.r @ nominal.controls.T))) if horizon else 0.0
        if residual < options.residual_tol * (1.0 + control_scale):
            elapsed = (time.perf_counter() - tic) * 1000.0
            record = IterationRecord(
                iteration, current_cost, 0.0, residual, sysid_used, elapsed, sysid_used, 0
            )
            records.append(record)
            if hooks.on_iteration:
                hooks.on_iteration(record)
            termination = "converged_residual"
            break

        before_update = plant.rollout_count
        update_noise = replace(noise, seed=child_seed(noise.seed, iteration, _PHASE_UPDATE))
        try:
            search = line_search(
                plant,
                nominal,
                current_cost,
                backward,
                cost,
                update_noise,
                mode,
                q,
                n_avg=options.n_avg,
                alphas=options.alphas,
                armijo_c1=options.armijo_c1,
                initial_state=x0,
            )
        except DivergenceError as err:
            raise OptimizationError(iteration, "trajectory update", err) from err
        update_used = plant.rollout_count - before_update
        rollouts_fwd += update_used

        if not search.improving and not noisy:
            # No step improved the deterministic rollout under this model;
            # keep the nominal and retry with fresh perturbations before
            # declaring a plateau.
            stall_run += 1
            applied_alpha = 0.0
            rel_decrease = 0.0
        else:
            stall_run = 0
            nominal = search.trajectory
            new_cost = search.cost
            rel_decrease = (current_cost - new_cost) / max(abs(current_cost), 1e-300)
            current_cost = new_cost
            applied_alpha = search.alpha
        prev_gains_full = -backward.full_gains()[1]

        elapsed = (time.perf_counter() - tic) * 1000.0
        record = IterationRecord(
            iteration,
            current_cost,
            applied_alpha,
            residual,
            sysid_used + update_used,
            elapsed,
            sysid_used,
            update_used,
        )
        records.append(record)
        if hooks.on_iteration:
            hooks.on_iteration(record)

        if stall_run >= options.stall_patience:
            termination = "plateau"
            break
        if 0.0 <= rel_decrease < options.cost_decrease_tol and applied_alpha > 0.0:
            plateau_run += 1
        else:
            plateau_run = 0
        if iteration >= options.min_iterations and plateau_run >= options.plateau_patience:
            termination = "converged_cost"
            break

    return SolveResult(
        nominal=nominal,
        records=records,
        termination=termination,
        initial_cost=initial_cost,
        final_cost=current_cost,
        backward=backward,
        rollouts_total=plant.rollout_count - base,
        rollouts_identification=rollouts_id,
        rollouts_forward=plant.rollout_count - base - rollouts_id,
    )
