"""Least-squares ARMA identification of the local information-state model.

Around the current nominal trajectory, perturbed closed-loop rollouts are
collected and, per timestep, the measurement deviation dz_t is regressed on
the stacked window of past measurement and control deviations.  When a
feedback term u_t = u_nom_t + du_t + G_t dZ_t was active during collection,
the regression targets the closed-loop map; the open-loop coefficients are
recovered by subtracting the known feedback contribution (the newest control
regressor holds the exogenous perturbation du_{t-1}, so the identity
theta_Z = [alpha-row] + beta_{t-1} G_{t-1} applies exactly).

``arma_from_ltv`` provides the analytic coefficients of a known LTV triple
(the exact-fit construction through the observability pseudoinverse), used
throughout the tests as an independent oracle for the regression.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .info_state import ArmaStep, LtvTriple, _as_triples, info_dim, observability_matrix, observability_rank
from .plants import (
    INFORMATION_STATE,
    FeedbackAugmentedPolicy,
    NoiseSpec,
    ObservationMode,
    Plant,
    Trajectory,
    simulate_batch,
)
from .seeding import STREAM_PERTURBATION, child_seed, stream_generator

# Values of the regressor singular-value ratio below this count as rank loss.
_RANK_RTOL = 1e-10


class SysIdError(RuntimeError):
    """Identification failed; carries the offending timestep and conditioning."""

    def __init__(self, timestep: int, condition_number: float, detail: str = ""):
        self.timestep = timestep
        self.condition_number = condition_number
        msg = f"rank-deficient regressor at timestep {timestep} (cond={condition_number:.3e})"
        super().__init__(msg + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class PerturbationPlan:
    """How identification rollouts are excited and batched.

    ``n_s`` perturbation sequences are drawn with per-step std ``sigma_u``;
    each sequence is rolled out ``n_avg`` times (with fresh noise) and the
    group is averaged into one effective rollout before regression.
    """

    sigma_u: float
    n_s: int
    n_avg: int = 1
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.sigma_u) or self.sigma_u <= 0.0:
            raise ValueError(f"sigma_u must be positive, got {self.sigma_u}")
        if self.n_s < 1:
            raise ValueError(f"n_s must be >= 1, got {self.n_s}")
        if self.n_avg < 1:
            raise ValueError(f"n_avg must be >= 1, got {self.n_avg}")


def min_rollouts(q: int, n_z: int, n_u: int) -> int:
    """Smallest acceptable rollout count: twice the regressor dimension."""
    return 2 * q * (n_z + n_u)


@dataclass
class RolloutDataset:
    """Deviations of the (group-averaged) identification rollouts.

    ``delta_u_pert`` holds the drawn perturbations; ``delta_u_applied`` the
    full applied control deviations including any feedback contribution
    (identical when no feedback was used).  ``gains`` records the additive
    feedback gains active during collection, for reference.
    """

    delta_z: np.ndarray          # (n_s, T+1, n_z)
    delta_u_applied: np.ndarray  # (n_s, T, n_u)
    delta_u_pert: np.ndarray     # (n_s, T, n_u)
    q: int
    gains: Optional[np.ndarray] = None
    rollouts_consumed: int = 0

    @property
    def n_rollouts(self) -> int:
        return self.delta_z.shape[0]

    @property
    def horizon(self) -> int:
        return self.delta_u_applied.shape[1]

    @property
    def n_z(self) -> int:
        return self.delta_z.shape[2]

    @property
    def n_u(self) -> int:
        return self.delta_u_applied.shape[2]

    def regression_window(self, t: int):
        """Regressor/response pair at response time ``t`` (needs t >= q).

        Regressor rows are [dz_{t-1}, ..., dz_{t-q}, du_{t-2}, ..., du_{t-q},
        du~_{t-1}]: the information state one step back (applied controls)
        followed by the newest exogenous perturbation.
        """
        q = self.q
        if t < q:
            raise ValueError(f"response time {t} < depth {q}")
        cols = [self.delta_z[:, t - i] for i in range(1, q + 1)]
        cols += [self.delta_u_applied[:, t - j] for j in range(2, q + 1)]
        cols += [self.delta_u_pert[:, t - 1]]
        return np.hstack(cols), self.delta_z[:, t]

    def regressors(self, t: int):
        """Documented dump layout: [dZ^q | du_{t-1} | du_{t-2} | ... | du_{t-q}].

        Measurement blocks newest first, then control blocks newest first;
        the newest control block is the exogenous perturbation, older blocks
        are applied deviations.
        """
        q = self.q
        cols = [self.delta_z[:, t - i] for i in range(1, q + 1)]
        cols += [self.delta_u_pert[:, t - 1]]
        cols += [self.delta_u_applied[:, t - j] for j in range(2, q + 1)]
        return np.hstack(cols), self.delta_z[:, t]


@dataclass
class IdentifiedModel:
    """Per-timestep ARMA fit with regression diagnostics."""

    steps: list
    residual_norms: np.ndarray
    condition_numbers: np.ndarray
    t_start: int

    @property
    def t_stop(self) -> int:
        return self.t_start + len(self.steps) - 1

    def step_at(self, t: int) -> ArmaStep:
        return self.steps[t - self.t_start]


def collect_rollouts(
    plant: Plant,
    nominal: Trajectory,
    gains: Optional[np.ndarray],
    plan: PerturbationPlan,
    noise: NoiseSpec,
    mode: ObservationMode,
    q: int,
) -> RolloutDataset:
    """Run the n_s x n_avg perturbed rollouts and record deviations.

    ``gains``, when given, is the sequence of additive feedback matrices G_t
    applied as u_t = u_nom_t + du_t + G_t dZ_t (one per step, acting on the
    zero-padded information-state deviation).  ``None`` means pure open-loop
    perturbation (the first iteration, or the unmodified algorithm).
    Groups sharing a perturbation sequence are averaged in measurement space
    before deviations enter the dataset.
    """
    horizon = nominal.horizon
    n_u, n_z = plant.n_u, mode.n_z
    if plan.n_s < min_rollouts(q, n_z, n_u):
        raise ValueError(
            f"n_s={plan.n_s} below the minimum {min_rollouts(q, n_z, n_u)} for "
            f"q={q}, n_z={n_z}, n_u={n_u}"
        )
    if gains is not None:
        gains = np.asarray(gains, dtype=float)
        if gains.shape[0] != horizon:
            raise ValueError(f"need {horizon} gain matrices, got {gains.shape[0]}")

    perturbations = np.empty((plan.n_s, horizon, n_u))
    for j in range(plan.n_s):
        gen = stream_generator(plan.seed, STREAM_PERTURBATION, j)
        perturbations[j] = gen.normal(0.0, plan.sigma_u, (horizon, n_u))

    total = plan.n_s * plan.n_avg
    offsets = np.repeat(perturbations, plan.n_avg, axis=0)
    specs = [
        NoiseSpec(
            noise.process_std,
            noise.measurement_std,
            noise.initial_deviation_std,
            seed=child_seed(noise.seed, j, m),
        )
        for j in range(plan.n_s)
        for m in range(plan.n_avg)
    ]
    policy = FeedbackAugmentedPolicy(
        nominal.controls,
        nominal.measurements,
        q,
        gains=gains,
        offsets=offsets,
        feedback_space=INFORMATION_STATE,
    )
    _, controls, meas = simulate_batch(
        plant, nominal.states[0], policy, specs, horizon, mode
    )
    delta_z = meas - nominal.measurements
    delta_u = controls - nominal.controls
    if plan.n_avg > 1:
        delta_z = delta_z.reshape(plan.n_s, plan.n_avg, horizon + 1, n_z).mean(axis=1)
        delta_u = delta_u.reshape(plan.n_s, plan.n_avg, horizon, n_u).mean(axis=1)
    return RolloutDataset(
        delta_z=delta_z,
        delta_u_applied=delta_u,
        delta_u_pert=perturbations,
        q=q,
        gains=gains,
        rollouts_consumed=total,
    )


def fit_arma(
    dataset: RolloutDataset,
    gains_used: Optional[np.ndarray] = None,
    t_start: Optional[int] = None,
    t_stop: Optional[int] = None,
) -> IdentifiedModel:
    """Per-timestep least-squares ARMA coefficients from a rollout dataset.

    Solved with an orthogonal decomposition (never explicit normal
    equations); a rank-deficient regressor raises ``SysIdError`` rather than
    silently returning a minimum-norm solution.  When ``gains_used`` is
    given, the feedback contribution is subtracted so the returned
    coefficients describe the open-loop map.  Fits response times
    ``t_start``..``t_stop`` (defaults: q..horizon).
    """
    q, n_z, n_u = dataset.q, dataset.n_z, dataset.n_u
    t0 = q if t_start is None else int(t_start)
    t1 = dataset.horizon if t_stop is None else int(t_stop)
    if t0 < q:
        raise ValueError(f"t_start must be >= q={q}, got {t0}")
    if t1 > dataset.horizon or t1 < t0:
        raise ValueError(f"invalid fit range [{t0}, {t1}] for horizon {dataset.horizon}")
    d_z = info_dim(q, n_z, n_u)
    d = d_z + n_u
    if dataset.n_rollouts < d:
        raise ValueError(f"{dataset.n_rollouts} rollouts cannot identify {d} regressors")
    if gains_used is not None:
        gains_used = np.asarray(gains_used, dtype=float)

    steps = []
    residual_norms = np.empty(t1 - t0 + 1)
    condition_numbers = np.empty(t1 - t0 + 1)
    for t in range(t0, t1 + 1):
        regressors, response = dataset.regression_window(t)
        theta_t, _, rank, sv = np.linalg.lstsq(regressors, response, rcond=_RANK_RTOL)
        cond = np.inf if sv[-1] == 0.0 else sv[0] / sv[-1]
        if rank < d:
            raise SysIdError(t, cond)
        theta = theta_t.T  # (n_z, d)
        beta_new = theta[:, d_z:]
        theta_z = theta[:, :d_z].copy()
        if gains_used is not None:
            theta_z -= beta_new @ gains_used[t - 1]
        alphas = tuple(theta_z[:, i * n_z : (i + 1) * n_z] for i in range(q))
        older = tuple(
            theta_z[:, q * n_z + j * n_u : q * n_z + (j + 1) * n_u] for j in range(q - 1)
        )
        betas = (beta_new,) + older
        steps.append(ArmaStep(alphas=alphas, betas=betas, t=t))
        residual = response - regressors @ theta_t
        residual_norms[t - t0] = np.sqrt(np.mean(residual**2))
        condition_numbers[t - t0] = cond
    return IdentifiedModel(steps, residual_norms, condition_numbers, t0)


def debias_full_state(a_hat: np.ndarray, b_hat: np.ndarray, gain: np.ndarray):
    """Recover the open-loop pair from a closed-loop full-state fit.

    With collection law u = u_nom + du + K z-deviation, the regression on
    the perturbation alone converges to (A + B K, B); the open-loop pair is
    (a_hat - b_hat @ K, b_hat).
    """
    a_hat = np.asarray(a_hat, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    gain = np.asarray(gain, dtype=float)
    if a_hat.shape[0] != b_hat.shape[0] or gain.shape != (b_hat.shape[1], a_hat.shape[1]):
        raise ValueError(
            f"incompatible shapes a_hat{a_hat.shape}, b_hat{b_hat.shape}, gain{gain.shape}"
        )
    return a_hat - b_hat @ gain, b_hat


def input_toeplitz(ltv_truth: Sequence[LtvTriple], q: int, t: int) -> np.ndarray:
    """Influence of (du_{t-1}, ..., du_{t-q}) on (dz_{t-1}, ..., dz_{t-q}).

    Block (i, j) is C_{t-i} A_{t-i-1} ... A_{t-j+1} B_{t-j} for j > i and
    zero otherwise (inputs cannot affect earlier outputs).
    """
    a_seq, b_seq, c_seq = _as_triples(ltv_truth)
    n_z = c_seq[t - 1].shape[0]
    n_u = b_seq[0].shape[1]
    n_x = a_seq[0].shape[0]
    out = np.zeros((q * n_z, q * n_u))
    for i in range(1, q + 1):
        prod = np.eye(n_x)
        for j in range(i + 1, q + 1):
            block = c_seq[t - i] @ prod @ b_seq[t - j]
            out[(i - 1) * n_z : i * n_z, (j - 1) * n_u : j * n_u] = block
            prod = prod @ a_seq[t - j]
    return out


def _noise_toeplitz(a_seq, c_seq, q: int, t: int) -> np.ndarray:
    """Like ``input_toeplitz`` with the input matrices replaced by identity."""
    n_z = c_seq[t - 1].shape[0]
    n_x = a_seq[0].shape[0]
    out = np.zeros((q * n_z, q * n_x))
    for i in range(1, q + 1):
        prod = np.eye(n_x)
        for j in range(i + 1, q + 1):
            out[(i - 1) * n_z : i * n_z, (j - 1) * n_x : j * n_x] = c_seq[t - i] @ prod
            prod = prod @ a_seq[t - j]
    return out


@dataclass(frozen=True)
class NoiseStacks:
    """Diagnostic block matrices describing how stacked noise enters dz_t.

    With Omega = [w_{t-1}, ..., w_{t-q}] and V = [v_{t-1}, ..., v_{t-q}]
    (newest first), the exact decomposition is

        dz_t = alpha dZ^q + beta dU^q + beta_d Omega - alpha V + v_t.

    These matrices exist for test construction only; the estimator never
    computes them.
    """

    g_q: np.ndarray        # input Toeplitz (q n_z, q n_u)
    g_q_omega: np.ndarray  # process-noise Toeplitz (q n_z, q n_x)
    beta_d: np.ndarray     # direct process-noise coefficient (n_z, q n_x)


def arma_from_ltv(ltv_truth: Sequence[LtvTriple], q: int, t: int) -> ArmaStep:
    """Analytic ARMA coefficients that exactly fit a known LTV triple.

    Requires the depth-``q`` observability map at ``t`` to have full column
    rank; the alpha blocks are C_t A_{t-1} ... A_{t-q} applied through the
    observability pseudoinverse, the beta blocks the direct input response
    corrected by the alphas acting on the input Toeplitz.
    """
    rank, full = observability_rank(ltv_truth, q, t)
    if not full:
        raise ValueError(f"observability map rank {rank} is not full at t={t}, q={q}")
    a_seq, b_seq, c_seq = _as_triples(ltv_truth)
    n_x = a_seq[0].shape[0]
    n_z = c_seq[t].shape[0]
    n_u = b_seq[0].shape[1]
    prod = np.eye(n_x)
    for i in range(1, q + 1):
        prod = prod @ a_seq[t - i]
    phi = c_seq[t] @ prod  # C_t A_{t-1} ... A_{t-q}
    obs = observability_matrix(ltv_truth, q, t)
    alphas_flat = phi @ np.linalg.pinv(obs)
    direct = np.zeros((n_z, q * n_u))
    prod = np.eye(n_x)
    for j in range(1, q + 1):
        direct[:, (j - 1) * n_u : j * n_u] = c_seq[t] @ prod @ b_seq[t - j]
        prod = prod @ a_seq[t - j]
    betas_flat = direct - alphas_flat @ input_toeplitz(ltv_truth, q, t)
    alphas = tuple(alphas_flat[:, i * n_z : (i + 1) * n_z] for i in range(q))
    betas = tuple(betas_flat[:, j * n_u : (j + 1) * n_u] for j in range(q))
    return ArmaStep(alphas=alphas, betas=betas, t=t)


def noise_stacks(ltv_truth: Sequence[LtvTriple], q: int, t: int) -> NoiseStacks:
    """Build the diagnostic noise-influence matrices at time ``t``."""
    a_seq, _, c_seq = _as_triples(ltv_truth)
    n_x = a_seq[0].shape[0]
    arma = arma_from_ltv(ltv_truth, q, t)
    alphas_flat = np.hstack(arma.alphas)
    g_q = input_toeplitz(ltv_truth, q, t)
    g_q_omega = _noise_toeplitz(a_seq, c_seq, q, t)
    direct = np.zeros((arma.n_z, q * n_x))
    prod = np.eye(n_x)
    for j in range(1, q + 1):
        direct[:, (j - 1) * n_x : j * n_x] = c_seq[t] @ prod
        prod = prod @ a_seq[t - j]
    beta_d = direct - alphas_flat @ g_q_omega
    return NoiseStacks(g_q=g_q, g_q_omega=g_q_omega, beta_d=beta_d)


@dataclass
class BiasReport:
    """Per-step Frobenius errors of identified coefficients against truth."""

    timesteps: np.ndarray
    errors: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def max(self) -> float:
        return float(np.max(self.errors))

    @property
    def std(self) -> float:
        return float(np.std(self.errors))


def coefficient_matrix(step: ArmaStep) -> np.ndarray:
    """All coefficients of one step as a single (n_z, q(n_z+n_u)) matrix."""
    return np.hstack(step.alphas + step.betas)


def bias_report(identified: IdentifiedModel, truth: Sequence[ArmaStep]) -> BiasReport:
    """Frobenius-norm coefficient errors per step, over the common time range."""
    truth_by_t = {step.t: step for step in truth}
    timesteps = [s.t for s in identified.steps if s.t in truth_by_t]
    if not timesteps:
        raise ValueError("identified model and truth share no timesteps")
    errors = np.array(
        [
            np.linalg.norm(
                coefficient_matrix(identified.step_at(t)) - coefficient_matrix(truth_by_t[t])
            )
            for t in timesteps
        ]
    )
    return BiasReport(np.asarray(timesteps), errors)
