"""Self-contained verification routines exposed through the ``check`` command.

Three independent cross-checks of the numerical core:

- analytic ARMA coefficients of random observable LTV systems against the
  noiseless least-squares fit,
- the production Riccati sweep against a fixed-point iteration written in
  the matrix-inversion form (and the two printed forms against each other),
- the stationarity residual against central finite differences of the
  trajectory cost on the pendulum, using exact finite-difference Jacobians
  lifted into information-state coordinates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .info_state import assemble_ltv, info_dim, observability_rank
from .optimizer import (
    CostSpec,
    backward_pass,
    control_gradient,
    evaluate_cost,
    riccati_step_inverse_form,
)
from .plants import (
    NoiseSpec,
    OpenLoopPolicy,
    Pendulum,
    linearize_fd,
    positions_only_mode,
    rollout,
)
from .sysid import RolloutDataset, arma_from_ltv, fit_arma


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed_s: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.elapsed_s:.1f}s)"


def random_observable_ltv(rng: np.random.Generator, n_x: int, q: int, n_u: int, horizon: int):
    """Random time-varying triple with q * n_z = n_x (uniquely identifiable).

    Entries are scaled so trajectories neither die out nor explode over the
    horizon; resamples until the depth-q observability map is full rank.
    """
    if n_x % q != 0:
        raise ValueError(f"need q | n_x for exact identifiability, got q={q}, n_x={n_x}")
    n_z = n_x // q
    for _ in range(50):
        a_seq = rng.normal(0.0, 0.9 / np.sqrt(n_x), (horizon, n_x, n_x))
        a_seq += np.eye(n_x) * 0.3
        b_seq = rng.normal(0.0, 1.0, (horizon, n_x, n_u))
        c_seq = rng.normal(0.0, 1.0, (horizon + 1, n_z, n_x))
        ltv = [(a_seq[t], b_seq[t], c_seq[t]) for t in range(horizon)]
        ltv.append((a_seq[-1], b_seq[-1], c_seq[horizon]))
        ok = all(observability_rank(ltv, q, t)[1] for t in range(q, horizon + 1))
        if ok:
            return ltv, n_z
    raise RuntimeError("failed to sample an observable system")


def simulate_ltv_deviations(ltv, n_s: int, horizon: int, rng: np.random.Generator,
                            x0_std: float = 0.3, u_std: float = 0.2):
    """Noiseless deviation rollouts of an LTV triple under random excitation."""
    n_x = ltv[0][0].shape[0]
    n_u = ltv[0][1].shape[1]
    n_z = ltv[0][2].shape[0]
    dx = rng.normal(0.0, x0_std, (n_s, n_x))
    du = rng.normal(0.0, u_std, (n_s, horizon, n_u))
    dz = np.zeros((n_s, horizon + 1, n_z))
    for t in range(horizon + 1):
        a_t, b_t, c_t = ltv[t]
        dz[:, t] = dx @ c_t.T
        if t < horizon:
            dx = dx @ a_t.T + du[:, t] @ b_t.T
    return dz, du


def check_arma_oracle(n_systems: int = 20, seed: int = 0, tol: float = 1e-6) -> CheckResult:
    """Noiseless least-squares ARMA fits match the analytic coefficients."""
    tic = time.perf_counter()
    rng = np.random.default_rng(seed)
    combos = [(1, 1), (1, 2), (1, 3), (1, 4), (2, 2), (2, 4), (3, 3)]  # (q, n_x)
    worst = 0.0
    for i in range(n_systems):
        q, n_x = combos[i % len(combos)]
        n_u = 1 + (i % 2)
        horizon = q + n_x + 8
        ltv, n_z = random_observable_ltv(rng, n_x, q, n_u, horizon)
        d = q * (n_z + n_u)
        dz, du = simulate_ltv_deviations(ltv, 2 * d + 10, horizon, rng)
        dataset = RolloutDataset(delta_z=dz, delta_u_applied=du, delta_u_pert=du, q=q)
        model = fit_arma(dataset)
        for step in model.steps:
            truth = arma_from_ltv(ltv, q, step.t)
            err = max(
                np.max(np.abs(np.hstack(step.alphas) - np.hstack(truth.alphas))),
                np.max(np.abs(np.hstack(step.betas) - np.hstack(truth.betas))),
            )
            worst = max(worst, err)
    elapsed = time.perf_counter() - tic
    return CheckResult(
        "arma-oracle",
        worst < tol,
        f"{n_systems} systems, max coefficient error {worst:.2e} (tol {tol:g})",
        elapsed,
    )


def _random_lti(rng: np.random.Generator, n_x: int, n_u: int):
    a_mat = rng.normal(0.0, 1.0, (n_x, n_x))
    radius = max(np.abs(np.linalg.eigvals(a_mat)))
    a_mat *= rng.uniform(0.5, 0.95) / radius
    b_mat = rng.normal(0.0, 1.0, (n_x, n_u))
    m = rng.normal(0.0, 1.0, (n_x, n_x))
    q_run = m @ m.T / n_x + 0.1 * np.eye(n_x)
    m = rng.normal(0.0, 1.0, (n_u, n_u))
    r = m @ m.T / n_u + 0.1 * np.eye(n_u)
    m = rng.normal(0.0, 1.0, (n_x, n_x))
    q_term = m @ m.T / n_x + 0.1 * np.eye(n_x)
    return a_mat, b_mat, q_run, r, q_term


def check_riccati(n_systems: int = 20, seed: int = 0, tol: float = 1e-6,
                  form_tol: float = 1e-8) -> CheckResult:
    """Backward pass V_0 against the inverse-form fixed-point oracle."""
    tic = time.perf_counter()
    rng = np.random.default_rng(seed)
    horizon = 40
    worst_rel = 0.0
    worst_form = 0.0
    for i in range(n_systems):
        n_x = int(rng.integers(2, 5))
        n_u = int(rng.integers(1, 3))
        a_mat, b_mat, q_run, r, q_term = _random_lti(rng, n_x, n_u)
        from .info_state import ArmaStep

        lift = assemble_ltv(ArmaStep((a_mat,), (b_mat,)))
        cost = CostSpec(q_run, r, q_term, np.zeros(n_x))
        u_bar = rng.normal(0.0, 0.5, (horizon, n_u))
        z_bar = rng.normal(0.0, 0.5, (horizon + 1, n_x))
        res = backward_pass([lift] * horizon, u_bar, z_bar, cost, q=1, t_start=0)
        v0 = res.big_v_seq[0]
        # independent route: iterate the inversion form from the terminal weight
        v_or = q_term.copy()
        for _ in range(horizon):
            v_prev = riccati_step_inverse_form(v_or, a_mat, b_mat, r, q_run)
            worst_form = max(
                worst_form,
                float(
                    np.max(
                        np.abs(
                            v_prev
                            - (
                                q_run
                                + a_mat.T @ v_or @ a_mat
                                - a_mat.T
                                @ v_or
                                @ b_mat
                                @ np.linalg.solve(r + b_mat.T @ v_or @ b_mat, b_mat.T @ v_or @ a_mat)
                            )
                        )
                    )
                ),
            )
            v_or = v_prev
        rel = np.linalg.norm(v0 - v_or) / np.linalg.norm(v_or)
        worst_rel = max(worst_rel, float(rel))
    elapsed = time.perf_counter() - tic
    ok = worst_rel < tol and worst_form < form_tol
    return CheckResult(
        "riccati-oracle",
        ok,
        f"{n_systems} systems, V_0 rel err {worst_rel:.2e} (tol {tol:g}), "
        f"two-form gap {worst_form:.2e} (tol {form_tol:g})",
        elapsed,
    )


def check_gradient(seed: int = 0, tol: float = 1e-4, n_samples: int = 10) -> CheckResult:
    """Stationarity residual vs central finite differences of the cost.

    Runs on the noiseless pendulum with positions-only measurements at depth
    two; the lifted model comes from exact finite-difference Jacobians.  The
    residual is the half-gradient of the no-half cost, so finite differences
    are compared against twice the residual.
    """
    tic = time.perf_counter()
    rng = np.random.default_rng(seed)
    plant = Pendulum()
    mode = positions_only_mode(plant)
    horizon, q = 80, 2
    x0 = np.array([np.pi, 0.0])
    u_bar = 2.0 * np.sin(np.linspace(0.0, 2.0 * np.pi, horizon))[:, None]
    noise = NoiseSpec(seed=0)
    nominal = rollout(plant, x0, OpenLoopPolicy(u_bar), noise, horizon, mode)
    cost = CostSpec(np.array([[1.0]]), np.array([[0.05]]), np.array([[50.0]]), np.zeros(1))

    a_seq, b_seq = linearize_fd(plant, nominal.states, nominal.controls)
    c_sel = mode.selector
    ltv_truth = [(a_seq[t], b_seq[t], c_sel) for t in range(horizon)]
    ltv_truth.append((a_seq[-1], b_seq[-1], c_sel))
    lifted = [assemble_ltv(arma_from_ltv(ltv_truth, q, t)) for t in range(q, horizon + 1)]
    lifted = [lifted[0]] * (q - 1) + lifted
    half_grads = control_gradient(lifted, nominal.controls, nominal.measurements, cost, q, t_start=0)

    h = 1e-5
    sample_ts = rng.choice(np.arange(q, horizon - 1), size=n_samples, replace=False)
    worst = 0.0
    for t in sample_ts:
        for j in range(plant.n_u):
            u_plus = u_bar.copy()
            u_plus[t, j] += h
            traj_p = rollout(plant, x0, OpenLoopPolicy(u_plus), noise, horizon, mode)
            u_minus = u_bar.copy()
            u_minus[t, j] -= h
            traj_m = rollout(plant, x0, OpenLoopPolicy(u_minus), noise, horizon, mode)
            fd = (
                evaluate_cost(traj_p.measurements, traj_p.controls, cost)
                - evaluate_cost(traj_m.measurements, traj_m.controls, cost)
            ) / (2.0 * h)
            predicted = 2.0 * half_grads[t, j]
            rel = abs(predicted - fd) / max(abs(fd), 1e-12)
            worst = max(worst, float(rel))
    elapsed = time.perf_counter() - tic
    return CheckResult(
        "gradient-check",
        worst < tol,
        f"{n_samples} timesteps, worst relative error {worst:.2e} (tol {tol:g})",
        elapsed,
    )


def run_all_checks(seed: int = 0) -> list[CheckResult]:
    return [
        check_arma_oracle(seed=seed),
        check_riccati(seed=seed),
        check_gradient(seed=seed),
    ]
