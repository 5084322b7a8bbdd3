"""Acceptance suite: one test per acceptance criterion, printed pass/fail.

Scenario ensembles use the calibrated desk-scale defaults (pendulum horizon
150, cartpole 200, 10% noise protocol on top of the configured initial
deviation).  Expensive ensembles are shared through session fixtures.
Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from infoilqr.cli import main as cli_main
from infoilqr.diagnostics import check_arma_oracle, check_gradient, check_riccati
from infoilqr.harness import ExperimentConfig, run_ensemble, run_scenario
from infoilqr.optimizer import CostSpec, SolverOptions, solve
from infoilqr.plants import (
    LinearPlant,
    NoiseSpec,
    OpenLoopPolicy,
    Pendulum,
    full_state_mode,
    linearize_fd,
    positions_only_mode,
    rollout,
)
from infoilqr.sysid import (
    PerturbationPlan,
    arma_from_ltv,
    bias_report,
    collect_rollouts,
    debias_full_state,
    fit_arma,
)

SEEDS_10 = tuple(range(10))


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"\n[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


def config_for(plant: str, scenario: str, seeds=SEEDS_10, **overrides) -> ExperimentConfig:
    base = dict(plant=plant, scenario=scenario, seeds=seeds, initial_deviation_std=0.002)
    if scenario.startswith("partial") or (
        scenario == "nominal_noiseless" and overrides.pop("partial", False)
    ):
        base["observation"] = "partial"
    iteration_budget = {
        ("pendulum", "nominal_noiseless"): 60,
        ("pendulum", "fully_observed_noisy_unmodified"): 30,
        ("pendulum", "fully_observed_noisy_modified"): 30,
        ("pendulum", "partial_noisy_unmodified"): 30,
        ("pendulum", "partial_noisy_modified"): 30,
        ("pendulum", "partial_noisy_averaged"): 40,
        ("cartpole", "nominal_noiseless"): 150,
        ("cartpole", "fully_observed_noisy_unmodified"): 60,
        ("cartpole", "fully_observed_noisy_modified"): 60,
        ("cartpole", "partial_noisy_unmodified"): 60,
        ("cartpole", "partial_noisy_modified"): 60,
        ("cartpole", "partial_noisy_averaged"): 150,
    }
    base["max_iterations"] = iteration_budget[(plant, scenario)]
    base.update(overrides)
    return ExperimentConfig(**base)


# ---- shared expensive runs -------------------------------------------------

@pytest.fixture(scope="session")
def pend_nominal_full():
    return run_scenario(config_for("pendulum", "nominal_noiseless", seeds=(0,)), 0)


@pytest.fixture(scope="session")
def pend_nominal_partial():
    return run_scenario(
        config_for("pendulum", "nominal_noiseless", seeds=(0,), partial=True), 0
    )


@pytest.fixture(scope="session")
def cart_nominal_full():
    return run_scenario(config_for("cartpole", "nominal_noiseless", seeds=(0,)), 0)


@pytest.fixture(scope="session")
def cart_nominal_partial():
    return run_scenario(
        config_for("cartpole", "nominal_noiseless", seeds=(0,), partial=True), 0
    )


@pytest.fixture(scope="session")
def pend_fully_modified():
    return run_ensemble(config_for("pendulum", "fully_observed_noisy_modified"))


@pytest.fixture(scope="session")
def cart_fully_modified():
    return run_ensemble(config_for("cartpole", "fully_observed_noisy_modified"))


@pytest.fixture(scope="session")
def pend_partial_unmodified():
    return run_ensemble(config_for("pendulum", "partial_noisy_unmodified"))


@pytest.fixture(scope="session")
def pend_partial_modified():
    return run_ensemble(config_for("pendulum", "partial_noisy_modified"))


@pytest.fixture(scope="session")
def cart_partial_unmodified():
    return run_ensemble(config_for("cartpole", "partial_noisy_unmodified"))


@pytest.fixture(scope="session")
def cart_partial_modified():
    return run_ensemble(config_for("cartpole", "partial_noisy_modified"))


@pytest.fixture(scope="session")
def pend_partial_averaged():
    return run_ensemble(config_for("pendulum", "partial_noisy_averaged"))


@pytest.fixture(scope="session")
def cart_partial_averaged():
    return run_ensemble(config_for("cartpole", "partial_noisy_averaged"))


# ---- criterion 1: analytic ARMA oracle ------------------------------------

def test_criterion_1_arma_oracle():
    result = check_arma_oracle(n_systems=20, seed=0, tol=1e-6)
    ok = result.passed and result.elapsed_s < 30.0
    report("criterion 1 (ARMA oracle)", ok, result.detail + f", {result.elapsed_s:.1f}s < 30s")


# ---- criterion 2: Riccati correctness --------------------------------------

def test_criterion_2_riccati():
    result = check_riccati(n_systems=20, seed=0, tol=1e-6, form_tol=1e-8)
    ok = result.passed and result.elapsed_s < 5.0
    report("criterion 2 (Riccati oracle)", ok, result.detail + f", {result.elapsed_s:.1f}s < 5s")


# ---- criterion 3: gradient check -------------------------------------------

def test_criterion_3_gradient():
    result = check_gradient(seed=0, tol=1e-4, n_samples=10)
    ok = result.passed and result.elapsed_s < 120.0
    report("criterion 3 (gradient check)", ok, result.detail + f", {result.elapsed_s:.1f}s < 2min")


# ---- criterion 4: LQR equivalence -------------------------------------------

def lqr_qp_oracle(a, b, q, r, qt, x0, horizon, target):
    n, m = a.shape[0], b.shape[1]
    phi = [np.eye(n)]
    for _ in range(horizon):
        phi.append(a @ phi[-1])
    gamma = np.zeros((horizon + 1, horizon, n, m))
    for t in range(1, horizon + 1):
        for s in range(t):
            gamma[t, s] = np.linalg.matrix_power(a, t - 1 - s) @ b
    hess = np.kron(np.eye(horizon), r)
    grad = np.zeros(horizon * m)
    for t in range(horizon + 1):
        weight = q if t < horizon else qt
        err0 = phi[t] @ x0 - target
        g_t = np.concatenate([gamma[t, s] for s in range(horizon)], axis=1)
        hess += g_t.T @ weight @ g_t
        grad += g_t.T @ weight @ err0
    controls = np.linalg.solve(hess, -grad).reshape(horizon, m)
    states = [x0]
    for t in range(horizon):
        states.append(a @ states[-1] + b @ controls[t])
    states = np.array(states)
    cost = sum(
        (states[t] - target) @ q @ (states[t] - target) + controls[t] @ r @ controls[t]
        for t in range(horizon)
    )
    cost += (states[horizon] - target) @ qt @ (states[horizon] - target)
    return float(cost)


def test_criterion_4_lqr_equivalence():
    a = np.array([[1.0, 0.1], [-0.02, 0.97]])
    b = np.array([[0.0], [0.1]])
    plant = LinearPlant(a, b)
    cost = CostSpec(
        np.diag([1.0, 0.2]), np.array([[0.5]]), np.diag([8.0, 1.0]), np.array([0.3, 0.0])
    )
    x0 = np.array([1.2, -0.4])
    horizon = 24
    result = solve(
        plant,
        x0,
        horizon,
        1,
        full_state_mode(2),
        cost,
        NoiseSpec(seed=0),
        PerturbationPlan(sigma_u=0.05, n_s=12, seed=1),
        SolverOptions(max_iterations=6, min_iterations=1),
    )
    optimum = lqr_qp_oracle(a, b, cost.q_run, cost.r, cost.q_terminal, x0, horizon, cost.target)
    rel = abs(result.final_cost - optimum) / optimum
    ok = rel < 1e-6 and len(result.records) <= 2
    report(
        "criterion 4 (LQR equivalence)",
        ok,
        f"relative error {rel:.2e} < 1e-6 in {len(result.records)} iterations",
    )


# ---- criterion 5: full-observation consistency ------------------------------

def test_criterion_5a_debiased_estimate_consistency():
    # 10% protocol on a linear plant: debiased (A, B) error must decrease
    # monotonically across n_s in {64, 256, 1024} in at least 9 of 10 seeds.
    a = np.array([[1.02, 0.1], [0.0, 0.98]])
    b = np.array([[0.0], [0.1]])
    plant = LinearPlant(a, b)
    mode = full_state_mode(2)
    horizon = 30
    gains = np.tile(np.array([[-0.5, -1.5]]), (horizon, 1, 1))
    truth = np.hstack([a, b])
    nominal = rollout(
        plant, np.zeros(2), OpenLoopPolicy(np.zeros((horizon, 1))), NoiseSpec(seed=0),
        horizon, mode,
    )
    monotone = 0
    for seed in SEEDS_10:
        noise = NoiseSpec(process_std=0.01, initial_deviation_std=0.1, seed=100 + seed)
        errors = []
        for n_s in (64, 256, 1024):
            plan = PerturbationPlan(sigma_u=0.3, n_s=n_s, seed=200 + seed)
            dataset = collect_rollouts(plant, nominal, gains, plan, noise, mode, q=1)
            model = fit_arma(dataset)  # closed-loop fit
            step_errors = []
            for step in model.steps:
                a_hat, b_hat = debias_full_state(
                    step.alphas[0], step.betas[0], gains[step.t - 1]
                )
                step_errors.append(np.linalg.norm(np.hstack([a_hat, b_hat]) - truth))
            errors.append(np.mean(step_errors))
        if errors[0] > errors[1] > errors[2]:
            monotone += 1
    ok = monotone >= 9
    report(
        "criterion 5a (debiased estimate consistency)",
        ok,
        f"error decreased monotonically over n_s in {monotone}/10 seeds (need >= 9)",
    )


def _within(ensemble, reference_cost, tol):
    margins = np.abs(ensemble.final_costs - reference_cost) / reference_cost
    return margins, int(np.sum(margins <= tol))


def test_criterion_5b_fully_observed_modified_matches_nominal(
    pend_nominal_full, cart_nominal_full, pend_fully_modified, cart_fully_modified
):
    tic = time.perf_counter()
    details = []
    ok = True
    for name, nominal, ensemble in (
        ("pendulum", pend_nominal_full, pend_fully_modified),
        ("cartpole", cart_nominal_full, cart_fully_modified),
    ):
        margins, inside = _within(ensemble, nominal.final_cost, 0.05)
        details.append(f"{name}: max |rel gap| {np.max(margins):.3%}, {inside}/10 within 5%")
        ok = ok and inside == len(ensemble.records) == 10
    elapsed = time.perf_counter() - tic
    report("criterion 5b (modified tracks nominal, full observation)", ok, "; ".join(details))
    assert elapsed < 900.0


# ---- criterion 6: partial-observation bias ----------------------------------

@pytest.fixture(scope="session")
def pendulum_partial_truth():
    """Exact-linearization ARMA coefficients along a swinging nominal."""
    plant = Pendulum()
    mode = positions_only_mode(plant)
    horizon, q = 150, 2
    nominal = rollout(
        plant,
        np.array([np.pi - 0.8, 0.0]),
        OpenLoopPolicy(np.zeros((horizon, 1))),
        NoiseSpec(seed=0),
        horizon,
        mode,
    )
    a_seq, b_seq = linearize_fd(plant, nominal.states, nominal.controls)
    ltv = [(a_seq[t], b_seq[t], mode.selector) for t in range(horizon)]
    ltv.append((a_seq[-1], b_seq[-1], mode.selector))
    truth = [arma_from_ltv(ltv, q, t) for t in range(q, horizon + 1)]
    return plant, mode, nominal, truth


def _partial_fit_error(plant, mode, nominal, truth, noise, sigma_u, n_s, n_avg, seed):
    plan = PerturbationPlan(sigma_u=sigma_u, n_s=n_s, n_avg=n_avg, seed=seed)
    dataset = collect_rollouts(plant, nominal, None, plan, noise, mode, q=2)
    model = fit_arma(dataset, t_start=2 + plant.n_x + 2)
    return bias_report(model, truth).mean


def test_criterion_6a_bias_plateau(pendulum_partial_truth):
    plant, mode, nominal, truth = pendulum_partial_truth
    sigma_u = 4.0
    noiseless = _partial_fit_error(
        plant, mode, nominal, truth, NoiseSpec(seed=3), sigma_u, 32, 1, seed=5
    )
    s0 = 2e-4
    noisy = NoiseSpec(
        process_std=0.1 * s0, measurement_std=0.1 * s0, initial_deviation_std=s0, seed=3
    )
    errors = [
        _partial_fit_error(plant, mode, nominal, truth, noisy, sigma_u, n_s, 1, seed=5)
        for n_s in (64, 256, 1024)
    ]
    floor = min(errors)
    plateau = errors[2] > 0.25 * errors[0]  # the error stops shrinking with n_s
    ok = floor > 5.0 * noiseless and plateau
    report(
        "criterion 6a (bias plateau, partial observation)",
        ok,
        f"noisy errors over n_s {[f'{e:.2e}' for e in errors]} vs noiseless "
        f"{noiseless:.2e}; floor = {floor / noiseless:.0f}x noiseless (need > 5x)",
    )


def test_criterion_6b_partial_runs_stay_above_nominal(
    pend_nominal_partial,
    cart_nominal_partial,
    pend_partial_unmodified,
    pend_partial_modified,
    cart_partial_unmodified,
    cart_partial_modified,
):
    details = []
    ok = True
    for name, nominal, ensembles in (
        ("pendulum", pend_nominal_partial, (pend_partial_unmodified, pend_partial_modified)),
        ("cartpole", cart_nominal_partial, (cart_partial_unmodified, cart_partial_modified)),
    ):
        for label, ensemble in zip(("unmodified", "modified"), ensembles):
            margins = (ensemble.final_costs - nominal.final_cost) / nominal.final_cost
            details.append(f"{name}/{label}: min margin {np.min(margins):+.1%}")
            ok = ok and len(ensemble.records) == 10 and np.all(margins > 0.02)
    report(
        "criterion 6b (partial noisy runs exceed nominal across 10 seeds)",
        ok,
        "; ".join(details),
    )


# ---- criterion 7: averaging recovery ----------------------------------------

def test_criterion_7_averaging_recovers(
    pend_nominal_partial, cart_nominal_partial, pend_partial_averaged, cart_partial_averaged
):
    details = []
    ok = True
    for name, nominal, ensemble, config in (
        (
            "pendulum",
            pend_nominal_partial,
            pend_partial_averaged,
            config_for("pendulum", "partial_noisy_averaged"),
        ),
        (
            "cartpole",
            cart_nominal_partial,
            cart_partial_averaged,
            config_for("cartpole", "partial_noisy_averaged"),
        ),
    ):
        margins, inside = _within(ensemble, nominal.final_cost, 0.10)
        details.append(f"{name}: {inside}/10 within 10% (max gap {np.max(margins):.1%})")
        ok = ok and inside >= 8
        # budget audit: every identification consumed exactly n_s * n_avg rollouts
        expected = config.n_s * config.resolved_n_avg()
        for record in ensemble.records:
            assert all(it.sysid_rollouts in (expected, 0) for it in record.records)
            assert any(it.sysid_rollouts == expected for it in record.records)
    report("criterion 7 (averaging recovery, n_avg=32)", ok, "; ".join(details))


# ---- criterion 8: descent properties ----------------------------------------

def test_criterion_8_descent(
    pend_nominal_full,
    pend_nominal_partial,
    cart_nominal_full,
    cart_nominal_partial,
    pend_fully_modified,
    cart_fully_modified,
):
    details = []
    ok = True
    for name, record in (
        ("pendulum/full", pend_nominal_full),
        ("pendulum/partial", pend_nominal_partial),
        ("cartpole/full", cart_nominal_full),
        ("cartpole/partial", cart_nominal_partial),
    ):
        costs = np.concatenate([[record.initial_cost], [r.cost for r in record.records]])
        monotone = bool(np.all(np.diff(costs) <= 1e-9 * np.maximum(costs[:-1], 1.0)))
        details.append(f"{name} monotone={monotone}")
        ok = ok and monotone
    # noiseless pendulum swing-up balances the pole
    final_angle = abs(pend_nominal_full.final_trajectory.states[-1, 0])
    details.append(f"pendulum terminal angle {final_angle:.4f} rad")
    ok = ok and final_angle < 0.05
    for name, ensemble in (
        ("pendulum noisy modified", pend_fully_modified),
        ("cartpole noisy modified", cart_fully_modified),
    ):
        initial_mean = np.mean([r.initial_cost for r in ensemble.records])
        final_mean = np.mean(ensemble.cost_matrix[:, -1])
        head = ensemble.cost_matrix[:, : 3].mean()
        tail = ensemble.cost_matrix[:, -3:].mean()
        decreasing = final_mean < initial_mean and tail < head
        details.append(f"{name}: mean {initial_mean:.0f} -> {final_mean:.0f}")
        ok = ok and decreasing
    report("criterion 8 (noiseless monotone, noisy mean descent)", ok, "; ".join(details))


# ---- criterion 9: byte reproducibility --------------------------------------

def test_criterion_9_reproducibility(tmp_path):
    config_path = tmp_path / "repro.cfg"
    config_path.write_text(
        "plant = pendulum\nscenario = partial_noisy_modified\nhorizon = 60\n"
        "max_iterations = 6\nmin_iterations = 1\nn_s = 16\nseeds = 4\n"
        "initial_deviation_std = 0.002\n"
    )
    assert cli_main(["run", "--config", str(config_path), "--out", str(tmp_path / "a")]) in (0, 2)
    assert cli_main(["run", "--config", str(config_path), "--out", str(tmp_path / "b")]) in (0, 2)
    identical = True
    for name in ("convergence.csv", "trajectory.csv"):
        a = (tmp_path / "a" / "partial_noisy_modified" / "seed_4" / name).read_bytes()
        b = (tmp_path / "b" / "partial_noisy_modified" / "seed_4" / name).read_bytes()
        identical = identical and a == b
    report("criterion 9 (byte-identical CSVs)", identical, "two runs, both files compared")


# ---- module invariant: averaging approaches the noiseless fit ---------------

def test_invariant_averaging_within_10x_noiseless(pendulum_partial_truth):
    plant, mode, nominal, truth = pendulum_partial_truth
    sigma_u = 4.0
    noiseless = _partial_fit_error(
        plant, mode, nominal, truth, NoiseSpec(seed=3), sigma_u, 32, 1, seed=5
    )
    s0 = 2e-4
    noisy = NoiseSpec(
        process_std=0.1 * s0, measurement_std=0.1 * s0, initial_deviation_std=s0, seed=3
    )
    averaged = _partial_fit_error(plant, mode, nominal, truth, noisy, sigma_u, 32, 32, seed=5)
    ok = averaged < 10.0 * noiseless
    report(
        "invariant (averaging approaches the noiseless fit)",
        ok,
        f"averaged error {averaged:.2e} vs noiseless {noiseless:.2e} "
        f"({averaged / noiseless:.1f}x, need < 10x)",
    )
