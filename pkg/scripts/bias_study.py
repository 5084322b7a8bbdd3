#!/usr/bin/env python3
"""Measure ARMA coefficient bias on the partially observed pendulum.

Sweeps the rollout count at n_avg = 1 (the bias does not vanish) and the
averaging factor at fixed n_s (the bias does), against the analytic
coefficients of the exact finite-difference linearization.

    python scripts/bias_study.py --sigma-u 4.0 --initial-dev 2e-4
"""

import argparse

import numpy as np

from infoilqr.plants import (
    NoiseSpec,
    OpenLoopPolicy,
    Pendulum,
    linearize_fd,
    positions_only_mode,
    rollout,
)
from infoilqr.sysid import PerturbationPlan, arma_from_ltv, bias_report, collect_rollouts, fit_arma


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--horizon", type=int, default=150)
    parser.add_argument("--sigma-u", type=float, default=4.0)
    parser.add_argument("--initial-dev", type=float, default=2e-4)
    parser.add_argument("--noise-fraction", type=float, default=0.1)
    parser.add_argument("--seed", type=int, default=5)
    args = parser.parse_args()

    plant = Pendulum()
    mode = positions_only_mode(plant)
    q = 2
    nominal = rollout(
        plant,
        np.array([np.pi - 0.8, 0.0]),
        OpenLoopPolicy(np.zeros((args.horizon, 1))),
        NoiseSpec(seed=0),
        args.horizon,
        mode,
    )
    a_seq, b_seq = linearize_fd(plant, nominal.states, nominal.controls)
    ltv = [(a_seq[t], b_seq[t], mode.selector) for t in range(args.horizon)]
    ltv.append((a_seq[-1], b_seq[-1], mode.selector))
    truth = [arma_from_ltv(ltv, q, t) for t in range(q, args.horizon + 1)]

    def fit_error(noise, n_s, n_avg):
        plan = PerturbationPlan(sigma_u=args.sigma_u, n_s=n_s, n_avg=n_avg, seed=args.seed)
        dataset = collect_rollouts(plant, nominal, None, plan, noise, mode, q)
        model = fit_arma(dataset, t_start=q + plant.n_x + 2)
        return bias_report(model, truth).mean

    clean = fit_error(NoiseSpec(seed=3), 32, 1)
    print(f"noiseless fit error:        {clean:.3e}")

    std = args.noise_fraction * args.initial_dev
    noisy = NoiseSpec(std, std, args.initial_dev, seed=3)
    print("\nbias vs rollout count (n_avg = 1):")
    for n_s in (64, 256, 1024):
        err = fit_error(noisy, n_s, 1)
        print(f"  n_s = {n_s:5d}: {err:.3e}  ({err / clean:7.1f}x noiseless)")

    print("\nbias vs averaging factor (n_s = 32):")
    for n_avg in (1, 8, 32, 64):
        err = fit_error(noisy, 32, n_avg)
        print(f"  n_avg = {n_avg:3d}: {err:.3e}  ({err / clean:7.1f}x noiseless)")


if __name__ == "__main__":
    main()
