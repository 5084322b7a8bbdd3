import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infoilqr.info_state import (
    ArmaStep,
    InsufficientHistoryError,
    assemble_ltv,
    build_info_state,
    info_dim,
    observability_rank,
    stack_deviation_window,
    unstack_info_state,
)


class TestBuildInfoState:
    def test_depth_one_is_latest_measurement(self):
        info = build_info_state([[0.1, 0.2], [0.3, 0.4]], [[1.0]], q=1)
        assert np.array_equal(info.vector, np.array([0.3, 0.4]))

    def test_depth_two_scalar_ordering(self):
        info = build_info_state([[0.1], [0.3]], [[0.5]], q=2)
        assert np.array_equal(info.vector, np.array([0.3, 0.1, 0.5]))

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(5, 2))
        u = rng.normal(size=(4, 1))
        info = build_info_state(z, u, q=3)
        z_back, u_back = unstack_info_state(info)
        assert np.allclose(z_back, z[-3:])
        assert np.allclose(u_back, u[-2:])

    def test_padding_repeat_first(self):
        info = build_info_state([[2.0]], np.zeros((0, 1)), q=3, pad="repeat_first")
        assert np.array_equal(info.vector, np.array([2.0, 2.0, 2.0, 0.0, 0.0]))

    def test_padding_zero(self):
        info = build_info_state([[2.0]], np.zeros((0, 1)), q=2, pad="zero")
        assert np.array_equal(info.vector, np.array([2.0, 0.0, 0.0]))

    def test_insufficient_history_raises(self):
        with pytest.raises(InsufficientHistoryError):
            build_info_state([[1.0]], np.zeros((0, 1)), q=2, pad=None)

    @given(
        q=st.integers(min_value=1, max_value=4),
        n_z=st.integers(min_value=1, max_value=3),
        n_u=st.integers(min_value=1, max_value=2),
        seed=st.integers(min_value=0, max_value=1000),
    )
    @settings(max_examples=40, deadline=None)
    def test_dimension_invariant(self, q, n_z, n_u, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(q + 2, n_z))
        u = rng.normal(size=(q + 1, n_u))
        info = build_info_state(z, u, q=q)
        assert info.vector.shape == (info_dim(q, n_z, n_u),)
        z_back, u_back = unstack_info_state(info)
        assert np.allclose(z_back, z[-q:])
        if q > 1:
            assert np.allclose(u_back, u[-(q - 1):])


class TestStackDeviationWindow:
    def test_matches_build_on_full_history(self):
        rng = np.random.default_rng(2)
        dz = rng.normal(size=(3, 6, 2))
        du = rng.normal(size=(3, 5, 1))
        stacked = stack_deviation_window(dz, du, q=2)
        for i in range(3):
            ref = build_info_state(dz[i], du[i], q=2, pad="zero")
            assert np.allclose(stacked[i], ref.vector)

    def test_zero_padding_before_time_zero(self):
        dz = np.ones((1, 1, 1))
        du = np.zeros((1, 0, 1))
        stacked = stack_deviation_window(dz, du, q=3)
        assert np.array_equal(stacked[0], np.array([1.0, 0, 0, 0, 0]))


class TestAssembleLtv:
    def test_depth_one_collapses(self):
        step = ArmaStep((np.array([[0.7]]),), (np.array([[0.3]]),))
        lift = assemble_ltv(step)
        assert np.array_equal(lift.a_mat, np.array([[0.7]]))
        assert np.array_equal(lift.b_mat, np.array([[0.3]]))

    def test_scalar_depth_two_worked_example(self):
        step = ArmaStep(
            (np.array([[0.9]]), np.array([[-0.1]])),
            (np.array([[0.2]]), np.array([[0.05]])),
        )
        lift = assemble_ltv(step)
        assert np.array_equal(
            lift.a_mat, np.array([[0.9, -0.1, 0.05], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        )
        assert np.array_equal(lift.b_mat, np.array([[0.2], [0.0], [1.0]]))

    @given(
        q=st.integers(min_value=1, max_value=4),
        n_z=st.integers(min_value=1, max_value=3),
        n_u=st.integers(min_value=1, max_value=2),
        seed=st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=50, deadline=None)
    def test_structural_exactness(self, q, n_z, n_u, seed):
        rng = np.random.default_rng(seed)
        step = ArmaStep(
            tuple(rng.normal(size=(n_z, n_z)) for _ in range(q)),
            tuple(rng.normal(size=(n_z, n_u)) for _ in range(q)),
        )
        lift = assemble_ltv(step)
        d = info_dim(q, n_z, n_u)
        assert lift.a_mat.shape == (d, d)
        assert lift.b_mat.shape == (d, n_u)
        # reconstruct the expected pattern entry by entry
        expected_a = np.zeros((d, d))
        for i in range(q):
            expected_a[:n_z, i * n_z : (i + 1) * n_z] = step.alphas[i]
        for j in range(1, q):
            expected_a[:n_z, q * n_z + (j - 1) * n_u : q * n_z + j * n_u] = step.betas[j]
        for i in range(1, q):
            expected_a[i * n_z : (i + 1) * n_z, (i - 1) * n_z : i * n_z] = np.eye(n_z)
        for j in range(1, q - 1):
            r = q * n_z + j * n_u
            expected_a[r : r + n_u, r - n_u : r] = np.eye(n_u)
        assert np.array_equal(lift.a_mat, expected_a)
        expected_b = np.zeros((d, n_u))
        expected_b[:n_z] = step.betas[0]
        if q >= 2:
            expected_b[q * n_z : q * n_z + n_u] = np.eye(n_u)
        assert np.array_equal(lift.b_mat, expected_b)

    def test_propagation_matches_arma_recursion(self):
        # iterating the lifted transition reproduces the scalar ARMA recursion
        rng = np.random.default_rng(7)
        q, n_z, n_u, steps = 3, 2, 1, 20
        arma = [
            ArmaStep(
                tuple(rng.normal(0, 0.4, (n_z, n_z)) for _ in range(q)),
                tuple(rng.normal(0, 0.4, (n_z, n_u)) for _ in range(q)),
                t=t,
            )
            for t in range(steps + 1)
        ]
        du = rng.normal(size=(steps, n_u))
        # direct recursion with zero pre-history
        dz = np.zeros((steps + 1, n_z))
        for t in range(1, steps + 1):
            step = arma[t]
            acc = np.zeros(n_z)
            for i in range(1, q + 1):
                if t - i >= 0:
                    acc += step.alphas[i - 1] @ dz[t - i]
                if t - i >= 0 and t - i < steps:
                    acc += step.betas[i - 1] @ du[t - i]
            dz[t] = acc
        # lifted propagation
        state = np.zeros(info_dim(q, n_z, n_u))
        for t in range(steps):
            lift = assemble_ltv(arma[t + 1])
            state = lift.a_mat @ state + lift.b_mat @ du[t]
            assert np.max(np.abs(state[:n_z] - dz[t + 1])) < 1e-12


class TestObservabilityRank:
    def test_full_observation_depth_one(self):
        rng = np.random.default_rng(3)
        n = 3
        ltv = [(rng.normal(size=(n, n)), rng.normal(size=(n, 1)), np.eye(n)) for _ in range(5)]
        rank, full = observability_rank(ltv, q=1, t=2)
        assert rank == n and full

    def test_pendulum_positions_depth_two(self, pendulum):
        from infoilqr.plants import NoiseSpec, OpenLoopPolicy, linearize_fd, positions_only_mode, rollout

        mode = positions_only_mode(pendulum)
        traj = rollout(
            pendulum,
            np.array([np.pi - 0.5, 0.0]),
            OpenLoopPolicy(np.zeros((10, 1))),
            NoiseSpec(seed=0),
            10,
            mode,
        )
        a_seq, b_seq = linearize_fd(pendulum, traj.states, traj.controls)
        ltv = [(a_seq[t], b_seq[t], mode.selector) for t in range(10)]
        ltv.append((a_seq[-1], b_seq[-1], mode.selector))
        rank, full = observability_rank(ltv, q=2, t=5)
        assert rank == 2 and full

    def test_zero_output_map(self):
        n = 2
        ltv = [(np.eye(n), np.ones((n, 1)), np.zeros((1, n))) for _ in range(4)]
        rank, full = observability_rank(ltv, q=2, t=3)
        assert rank == 0 and not full


def test_info_dim_validates_depth():
    with pytest.raises(ValueError):
        info_dim(0, 1, 1)
