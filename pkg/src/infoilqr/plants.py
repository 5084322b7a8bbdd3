"""Simulated discrete-time plants with seeded process and measurement noise.

The rest of the package treats a plant as an opaque rollout oracle: the only
way to learn about the dynamics is to simulate full trajectories under a
control policy.  Step maps broadcast over leading batch axes so that many
rollouts advance in lockstep; all randomness is pre-drawn per rollout from
independently seeded streams, which makes results identical whether rollouts
run one at a time or batched.

The nonlinear plants integrate their analytic equations of motion with a
semi-implicit Euler scheme at fixed dt.  Angles are measured from the upright
position (theta = 0 is the swing-up target) and are never wrapped, so
finite-difference linearizations stay smooth across the +-pi region.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .info_state import stack_deviation_window
from .seeding import (
    STREAM_INITIAL,
    STREAM_MEASUREMENT,
    STREAM_PROCESS,
    stream_generator,
)

DIVERGENCE_LIMIT = 1e6

FULL_STATE = "full_state"
POSITIONS_ONLY = "positions_only"

RAW_MEASUREMENT = "raw_measurement"
INFORMATION_STATE = "information_state"


class DivergenceError(RuntimeError):
    """A rollout produced a non-finite or exploding state."""

    def __init__(self, timestep: int, detail: str = ""):
        self.timestep = timestep
        msg = f"state diverged at timestep {timestep}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


@dataclass(frozen=True)
class NoiseSpec:
    """Per-component standard deviations of the injected disturbances.

    ``process_std`` scales the additive dynamics noise, ``measurement_std``
    the sensor noise, and ``initial_deviation_std`` the random offset of the
    rollout's initial state.  Each source draws from its own stream keyed on
    ``seed``, so identical seeds reproduce identical noise regardless of
    which other sources are active.
    """

    process_std: float = 0.0
    measurement_std: float = 0.0
    initial_deviation_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("process_std", "measurement_std", "initial_deviation_std"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")

    @property
    def noiseless(self) -> bool:
        return (
            self.process_std == 0.0
            and self.measurement_std == 0.0
            and self.initial_deviation_std == 0.0
        )


def draw_noise(spec: NoiseSpec, n_x: int, n_z: int, horizon: int):
    """Pre-draw all noise arrays for one rollout (one array per stream)."""
    if spec.initial_deviation_std > 0.0:
        init = stream_generator(spec.seed, STREAM_INITIAL).normal(
            0.0, spec.initial_deviation_std, n_x
        )
    else:
        init = np.zeros(n_x)
    if spec.process_std > 0.0:
        process = stream_generator(spec.seed, STREAM_PROCESS).normal(
            0.0, spec.process_std, (horizon, n_x)
        )
    else:
        process = np.zeros((horizon, n_x))
    if spec.measurement_std > 0.0:
        measurement = stream_generator(spec.seed, STREAM_MEASUREMENT).normal(
            0.0, spec.measurement_std, (horizon + 1, n_z)
        )
    else:
        measurement = np.zeros((horizon + 1, n_z))
    return init, process, measurement


class Plant:
    """Base class for discrete-time simulated plants."""

    name = "plant"
    n_x = 0
    n_u = 0
    position_indices: tuple = ()

    def __init__(self, dt: float = 0.01):
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.dt = float(dt)
        # Bookkeeping only; never read by the dynamics.
        self.rollout_count = 0

    def step(self, state: np.ndarray, control: np.ndarray, t: int = 0) -> np.ndarray:
        raise NotImplementedError

    def _check_step_args(self, state, control):
        state = np.asarray(state, dtype=float)
        control = np.asarray(control, dtype=float)
        if state.shape[-1] != self.n_x:
            raise ValueError(f"state dimension {state.shape[-1]} != n_x={self.n_x}")
        if control.shape[-1] != self.n_u:
            raise ValueError(f"control dimension {control.shape[-1]} != n_u={self.n_u}")
        if not (np.all(np.isfinite(state)) and np.all(np.isfinite(control))):
            raise ValueError("non-finite state or control passed to step")
        return state, control


class Pendulum(Plant):
    """Torque-actuated pendulum; state [theta, theta_dot], theta = 0 upright."""

    name = "pendulum"
    n_x = 2
    n_u = 1
    position_indices = (0,)

    def __init__(
        self,
        mass: float = 1.0,
        length: float = 1.0,
        gravity: float = 9.81,
        damping: float = 0.0,
        dt: float = 0.01,
    ):
        super().__init__(dt)
        self.mass = float(mass)
        self.length = float(length)
        self.gravity = float(gravity)
        self.damping = float(damping)

    def acceleration(self, state: np.ndarray, control: np.ndarray) -> np.ndarray:
        theta = state[..., 0]
        omega = state[..., 1]
        torque = control[..., 0]
        inertia = self.mass * self.length**2
        return (self.gravity / self.length) * np.sin(theta) + (
            torque - self.damping * omega
        ) / inertia

    def step(self, state, control, t: int = 0) -> np.ndarray:
        state, control = self._check_step_args(state, control)
        omega_next = state[..., 1] + self.dt * self.acceleration(state, control)
        theta_next = state[..., 0] + self.dt * omega_next
        return np.stack([theta_next, omega_next], axis=-1)

    def energy(self, state: np.ndarray) -> np.ndarray:
        """Total mechanical energy; conserved for zero control and damping."""
        state = np.asarray(state, dtype=float)
        kinetic = 0.5 * self.mass * self.length**2 * state[..., 1] ** 2
        potential = self.mass * self.gravity * self.length * np.cos(state[..., 0])
        return kinetic + potential


class Cartpole(Plant):
    """Cart with a point-mass pole; state [x, theta, x_dot, theta_dot].

    theta is measured from the upright vertical; the only actuation is a
    horizontal force on the cart.
    """

    name = "cartpole"
    n_x = 4
    n_u = 1
    position_indices = (0, 1)

    def __init__(
        self,
        cart_mass: float = 1.0,
        pole_mass: float = 0.1,
        pole_length: float = 0.5,
        gravity: float = 9.81,
        dt: float = 0.01,
    ):
        super().__init__(dt)
        self.cart_mass = float(cart_mass)
        self.pole_mass = float(pole_mass)
        self.pole_length = float(pole_length)
        self.gravity = float(gravity)

    def acceleration(self, state: np.ndarray, control: np.ndarray):
        theta = state[..., 1]
        theta_dot = state[..., 3]
        force = control[..., 0]
        m, big_m, length, g = self.pole_mass, self.cart_mass, self.pole_length, self.gravity
        sin_t, cos_t = np.sin(theta), np.cos(theta)
        denom = big_m + m * sin_t**2
        x_acc = (force + m * sin_t * (length * theta_dot**2 - g * cos_t)) / denom
        theta_acc = (
            (big_m + m) * g * sin_t - force * cos_t - m * length * theta_dot**2 * sin_t * cos_t
        ) / (length * denom)
        return x_acc, theta_acc

    def step(self, state, control, t: int = 0) -> np.ndarray:
        state, control = self._check_step_args(state, control)
        x_acc, theta_acc = self.acceleration(state, control)
        x_dot = state[..., 2] + self.dt * x_acc
        theta_dot = state[..., 3] + self.dt * theta_acc
        x_pos = state[..., 0] + self.dt * x_dot
        theta = state[..., 1] + self.dt * theta_dot
        return np.stack([x_pos, theta, x_dot, theta_dot], axis=-1)

    def energy(self, state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        theta = state[..., 1]
        x_dot = state[..., 2]
        theta_dot = state[..., 3]
        m, length = self.pole_mass, self.pole_length
        kinetic = (
            0.5 * (self.cart_mass + m) * x_dot**2
            + m * length * x_dot * theta_dot * np.cos(theta)
            + 0.5 * m * length**2 * theta_dot**2
        )
        potential = m * self.gravity * length * np.cos(theta)
        return kinetic + potential


class LinearPlant(Plant):
    """Synthetic discrete plant x_{t+1} = A_t x_t + B_t u_t (+ noise).

    ``a`` and ``b`` may be single matrices (time-invariant) or stacks with a
    leading time axis.  Used as ground truth in tests: its exact
    linearization is the constructing matrices themselves.
    """

    name = "synthetic_ltv"

    def __init__(self, a, b, dt: float = 1.0, position_indices: Optional[tuple] = None):
        super().__init__(dt)
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.a.ndim not in (2, 3) or self.b.ndim != self.a.ndim:
            raise ValueError("a and b must both be matrices or both time-stacked")
        self.time_varying = self.a.ndim == 3
        self.n_x = self.a.shape[-1]
        self.n_u = self.b.shape[-1]
        if self.a.shape[-2] != self.n_x or self.b.shape[-2] != self.n_x:
            raise ValueError("a and b row dimensions disagree")
        if position_indices is None:
            position_indices = tuple(range((self.n_x + 1) // 2))
        self.position_indices = tuple(position_indices)

    def matrices_at(self, t: int):
        if self.time_varying:
            return self.a[t], self.b[t]
        return self.a, self.b

    def step(self, state, control, t: int = 0) -> np.ndarray:
        state, control = self._check_step_args(state, control)
        a_t, b_t = self.matrices_at(t)
        return state @ a_t.T + control @ b_t.T


@dataclass(frozen=True)
class ObservationMode:
    """Linear measurement map z = C x with a 0/1 selector matrix."""

    kind: str
    selector: np.ndarray

    def __post_init__(self):
        sel = np.asarray(self.selector, dtype=float)
        object.__setattr__(self, "selector", sel)
        if self.kind == FULL_STATE:
            if sel.shape[0] != sel.shape[1] or not np.array_equal(sel, np.eye(sel.shape[0])):
                raise ValueError("full-state mode requires an identity selector")
        elif self.kind == POSITIONS_ONLY:
            if not np.all(np.isin(sel, (0.0, 1.0))) or not np.all(sel.sum(axis=1) == 1.0):
                raise ValueError("positions-only selector rows must pick exactly one coordinate")
        else:
            raise ValueError(f"unknown observation kind {self.kind!r}")

    @property
    def n_z(self) -> int:
        return self.selector.shape[0]

    @property
    def n_x(self) -> int:
        return self.selector.shape[1]


def full_state_mode(n_x: int) -> ObservationMode:
    return ObservationMode(FULL_STATE, np.eye(n_x))


def positions_only_mode(plant: Plant) -> ObservationMode:
    selector = np.zeros((len(plant.position_indices), plant.n_x))
    for row, idx in enumerate(plant.position_indices):
        selector[row, idx] = 1.0
    return ObservationMode(POSITIONS_ONLY, selector)


def observe(state: np.ndarray, mode: ObservationMode, measurement_noise=None) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != mode.n_x:
        raise ValueError(f"state dimension {state.shape[-1]} != selector columns {mode.n_x}")
    z = state @ mode.selector.T
    if measurement_noise is not None:
        noise = np.asarray(measurement_noise, dtype=float)
        if noise.shape[-1] != mode.n_z:
            raise ValueError(f"noise dimension {noise.shape[-1]} != n_z={mode.n_z}")
        z = z + noise
    return z


@dataclass
class Trajectory:
    """One rollout: states (T+1, n_x), controls (T, n_u), measurements (T+1, n_z)."""

    states: np.ndarray
    controls: np.ndarray
    measurements: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        self.measurements = np.asarray(self.measurements, dtype=float)
        if self.states.shape[0] != self.controls.shape[0] + 1:
            raise ValueError("states must be one step longer than controls")
        if self.measurements.shape[0] != self.states.shape[0]:
            raise ValueError("need one measurement per state")

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


class OpenLoopPolicy:
    """Applies a fixed control sequence, ignoring measurements."""

    def __init__(self, controls):
        self.controls = np.atleast_2d(np.asarray(controls, dtype=float))

    def horizon(self) -> int:
        return self.controls.shape[0]

    def __call__(self, t, z_hist, u_hist) -> np.ndarray:
        batch = z_hist.shape[0]
        return np.broadcast_to(self.controls[t], (batch, self.controls.shape[1])).copy()


class FeedbackAugmentedPolicy:
    """Nominal controls plus optional offsets and feedback on deviations.

    The applied control is

        u_t = u_nom_t + offset_t + G_t @ d_t

    where d_t is either the raw measurement deviation z_t - z_nom_t or the
    depth-``q`` information-state deviation (zero-padded before time zero),
    built against the stored nominal trajectory.  Offsets may be shared
    across the batch (shape (T, n_u)) or per-rollout ((R, T, n_u)).
    ``zero_initial_feedback`` pins the information state at t = 0 to the
    nominal one, so no feedback correction is applied on the first step.
    """

    def __init__(
        self,
        nominal_controls,
        nominal_measurements,
        q: int,
        gains=None,
        offsets=None,
        feedback_space: str = INFORMATION_STATE,
        zero_initial_feedback: bool = False,
    ):
        self.nominal_controls = np.atleast_2d(np.asarray(nominal_controls, dtype=float))
        self.nominal_measurements = np.atleast_2d(np.asarray(nominal_measurements, dtype=float))
        if self.nominal_measurements.shape[0] != self.nominal_controls.shape[0] + 1:
            raise ValueError("nominal measurements must be one step longer than controls")
        self.q = int(q)
        self.gains = None if gains is None else np.asarray(gains, dtype=float)
        if self.gains is not None and self.gains.shape[0] != self.nominal_controls.shape[0]:
            raise ValueError(
                f"need one gain per step: got {self.gains.shape[0]} for horizon "
                f"{self.nominal_controls.shape[0]}"
            )
        self.offsets = None if offsets is None else np.asarray(offsets, dtype=float)
        if feedback_space not in (RAW_MEASUREMENT, INFORMATION_STATE):
            raise ValueError(f"unknown feedback space {feedback_space!r}")
        self.feedback_space = feedback_space
        self.zero_initial_feedback = bool(zero_initial_feedback)

    def horizon(self) -> int:
        return self.nominal_controls.shape[0]

    def __call__(self, t, z_hist, u_hist) -> np.ndarray:
        batch = z_hist.shape[0]
        n_u = self.nominal_controls.shape[1]
        u = np.broadcast_to(self.nominal_controls[t], (batch, n_u)).copy()
        if self.offsets is not None:
            u += self.offsets[..., t, :]
        if self.gains is not None and not (t == 0 and self.zero_initial_feedback):
            if self.feedback_space == RAW_MEASUREMENT:
                dev = z_hist[:, t] - self.nominal_measurements[t]
            else:
                # only the trailing depth-q window of deviations is needed
                lo = max(0, t - self.q + 1)
                dz = z_hist[:, lo : t + 1] - self.nominal_measurements[lo : t + 1]
                du = u_hist[:, lo:t] - self.nominal_controls[lo:t]
                dev = stack_deviation_window(dz, du, self.q)
            u += dev @ self.gains[t].T
        return u


def simulate_batch(
    plant: Plant,
    initial_states: np.ndarray,
    policy,
    noise_specs: Sequence[NoiseSpec],
    horizon: int,
    mode: ObservationMode,
):
    """Advance a batch of rollouts in lockstep.

    Each rollout owns one ``NoiseSpec``; its streams are pre-drawn so the
    realized noise is independent of batching.  Returns arrays
    (states (R, T+1, n_x), controls (R, T, n_u), measurements (R, T+1, n_z)).
    Raises ``DivergenceError`` if any state goes non-finite or exceeds
    ``DIVERGENCE_LIMIT`` in magnitude.
    """
    n_rollouts = len(noise_specs)
    n_x, n_u, n_z = plant.n_x, plant.n_u, mode.n_z
    if mode.n_x != n_x:
        raise ValueError("observation selector does not match the plant dimension")
    x0 = np.asarray(initial_states, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (n_rollouts, n_x))
    if x0.shape != (n_rollouts, n_x):
        raise ValueError(f"initial states shape {x0.shape} != ({n_rollouts},{n_x})")
    if not np.all(np.isfinite(x0)):
        raise ValueError("non-finite initial state")
    if policy.horizon() < horizon:
        raise ValueError(f"policy covers {policy.horizon()} steps, rollout needs {horizon}")

    init = np.empty((n_rollouts, n_x))
    process = np.empty((n_rollouts, horizon, n_x))
    measurement = np.empty((n_rollouts, horizon + 1, n_z))
    for r, spec in enumerate(noise_specs):
        init[r], process[r], measurement[r] = draw_noise(spec, n_x, n_z, horizon)

    states = np.empty((n_rollouts, horizon + 1, n_x))
    controls = np.empty((n_rollouts, horizon, n_u))
    meas = np.empty((n_rollouts, horizon + 1, n_z))
    x = x0 + init
    states[:, 0] = x
    for t in range(horizon + 1):
        meas[:, t] = x @ mode.selector.T + measurement[:, t]
        if t == horizon:
            break
        u = np.asarray(policy(t, meas[:, : t + 1], controls[:, :t]), dtype=float)
        if u.shape != (n_rollouts, n_u):
            raise ValueError(f"policy returned shape {u.shape}, expected ({n_rollouts},{n_u})")
        if not np.all(np.isfinite(u)):
            raise DivergenceError(t, "policy produced non-finite control")
        controls[:, t] = u
        x = plant.step(x, u, t) + process[:, t]
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise DivergenceError(t + 1)
        states[:, t + 1] = x
    plant.rollout_count += n_rollouts
    return states, controls, meas


def rollout(
    plant: Plant,
    initial_state: np.ndarray,
    policy,
    noise: NoiseSpec,
    horizon: int,
    mode: Optional[ObservationMode] = None,
) -> Trajectory:
    """Simulate one full trajectory under ``policy`` with seeded noise."""
    if mode is None:
        mode = full_state_mode(plant.n_x)
    states, controls, meas = simulate_batch(
        plant, np.asarray(initial_state, dtype=float)[None, :], policy, [noise], horizon, mode
    )
    return Trajectory(states[0], controls[0], meas[0])


def linearize_fd(
    plant: Plant,
    states: np.ndarray,
    controls: np.ndarray,
    step_size: float = 1e-5,
):
    """Central finite-difference Jacobians of the step map along a trajectory.

    Ground-truth oracle for tests and diagnostics; the optimizer itself never
    calls it.  The perturbation of each coordinate is ``step_size`` scaled by
    max(1, |coordinate|).  Returns (A (T, n_x, n_x), B (T, n_x, n_u)).
    """
    states = np.asarray(states, dtype=float)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    horizon = controls.shape[0]
    n_x, n_u = plant.n_x, plant.n_u
    a_seq = np.empty((horizon, n_x, n_x))
    b_seq = np.empty((horizon, n_x, n_u))
    for t in range(horizon):
        x, u = states[t], controls[t]
        hx = step_size * np.maximum(1.0, np.abs(x))
        hu = step_size * np.maximum(1.0, np.abs(u))
        xp = np.repeat(x[None, :], 2 * n_x, axis=0)
        for i in range(n_x):
            xp[2 * i, i] += hx[i]
            xp[2 * i + 1, i] -= hx[i]
        fx = plant.step(xp, np.broadcast_to(u, (2 * n_x, n_u)), t)
        for i in range(n_x):
            a_seq[t, :, i] = (fx[2 * i] - fx[2 * i + 1]) / (2 * hx[i])
        up = np.repeat(u[None, :], 2 * n_u, axis=0)
        for j in range(n_u):
            up[2 * j, j] += hu[j]
            up[2 * j + 1, j] -= hu[j]
        fu = plant.step(np.broadcast_to(x, (2 * n_u, n_x)), up, t)
        for j in range(n_u):
            b_seq[t, :, j] = (fu[2 * j] - fu[2 * j + 1]) / (2 * hu[j])
        if not (np.all(np.isfinite(a_seq[t])) and np.all(np.isfinite(b_seq[t]))):
            raise ValueError(f"non-finite Jacobian at timestep {t}")
    return a_seq, b_seq
