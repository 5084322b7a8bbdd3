"""Information-state vectors and their structured linear time-varying lift.

A system whose state is hidden behind a measurement map can be treated as
fully observed in terms of the *information state*: the stack of the last
``q`` measurement deviations and the last ``q-1`` control deviations,

    dZ_t = [dz_t, dz_{t-1}, ..., dz_{t-q+1}, du_{t-1}, ..., du_{t-q+1}],

newest block first in both groups.  An order-``q`` ARMA relation

    dz_t = sum_i alpha_{t-i} dz_{t-i} + sum_i beta_{t-i} du_{t-i},  i = 1..q

induces a linear transition dZ_t = A_{t-1} dZ_{t-1} + B_{t-1} du_{t-1} whose
matrices are the ARMA coefficients in the top block row plus an exact
shift-register pattern everywhere else.  ``assemble_ltv`` builds that pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

LtvTriple = tuple[np.ndarray, np.ndarray, np.ndarray]  # (A_t, B_t, C_t)


class InsufficientHistoryError(ValueError):
    """History shorter than the information-state depth with padding disabled."""


def info_dim(q: int, n_z: int, n_u: int) -> int:
    """Dimension of the depth-``q`` information state."""
    if q < 1:
        raise ValueError(f"information-state depth must be >= 1, got {q}")
    return q * n_z + (q - 1) * n_u


@dataclass(frozen=True)
class InformationState:
    vector: np.ndarray
    q: int
    n_z: int
    n_u: int

    def __post_init__(self):
        expected = info_dim(self.q, self.n_z, self.n_u)
        if self.vector.shape != (expected,):
            raise ValueError(
                f"information-state vector has shape {self.vector.shape}, expected ({expected},)"
            )
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("information-state vector has non-finite entries")

    @property
    def z_blocks(self) -> np.ndarray:
        """Measurement blocks, newest first, shape (q, n_z)."""
        return self.vector[: self.q * self.n_z].reshape(self.q, self.n_z)

    @property
    def u_blocks(self) -> np.ndarray:
        """Control blocks, newest first, shape (q-1, n_u)."""
        return self.vector[self.q * self.n_z :].reshape(self.q - 1, self.n_u)


def build_info_state(measurements, controls, q: int, pad: str | None = "repeat_first") -> InformationState:
    """Stack the trailing measurement/control history into an information state.

    ``measurements`` is the chronological history ending at the current step
    (last row is z_t); ``controls`` ends at u_{t-1}.  For histories shorter
    than the depth, ``pad`` selects the pre-history convention:

    - ``"repeat_first"``: missing measurements repeat the first recorded one
      and missing controls are zero (a system at rest before time zero),
    - ``"zero"``: missing blocks are zero (deviation histories),
    - ``None``: raise ``InsufficientHistoryError``.
    """
    z = np.atleast_2d(np.asarray(measurements, dtype=float))
    u = np.asarray(controls, dtype=float)
    if u.size == 0:
        u = np.zeros((0, 1))
    u = np.atleast_2d(u)
    n_z, n_u = z.shape[1], u.shape[1]
    if pad is None and (z.shape[0] < q or u.shape[0] < q - 1):
        raise InsufficientHistoryError(
            f"need {q} measurements and {q - 1} controls, got {z.shape[0]} and {u.shape[0]}"
        )
    vec = np.zeros(info_dim(q, n_z, n_u))
    t = z.shape[0] - 1
    for i in range(q):
        s = t - i
        if s >= 0:
            block = z[s]
        elif pad == "repeat_first":
            block = z[0]
        else:
            block = np.zeros(n_z)
        vec[i * n_z : (i + 1) * n_z] = block
    for j in range(1, q):
        s = u.shape[0] - j
        if s >= 0:
            vec[q * n_z + (j - 1) * n_u : q * n_z + j * n_u] = u[s]
    return InformationState(vec, q, n_z, n_u)


def unstack_info_state(info: InformationState) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of ``build_info_state`` on full histories.

    Returns the last ``q`` measurements and last ``q-1`` controls in
    chronological order (oldest first).
    """
    return info.z_blocks[::-1].copy(), info.u_blocks[::-1].copy()


def stack_deviation_window(dz_hist: np.ndarray, du_hist: np.ndarray, q: int) -> np.ndarray:
    """Batched deviation information state with zero pre-history.

    ``dz_hist`` has shape (..., t+1, n_z) and ``du_hist`` (..., t, n_u); the
    window ends at the last entry of ``dz_hist``.  Blocks reaching before
    time zero are zero (deviations from a static pre-history vanish).
    """
    n_z = dz_hist.shape[-1]
    n_u = du_hist.shape[-1]
    t = dz_hist.shape[-2] - 1
    batch = dz_hist.shape[:-2]
    out = np.zeros(batch + (info_dim(q, n_z, n_u),))
    for i in range(q):
        s = t - i
        if s >= 0:
            out[..., i * n_z : (i + 1) * n_z] = dz_hist[..., s, :]
    for j in range(1, q):
        s = t - j
        if 0 <= s < du_hist.shape[-2]:
            off = q * n_z + (j - 1) * n_u
            out[..., off : off + n_u] = du_hist[..., s, :]
    return out


@dataclass(frozen=True)
class ArmaStep:
    """Order-``q`` ARMA coefficients at response time ``t``.

    ``alphas`` holds (alpha_{t-1}, ..., alpha_{t-q}), each (n_z, n_z);
    ``betas`` holds (beta_{t-1}, ..., beta_{t-q}), each (n_z, n_u).
    """

    alphas: tuple
    betas: tuple
    t: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(np.asarray(a, dtype=float) for a in self.alphas))
        object.__setattr__(self, "betas", tuple(np.asarray(b, dtype=float) for b in self.betas))
        if len(self.alphas) != len(self.betas) or not self.alphas:
            raise ValueError("need the same positive number of alpha and beta blocks")
        n_z = self.alphas[0].shape[0]
        for a in self.alphas:
            if a.shape != (n_z, n_z):
                raise ValueError(f"alpha block shape {a.shape} inconsistent with n_z={n_z}")
        n_u = self.betas[0].shape[1]
        for b in self.betas:
            if b.shape != (n_z, n_u):
                raise ValueError(f"beta block shape {b.shape} inconsistent with ({n_z},{n_u})")
        for m in self.alphas + self.betas:
            if not np.all(np.isfinite(m)):
                raise ValueError("non-finite ARMA coefficient")

    @property
    def q(self) -> int:
        return len(self.alphas)

    @property
    def n_z(self) -> int:
        return self.alphas[0].shape[0]

    @property
    def n_u(self) -> int:
        return self.betas[0].shape[1]


@dataclass(frozen=True)
class LtvInfoStep:
    """One transition dZ_{t+1} = a_mat dZ_t + b_mat du_t of the lifted system."""

    a_mat: np.ndarray
    b_mat: np.ndarray

    @property
    def dim(self) -> int:
        return self.a_mat.shape[0]

    @property
    def n_u(self) -> int:
        return self.b_mat.shape[1]


def assemble_ltv(arma: ArmaStep) -> LtvInfoStep:
    """Lift ARMA coefficients to the structured information-state transition.

    The top block row of the state matrix is
    [alpha_{t-1} ... alpha_{t-q} | beta_{t-2} ... beta_{t-q}], the input
    matrix carries beta_{t-1} on top and an identity in the newest-control
    row; all remaining entries are the exact 0/1 shift-register pattern.
    """
    q, n_z, n_u = arma.q, arma.n_z, arma.n_u
    d = info_dim(q, n_z, n_u)
    a_mat = np.zeros((d, d))
    b_mat = np.zeros((d, n_u))
    for i in range(q):
        a_mat[:n_z, i * n_z : (i + 1) * n_z] = arma.alphas[i]
    for j in range(q - 1):
        off = q * n_z + j * n_u
        a_mat[:n_z, off : off + n_u] = arma.betas[j + 1]
    eye_z = np.eye(n_z)
    for i in range(1, q):
        a_mat[i * n_z : (i + 1) * n_z, (i - 1) * n_z : i * n_z] = eye_z
    eye_u = np.eye(n_u)
    for j in range(1, q - 1):
        r = q * n_z + j * n_u
        c = q * n_z + (j - 1) * n_u
        a_mat[r : r + n_u, c : c + n_u] = eye_u
    b_mat[:n_z] = arma.betas[0]
    if q >= 2:
        b_mat[q * n_z : q * n_z + n_u] = eye_u
    return LtvInfoStep(a_mat, b_mat)


def _as_triples(ltv_truth: Sequence[LtvTriple]):
    a_seq = [np.asarray(trip[0], dtype=float) for trip in ltv_truth]
    b_seq = [np.asarray(trip[1], dtype=float) for trip in ltv_truth]
    c_seq = [np.asarray(trip[2], dtype=float) for trip in ltv_truth]
    return a_seq, b_seq, c_seq


def observability_matrix(ltv_truth: Sequence[LtvTriple], q: int, t: int) -> np.ndarray:
    """Map from the state at t-q to the measurements (z_{t-1}, ..., z_{t-q}).

    Block row i (i = 1..q, top to bottom) is C_{t-i} A_{t-i-1} ... A_{t-q}.
    """
    a_seq, _, c_seq = _as_triples(ltv_truth)
    if t < q:
        raise ValueError(f"need t >= q, got t={t}, q={q}")
    n_x = a_seq[0].shape[0]
    prod = np.eye(n_x)
    rows = [None] * q
    for i in range(q, 0, -1):
        rows[i - 1] = c_seq[t - i] @ prod
        prod = a_seq[t - i] @ prod if i > 1 else prod
    return np.vstack(rows)


def observability_rank(
    ltv_truth: Sequence[LtvTriple], q: int, t: int, rtol: float = 1e-8
) -> tuple[int, bool]:
    """Numerical rank of the depth-``q`` observability map at time ``t``.

    Singular values below ``rtol`` times the largest count as zero.  Returns
    (rank, full_column_rank).
    """
    obs = observability_matrix(ltv_truth, q, t)
    n_x = obs.shape[1]
    sv = np.linalg.svd(obs, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0, False
    rank = int(np.sum(sv > rtol * sv[0]))
    return rank, rank == n_x
