"""Quadratic cost bookkeeping, backward Riccati value iteration, and LQR
steering through the nonlinear dynamics.

The affine value recursion propagates, backwards from S_N = Q_N,
s_N = q_N, c_N = 0:

    M   = B' S+ B + R
    L   = B' S+ A + P
    mv  = B' S+ g + B' s+ + r
    S   = A' S+ A + Q - L' M^{-1} L
    s   = q + A' s+ + A' S+ g - L' M^{-1} mv
    c   = g' S+ g + 2 s+' g + c+ - mv' M^{-1} mv

with the minimizing policy du = K dx + k, K = -M^{-1} L, k = -M^{-1} mv.
The cost-to-go at step k is V(dx) = 0.5 dx' S_k dx + dx' s_k + c_k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (InertialParams, InputBounds, LtvModel, N_U, N_X,
                       linearize_discretize, rk4_step_array)
from .trajectory import Trajectory


class SingularRiccatiError(RuntimeError):
    """Raised when (B' S B + R) is not invertible at some backward step."""

    def __init__(self, step: int):
        super().__init__(f"singular Riccati inner matrix at step {step}")
        self.step = step


@dataclass
class QuadraticCost:
    """Running and terminal weights of the quadratic objective.

    Cross weight P multiplies du' P dx (shape n_u x n_x). R must be positive
    definite, Q positive semidefinite, and the stacked block
    [[Q, P'], [P, R]] positive semidefinite.
    """

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray | None = None
    q_lin: np.ndarray | None = None
    r_lin: np.ndarray | None = None
    Q_N: np.ndarray | None = None
    q_N: np.ndarray | None = None

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        n_x = self.Q.shape[0]
        n_u = self.R.shape[0]
        if self.P is None:
            self.P = np.zeros((n_u, n_x))
        self.P = np.asarray(self.P, dtype=float)
        self.q_lin = np.zeros(n_x) if self.q_lin is None else np.asarray(self.q_lin, dtype=float)
        self.r_lin = np.zeros(n_u) if self.r_lin is None else np.asarray(self.r_lin, dtype=float)
        self.Q_N = self.Q.copy() if self.Q_N is None else np.asarray(self.Q_N, dtype=float)
        self.q_N = np.zeros(n_x) if self.q_N is None else np.asarray(self.q_N, dtype=float)

        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc
        if np.min(np.linalg.eigvalsh(self.Q)) < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(self.Q_N)) < -1e-10:
            raise ValueError("Q_N must be positive semidefinite")
        block = np.block([[self.Q, self.P.T], [self.P, self.R]])
        if np.min(np.linalg.eigvalsh(block)) < -1e-10:
            raise ValueError("[[Q, P'], [P, R]] must be positive semidefinite")

    @property
    def n_x(self) -> int:
        return self.Q.shape[0]

    @property
    def n_u(self) -> int:
        return self.R.shape[0]


def default_steering_cost() -> QuadraticCost:
    """Planner default: position 10, velocity 1, quaternion vector part 1
    (scalar part unweighted), rates 0.1; R = 100 I."""
    q_diag = np.array([10.0] * 3 + [1.0] * 3 + [1.0, 1.0, 1.0, 0.0] + [0.1] * 3)
    return QuadraticCost(Q=np.diag(q_diag), R=100.0 * np.eye(N_U))


@dataclass
class ValueFunction:
    """Per-step quadratic cost-to-go (S_k, s_k, c_k), k = 0..N."""

    S_seq: np.ndarray  # (N+1, n, n)
    s_seq: np.ndarray  # (N+1, n)
    c_seq: np.ndarray  # (N+1,)

    def __post_init__(self):
        self.S_seq = np.asarray(self.S_seq, dtype=float)
        self.s_seq = np.asarray(self.s_seq, dtype=float)
        self.c_seq = np.asarray(self.c_seq, dtype=float)
        if not (len(self.S_seq) == len(self.s_seq) == len(self.c_seq)):
            raise ValueError("value-function sequences must have equal lengths")

    @property
    def horizon(self) -> int:
        return len(self.S_seq) - 1


@dataclass
class LqrPolicy:
    """Affine feedback du_k = K_k dx_k + k_k in perturbation coordinates."""

    K_seq: np.ndarray  # (N, n_u, n_x)
    k_seq: np.ndarray  # (N, n_u)

    def __post_init__(self):
        self.K_seq = np.asarray(self.K_seq, dtype=float)
        self.k_seq = np.asarray(self.k_seq, dtype=float)
        if len(self.K_seq) != len(self.k_seq):
            raise ValueError("policy sequences must have equal lengths")

    @property
    def horizon(self) -> int:
        return len(self.K_seq)


def riccati_backward(model: LtvModel, cost: QuadraticCost, N: int | None = None):
    """Backward value iteration over the LTV model.

    Args:
        model: LTV step model; if its horizon is shorter than N the last
            triple is repeated.
        cost: quadratic weights.
        N: horizon; defaults to the model horizon.

    Returns:
        (ValueFunction, LqrPolicy).
    """
    if N is None:
        N = model.horizon
    if N < 1:
        raise ValueError("horizon must be at least 1")

    def triple(k):
        i = min(k, model.horizon - 1)
        return model.A_seq[i], model.B_seq[i], model.g_seq[i]

    n_x, n_u = cost.n_x, cost.n_u
    S = np.empty((N + 1, n_x, n_x))
    s = np.empty((N + 1, n_x))
    c = np.empty(N + 1)
    K = np.empty((N, n_u, n_x))
    kff = np.empty((N, n_u))

    S[N] = cost.Q_N
    s[N] = cost.q_N
    c[N] = 0.0
    for k in range(N - 1, -1, -1):
        A, B, g = triple(k)
        Sp, sp, cp = S[k + 1], s[k + 1], c[k + 1]
        BtS = B.T @ Sp
        M = BtS @ B + cost.R
        try:
            M_chol = np.linalg.cholesky(M)
        except np.linalg.LinAlgError as exc:
            raise SingularRiccatiError(k) from exc
        L = BtS @ A + cost.P
        mv = BtS @ g + B.T @ sp + cost.r_lin

        def msolve(rhs):
            y = np.linalg.solve(M_chol, rhs)
            return np.linalg.solve(M_chol.T, y)

        MinvL = msolve(L)
        Minv_mv = msolve(mv)
        Sk = A.T @ Sp @ A + cost.Q - L.T @ MinvL
        S[k] = 0.5 * (Sk + Sk.T)
        s[k] = cost.q_lin + A.T @ sp + A.T @ (Sp @ g) - L.T @ Minv_mv
        c[k] = g @ Sp @ g + 2.0 * sp @ g + cp - mv @ Minv_mv
        K[k] = -MinvL
        kff[k] = -Minv_mv

    return ValueFunction(S, s, c), LqrPolicy(K, kff)


def riccati_backward_batch(A: np.ndarray, B: np.ndarray, g: np.ndarray,
                           cost: QuadraticCost, N: int):
    """Backward recursion for a batch of constant (A, B, g) models.

    Args:
        A: (B, n, n), B: (B, n, m), g: (B, n).

    Returns:
        (S0, s0, c0, K_seq, k_seq) with shapes (B, n, n), (B, n), (B,),
        (B, N, m, n), (B, N, m).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    g = np.asarray(g, dtype=float)
    nb = len(A)
    n_x, n_u = cost.n_x, cost.n_u

    S = np.repeat(cost.Q_N[None], nb, axis=0)
    s = np.repeat(cost.q_N[None], nb, axis=0)
    c = np.zeros(nb)
    K_seq = np.empty((nb, N, n_u, n_x))
    k_seq = np.empty((nb, N, n_u))
    At = np.swapaxes(A, -1, -2)
    Bt = np.swapaxes(B, -1, -2)

    for k in range(N - 1, -1, -1):
        BtS = Bt @ S
        M = BtS @ B + cost.R
        L = BtS @ A + cost.P
        mv = np.einsum("bij,bj->bi", BtS, g) + np.einsum("bij,bj->bi", Bt, s) + cost.r_lin
        try:
            MinvL = np.linalg.solve(M, L)
            Minv_mv = np.linalg.solve(M, mv[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularRiccatiError(k) from exc
        Sg = np.einsum("bij,bj->bi", S, g)
        Lt = np.swapaxes(L, -1, -2)
        S_new = At @ S @ A + cost.Q - Lt @ MinvL
        s_new = cost.q_lin + np.einsum("bij,bj->bi", At, s + Sg) - np.einsum("bij,bj->bi", Lt, Minv_mv)
        c_new = np.einsum("bi,bi->b", g, Sg) + 2.0 * np.einsum("bi,bi->b", s, g) + c \
            - np.einsum("bi,bi->b", mv, Minv_mv)
        S = 0.5 * (S_new + np.swapaxes(S_new, -1, -2))
        s = s_new
        c = c_new
        K_seq[:, k] = -MinvL
        k_seq[:, k] = -Minv_mv

    return S, s, c, K_seq, k_seq


def evaluate_value(vf: ValueFunction, k: int, x_query: np.ndarray, x_ref: np.ndarray) -> float:
    """Cost-to-go 0.5 dx' S_k dx + dx' s_k + c_k with dx = x_query - x_ref."""
    if not (0 <= k <= vf.horizon):
        raise IndexError(f"step {k} outside value function horizon {vf.horizon}")
    dx = np.asarray(x_query, dtype=float) - np.asarray(x_ref, dtype=float)
    return float(0.5 * dx @ vf.S_seq[k] @ dx + dx @ vf.s_seq[k] + vf.c_seq[k])


def stage_cost(dx: np.ndarray, du: np.ndarray, cost: QuadraticCost) -> float:
    """Single running-cost term 0.5 dx'Q dx + 0.5 du'R du + du'P dx + linears."""
    return float(0.5 * dx @ cost.Q @ dx + 0.5 * du @ cost.R @ du
                 + du @ cost.P @ dx + cost.q_lin @ dx + cost.r_lin @ du)


def trajectory_cost(traj: Trajectory, x_ref: np.ndarray, cost: QuadraticCost) -> float:
    """Sum of running costs along a trajectory, measured about x_ref.

    Inputs are taken as perturbations about zero. No terminal term, so the
    sum is additive under concatenation.
    """
    if traj.n_steps == 0:
        return 0.0
    dx = traj.states[:-1] - np.asarray(x_ref, dtype=float)
    du = traj.inputs
    quad_x = 0.5 * np.einsum("ki,ij,kj->", dx, cost.Q, dx)
    quad_u = 0.5 * np.einsum("ki,ij,kj->", du, cost.R, du)
    cross = np.einsum("ki,ij,kj->", du, cost.P, dx)
    lin = dx @ cost.q_lin + du @ cost.r_lin
    return float(quad_x + quad_u + cross + np.sum(lin))


def rollout_policy(x0: np.ndarray, x_op: np.ndarray, policy: LqrPolicy,
                   p: InertialParams, dt: float, bounds: InputBounds,
                   n_steps: int | None = None) -> Trajectory:
    """Roll an LQR policy through the nonlinear dynamics with input clamping.

    The policy operates in perturbation coordinates about (x_op, 0): at each
    step u = clamp(K_k (x_k - x_op) + k_k).
    """
    N = policy.horizon if n_steps is None else n_steps
    states = np.empty((N + 1, N_X))
    inputs = np.empty((N, N_U))
    states[0] = x0
    for k in range(N):
        kk = min(k, policy.horizon - 1)
        du = policy.K_seq[kk] @ (states[k] - x_op) + policy.k_seq[kk]
        inputs[k] = bounds.clamp(du)
        states[k + 1] = rk4_step_array(states[k], inputs[k], p, dt)
    return Trajectory(states=states, inputs=inputs, dt=dt)


def lqr_steer(x_from: np.ndarray, x_to: np.ndarray, p: InertialParams,
              cost: QuadraticCost, N_steer: int, dt: float,
              bounds: InputBounds | None = None) -> Trajectory:
    """Steer from x_from towards x_to with an LQR policy linearized about x_to.

    The Riccati pass runs on the LTV model about the target (zero input) and
    the resulting affine policy is rolled forward through the full nonlinear
    dynamics with box-clamped inputs. The final state moves towards x_to but
    need not reach it.
    """
    bounds = bounds or InputBounds()
    x_from = np.asarray(x_from, dtype=float).reshape(N_X)
    x_to = np.asarray(x_to, dtype=float).reshape(N_X)
    A, B, g = linearize_discretize(x_to, np.zeros(N_U), p, dt)
    model = LtvModel.constant(A, B, g, N_steer, dt)
    _, policy = riccati_backward(model, cost, N_steer)
    return rollout_policy(x_from, x_to, policy, p, dt, bounds)
