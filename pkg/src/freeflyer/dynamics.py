"""Rigid-body free-flyer dynamics: continuous derivative, RK4 propagation,
and discrete-time linearization.

State layout (13 components, quaternion scalar-last):

    x = [rx, ry, rz, vx, vy, vz, qx, qy, qz, qs, wx, wy, wz]

Input layout (6 components):

    u = [fx, fy, fz, taux, tauy, tauz]

Translation is a double integrator about the center of mass; rotation is a
rigid body with diagonal inertia:

    r_dot = v
    v_dot = f / m
    q_dot = 0.5 * Xi(q) * w
    w_dot = I^{-1} (tau - w x (I w))

All array kernels are vectorized over leading batch dimensions and have no
shared mutable state, so they are safe to call from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_X = 13
N_U = 6

# slices into the state vector
R_SL = slice(0, 3)
V_SL = slice(3, 6)
Q_SL = slice(6, 10)
W_SL = slice(10, 13)

QUAT_NORM_TOL = 1e-9
_FD_STEP = 1e-6


@dataclass
class InertialParams:
    """Mass and diagonal inertia tensor; the estimation target.

    Attributes:
        m: mass [kg], > 0.
        inertia: principal moments (Ixx, Iyy, Izz) [kg m^2], each > 0 and
            satisfying the rigid-body triangle inequality.
    """

    m: float
    inertia: np.ndarray

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3)
        if not np.isfinite(self.m) or self.m <= 0.0:
            raise ValueError(f"mass must be positive and finite, got {self.m}")
        if not np.all(np.isfinite(self.inertia)) or np.any(self.inertia <= 0.0):
            raise ValueError(f"inertia entries must be positive, got {self.inertia}")
        ix, iy, iz = self.inertia
        if ix + iy < iz or iy + iz < ix or iz + ix < iy:
            raise ValueError(f"inertia violates the triangle inequality: {self.inertia}")

    def theta(self) -> np.ndarray:
        """Parameter vector [m, Ixx, Iyy, Izz]."""
        return np.concatenate(([self.m], self.inertia))

    @classmethod
    def from_theta(cls, theta: np.ndarray) -> "InertialParams":
        theta = np.asarray(theta, dtype=float).reshape(4)
        return cls(m=float(theta[0]), inertia=theta[1:].copy())


@dataclass
class State:
    """Free-flyer state: position, velocity, unit quaternion, body rates."""

    r: np.ndarray
    v: np.ndarray
    q: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.q = np.asarray(self.q, dtype=float).reshape(4)
        self.w = np.asarray(self.w, dtype=float).reshape(3)
        vec = self.to_array()
        if not np.all(np.isfinite(vec)):
            raise ValueError("state contains non-finite components")
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {np.linalg.norm(self.q)} too far from 1")

    def to_array(self) -> np.ndarray:
        return np.concatenate((self.r, self.v, self.q, self.w))

    @classmethod
    def from_array(cls, x: np.ndarray) -> "State":
        x = np.asarray(x, dtype=float).reshape(N_X)
        return cls(r=x[R_SL].copy(), v=x[V_SL].copy(), q=x[Q_SL].copy(), w=x[W_SL].copy())

    @classmethod
    def at_rest(cls, r=(0.0, 0.0, 0.0), q=(0.0, 0.0, 0.0, 1.0)) -> "State":
        return cls(r=np.asarray(r, dtype=float), v=np.zeros(3),
                   q=np.asarray(q, dtype=float), w=np.zeros(3))


@dataclass
class ControlInput:
    """Body-frame force [N] and torque [N m]."""

    f: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float).reshape(3)
        self.tau = np.asarray(self.tau, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.f)) and np.all(np.isfinite(self.tau))):
            raise ValueError("control input contains non-finite components")

    def to_array(self) -> np.ndarray:
        return np.concatenate((self.f, self.tau))

    @classmethod
    def from_array(cls, u: np.ndarray) -> "ControlInput":
        u = np.asarray(u, dtype=float).reshape(N_U)
        return cls(f=u[:3].copy(), tau=u[3:].copy())

    @classmethod
    def zero(cls) -> "ControlInput":
        return cls(f=np.zeros(3), tau=np.zeros(3))


@dataclass
class InputBounds:
    """Box bounds on the actuation: |f_i| <= f_max, |tau_i| <= tau_max."""

    f_max: float = 0.5
    tau_max: float = 0.1

    def as_vector(self) -> np.ndarray:
        return np.array([self.f_max] * 3 + [self.tau_max] * 3)

    def clamp(self, u: np.ndarray) -> np.ndarray:
        b = self.as_vector()
        return np.clip(u, -b, b)


@dataclass
class LtvModel:
    """Discrete-time LTV approximation in perturbation coordinates.

    Step map: dx_{k+1} = A_k dx_k + B_k du_k + g_k, where dx = x - x_op and
    g_k is the drift of the operating point itself (see
    :func:`linearize_discretize`).
    """

    A_seq: np.ndarray  # (N, n_x, n_x)
    B_seq: np.ndarray  # (N, n_x, n_u)
    g_seq: np.ndarray  # (N, n_x)
    dt: float

    def __post_init__(self):
        self.A_seq = np.asarray(self.A_seq, dtype=float)
        self.B_seq = np.asarray(self.B_seq, dtype=float)
        self.g_seq = np.asarray(self.g_seq, dtype=float)
        if not (len(self.A_seq) == len(self.B_seq) == len(self.g_seq)):
            raise ValueError("LTV sequences must have equal lengths")
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def horizon(self) -> int:
        return len(self.A_seq)

    @classmethod
    def constant(cls, A: np.ndarray, B: np.ndarray, g: np.ndarray, N: int, dt: float) -> "LtvModel":
        """Repeat a single (A, B, g) triple over an N-step horizon."""
        return cls(A_seq=np.repeat(A[None], N, axis=0),
                   B_seq=np.repeat(B[None], N, axis=0),
                   g_seq=np.repeat(g[None], N, axis=0), dt=dt)


# ---------------------------------------------------------------------------
# array kernels
# ---------------------------------------------------------------------------

def xi_matrix(q: np.ndarray) -> np.ndarray:
    """Quaternion kinematics matrix: q_dot = 0.5 * Xi(q) * w.

    Rows for scalar-last q = (qx, qy, qz, qs):

        [ qs, -qz,  qy]
        [ qz,  qs, -qx]
        [-qy,  qx,  qs]
        [-qx, -qy, -qz]
    """
    q = np.asarray(q, dtype=float)
    qx, qy, qz, qs = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = [
        np.stack([qs, -qz, qy], axis=-1),
        np.stack([qz, qs, -qx], axis=-1),
        np.stack([-qy, qx, qs], axis=-1),
        np.stack([-qx, -qy, -qz], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def derivative_array(x: np.ndarray, u: np.ndarray, p: InertialParams) -> np.ndarray:
    """Continuous-time state derivative, vectorized over leading dims.

    Args:
        x: states, shape (..., 13).
        u: inputs, shape (..., 6).
        p: inertial parameters.

    Returns:
        xdot with the same shape as x.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v = x[..., V_SL]
    q = x[..., Q_SL]
    w = x[..., W_SL]
    f = u[..., :3]
    tau = u[..., 3:]

    qx, qy, qz, qs = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    # q_dot = 0.5 * Xi(q) w, written out componentwise
    qdot = 0.5 * np.stack([
        qs * wx - qz * wy + qy * wz,
        qz * wx + qs * wy - qx * wz,
        -qy * wx + qx * wy + qs * wz,
        -qx * wx - qy * wy - qz * wz,
    ], axis=-1)

    inertia = p.inertia
    iw = w * inertia
    wdot = (tau - np.cross(w, iw)) / inertia

    out = np.empty_like(x)
    out[..., R_SL] = v
    out[..., V_SL] = f / p.m
    out[..., Q_SL] = qdot
    out[..., W_SL] = wdot
    return out


def rk4_step_array(x: np.ndarray, u: np.ndarray, p: InertialParams, dt: float) -> np.ndarray:
    """Classical RK4 step with zero-order hold on u; quaternion renormalized."""
    k1 = derivative_array(x, u, p)
    k2 = derivative_array(x + 0.5 * dt * k1, u, p)
    k3 = derivative_array(x + 0.5 * dt * k2, u, p)
    k4 = derivative_array(x + dt * k3, u, p)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    q = out[..., Q_SL]
    out[..., Q_SL] = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return out


def rollout_array(x0: np.ndarray, u_seq: np.ndarray, p: InertialParams, dt: float) -> np.ndarray:
    """Propagate x0 through a (N, 6) input sequence; returns (N+1, 13) states."""
    u_seq = np.asarray(u_seq, dtype=float)
    out = np.empty((len(u_seq) + 1, N_X))
    out[0] = x0
    for k, u in enumerate(u_seq):
        out[k + 1] = rk4_step_array(out[k], u, p, dt)
    return out


# ---------------------------------------------------------------------------
# typed wrappers
# ---------------------------------------------------------------------------

def derivative(x: State, u: ControlInput, p: InertialParams) -> np.ndarray:
    """State time-derivative [v, f/m, 0.5*Xi(q)w, I^{-1}(tau - w x Iw)] stacked."""
    xv = x.to_array()
    uv = u.to_array()
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(uv))):
        raise ValueError("non-finite input to derivative")
    return derivative_array(xv, uv, p)


def step_rk4(x: State, u: ControlInput, p: InertialParams, dt: float) -> State:
    """One RK4 step of the nonlinear dynamics with u held constant."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return State.from_array(rk4_step_array(x.to_array(), u.to_array(), p, dt))


def linearize_discretize_batch(x_ops: np.ndarray, u_ops: np.ndarray,
                               p: InertialParams, dt: float):
    """Vectorized :func:`linearize_discretize` over a batch of operating points.

    Args:
        x_ops: (B, 13) operating states.
        u_ops: (B, 6) operating inputs.

    Returns:
        (A, B, g) with shapes (B, 13, 13), (B, 13, 6), (B, 13).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    x_ops = np.atleast_2d(np.asarray(x_ops, dtype=float))
    u_ops = np.atleast_2d(np.asarray(u_ops, dtype=float))
    if not (np.all(np.isfinite(x_ops)) and np.all(np.isfinite(u_ops))):
        raise ValueError("non-finite operating point")
    nb = len(x_ops)
    n_pert = 2 * N_X + 2 * N_U + 1

    hx = _FD_STEP * np.maximum(1.0, np.abs(x_ops))  # (B, 13)
    hu = _FD_STEP * np.maximum(1.0, np.abs(u_ops))  # (B, 6)

    xs = np.repeat(x_ops[:, None, :], n_pert, axis=1)  # (B, n_pert, 13)
    us = np.repeat(u_ops[:, None, :], n_pert, axis=1)  # (B, n_pert, 6)
    for i in range(N_X):
        xs[:, 2 * i, i] += hx[:, i]
        xs[:, 2 * i + 1, i] -= hx[:, i]
    for j in range(N_U):
        us[:, 2 * N_X + 2 * j, j] += hu[:, j]
        us[:, 2 * N_X + 2 * j + 1, j] -= hu[:, j]

    nxt = rk4_step_array(xs, us, p, dt)  # (B, n_pert, 13)
    A = np.empty((nb, N_X, N_X))
    Bm = np.empty((nb, N_X, N_U))
    for i in range(N_X):
        A[:, :, i] = (nxt[:, 2 * i] - nxt[:, 2 * i + 1]) / (2.0 * hx[:, i, None])
    for j in range(N_U):
        Bm[:, :, j] = (nxt[:, 2 * N_X + 2 * j] - nxt[:, 2 * N_X + 2 * j + 1]) / (2.0 * hu[:, j, None])
    g = nxt[:, -1] - x_ops
    return A, Bm, g


def linearize_discretize(x_op: State | np.ndarray, u_op: ControlInput | np.ndarray,
                         p: InertialParams, dt: float):
    """Linearize the discrete RK4 step map about an operating point.

    Central finite differences with per-component step 1e-6 * max(1, |z_i|)
    on the full step map (RK4 composition including the quaternion
    renormalization). The affine residual g is expressed in perturbation
    coordinates, g = step(x_op, u_op) - x_op, so that

        x_next ~ x_op + A (x - x_op) + B (u - u_op) + g

    holds exactly at the operating point.

    Returns:
        (A, B, g): (13, 13), (13, 6), (13,).
    """
    x0 = x_op.to_array() if isinstance(x_op, State) else np.asarray(x_op, dtype=float).reshape(N_X)
    u0 = u_op.to_array() if isinstance(u_op, ControlInput) else np.asarray(u_op, dtype=float).reshape(N_U)
    A, B, g = linearize_discretize_batch(x0[None], u0[None], p, dt)
    return A[0], B[0], g[0]


# ---------------------------------------------------------------------------
# quaternion helpers (scalar-last)
# ---------------------------------------------------------------------------

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a (x) b for scalar-last quaternions, batched."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    av, as_ = a[..., :3], a[..., 3:4]
    bv, bs = b[..., :3], b[..., 3:4]
    vec = as_ * bv + bs * av + np.cross(av, bv)
    sca = as_ * bs - np.sum(av * bv, axis=-1, keepdims=True)
    return np.concatenate((vec, sca), axis=-1)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., :3] *= -1.0
    return out


def quat_from_rotvec(phi: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation vector (axis * angle), batched."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi, axis=-1, keepdims=True)
    small = angle[..., 0] < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        axis = np.where(small[..., None], 0.0, phi / np.where(angle == 0.0, 1.0, angle))
    half = 0.5 * angle
    vec = axis * np.sin(half)
    sca = np.cos(half)
    out = np.concatenate((vec, sca), axis=-1)
    # first-order fallback keeps tiny rotations exact
    lin = np.concatenate((0.5 * phi, np.ones(phi.shape[:-1] + (1,))), axis=-1)
    out = np.where(small[..., None], lin, out)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def rotvec_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion; small-angle branch below 1e-8."""
    q = np.asarray(q, dtype=float)
    # keep the short rotation: flip sign when scalar part negative
    q = np.where(q[..., 3:4] < 0.0, -q, q)
    vec = q[..., :3]
    sca = np.clip(q[..., 3], -1.0, 1.0)
    sin_half = np.linalg.norm(vec, axis=-1)
    angle = 2.0 * np.arctan2(sin_half, sca)
    small = angle < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 2.0, angle / np.where(sin_half == 0.0, 1.0, sin_half))
    return scale[..., None] * vec


def quat_error_rotvec(q: np.ndarray, q_ref: np.ndarray) -> np.ndarray:
    """Rotation vector of q (x) q_ref^{-1}: the left (world-frame) error."""
    return rotvec_from_quat(quat_multiply(q, quat_conjugate(q_ref)))


def rotation_matrix_from_quat(q: np.ndarray) -> np.ndarray:
    """Body-to-world rotation matrix of a scalar-last unit quaternion."""
    qx, qy, qz, qs = np.asarray(q, dtype=float).reshape(4)
    return np.array([
        [1 - 2 * (qy ** 2 + qz ** 2), 2 * (qx * qy - qz * qs), 2 * (qx * qz + qy * qs)],
        [2 * (qx * qy + qz * qs), 1 - 2 * (qx ** 2 + qz ** 2), 2 * (qy * qz - qx * qs)],
        [2 * (qx * qz - qy * qs), 2 * (qy * qz + qx * qs), 1 - 2 * (qx ** 2 + qy ** 2)],
    ])
