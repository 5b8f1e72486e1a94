"""Fixed-step trajectory container shared by the planner, controllers,
excitation designer, and estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import N_U, N_X, InertialParams, R_SL, Q_SL, rollout_array


@dataclass
class Trajectory:
    """Time-indexed states and inputs with a fixed step.

    states has shape (N+1, 13) and inputs (N, 6): inputs[k] is held over
    [t_k, t_{k+1}). A single-state trajectory has empty inputs.
    """

    states: np.ndarray
    inputs: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, N_U)
        if self.states.shape[1] != N_X:
            raise ValueError(f"states must be (N+1, {N_X}), got {self.states.shape}")
        if len(self.inputs) != len(self.states) - 1:
            raise ValueError(
                f"need one input per step: {len(self.states)} states, {len(self.inputs)} inputs")
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def n_steps(self) -> int:
        return len(self.inputs)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.states))

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, R_SL]

    @property
    def quaternions(self) -> np.ndarray:
        return self.states[:, Q_SL]

    @property
    def start(self) -> np.ndarray:
        return self.states[0]

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]

    @classmethod
    def single_state(cls, x: np.ndarray, dt: float, t0: float = 0.0) -> "Trajectory":
        return cls(states=np.asarray(x, dtype=float).reshape(1, N_X),
                   inputs=np.zeros((0, N_U)), dt=dt, t0=t0)

    def concat(self, other: "Trajectory") -> "Trajectory":
        """Append another trajectory that starts where this one ends."""
        if abs(other.dt - self.dt) > 1e-12:
            raise ValueError("cannot concatenate trajectories with different dt")
        return Trajectory(states=np.vstack((self.states, other.states[1:])),
                          inputs=np.vstack((self.inputs, other.inputs)),
                          dt=self.dt, t0=self.t0)

    def slice(self, a: int, b: int) -> "Trajectory":
        """Sub-trajectory spanning states a..b inclusive."""
        if not (0 <= a < b < len(self.states)):
            raise ValueError(f"bad slice [{a}, {b}] for {len(self.states)} states")
        return Trajectory(states=self.states[a:b + 1].copy(),
                          inputs=self.inputs[a:b].copy(),
                          dt=self.dt, t0=self.t0 + self.dt * a)

    def replay(self, p: InertialParams, x0: np.ndarray | None = None) -> "Trajectory":
        """Re-roll the stored inputs through the nonlinear dynamics."""
        start = self.states[0] if x0 is None else np.asarray(x0, dtype=float)
        return Trajectory(states=rollout_array(start, self.inputs, p, self.dt),
                          inputs=self.inputs.copy(), dt=self.dt, t0=self.t0)

    def max_replay_error(self, p: InertialParams) -> float:
        """Largest per-step defect between stored states and an RK4 replay."""
        if self.n_steps == 0:
            return 0.0
        from .dynamics import rk4_step_array
        pred = rk4_step_array(self.states[:-1], self.inputs, p, self.dt)
        return float(np.max(np.abs(pred - self.states[1:])))
