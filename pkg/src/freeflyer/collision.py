"""Ellipsoidal keep-out zones and workspace bounds.

A point is clear of an obstacle when

    (pos - center)' P_eff (pos - center) >= 1,   P_eff = shape / sf^2

with the boundary counting as clear. Trajectory segments are checked by
linear interpolation between consecutive states so that adjacent test
points are no farther apart than the requested resolution; without the
interpolation a fast-moving body can tunnel straight through an obstacle
thinner than one position step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import R_SL, rotation_matrix_from_quat
from .trajectory import Trajectory


@dataclass
class EllipsoidObstacle:
    """Keep-out ellipsoid with a positive definite shape matrix [1/m^2].

    safety_factor >= 1 inflates the zone: the effective matrix is
    shape / safety_factor^2, which scales every semiaxis linearly.
    """

    center: np.ndarray
    shape: np.ndarray
    safety_factor: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.shape = np.asarray(self.shape, dtype=float).reshape(3, 3)
        if np.max(np.abs(self.shape - self.shape.T)) > 1e-9:
            raise ValueError("shape matrix must be symmetric")
        try:
            np.linalg.cholesky(self.shape)
        except np.linalg.LinAlgError as exc:
            raise ValueError("shape matrix must be positive definite") from exc
        if self.safety_factor < 1.0:
            raise ValueError(f"safety factor must be >= 1, got {self.safety_factor}")

    @classmethod
    def from_semiaxes(cls, center, semiaxes, quat=(0.0, 0.0, 0.0, 1.0),
                      safety_factor: float = 1.0) -> "EllipsoidObstacle":
        """Build from semiaxis lengths [m] and an orientation quaternion."""
        semiaxes = np.asarray(semiaxes, dtype=float).reshape(3)
        if np.any(semiaxes <= 0.0):
            raise ValueError(f"semiaxes must be positive, got {semiaxes}")
        rot = rotation_matrix_from_quat(np.asarray(quat, dtype=float))
        shape = rot @ np.diag(1.0 / semiaxes ** 2) @ rot.T
        return cls(center=center, shape=shape, safety_factor=safety_factor)

    @property
    def effective_shape(self) -> np.ndarray:
        return self.shape / self.safety_factor ** 2

    @property
    def semiaxes(self) -> np.ndarray:
        """Semiaxis lengths of the inflated ellipsoid, ascending."""
        eig = np.linalg.eigvalsh(self.effective_shape)
        return np.sort(1.0 / np.sqrt(eig[::-1]))

    def quadratic_form(self, pos: np.ndarray) -> np.ndarray:
        """(pos - c)' P_eff (pos - c), vectorized over leading dims."""
        d = np.asarray(pos, dtype=float) - self.center
        return np.einsum("...i,ij,...j->...", d, self.effective_shape, d)

    def with_safety_factor(self, sf: float) -> "EllipsoidObstacle":
        return EllipsoidObstacle(center=self.center.copy(), shape=self.shape.copy(),
                                 safety_factor=sf)


@dataclass
class World:
    """Static obstacle set plus an axis-aligned workspace box."""

    obstacles: list = field(default_factory=list)
    bounds_lo: np.ndarray = None
    bounds_hi: np.ndarray = None

    def __post_init__(self):
        self.bounds_lo = np.asarray(
            self.bounds_lo if self.bounds_lo is not None else [-3.0, -3.0, -1.0], dtype=float)
        self.bounds_hi = np.asarray(
            self.bounds_hi if self.bounds_hi is not None else [3.0, 3.0, 1.0], dtype=float)
        if np.any(self.bounds_lo >= self.bounds_hi):
            raise ValueError("workspace bounds must satisfy lo < hi per axis")

    def with_obstacles(self, obstacles: list) -> "World":
        return World(obstacles=list(obstacles), bounds_lo=self.bounds_lo.copy(),
                     bounds_hi=self.bounds_hi.copy())

    def with_safety_factor(self, sf: float) -> "World":
        return self.with_obstacles([o.with_safety_factor(sf) for o in self.obstacles])

    def default_resolution(self, fallback: float = 0.1) -> float:
        """Quarter of the smallest semiaxis over all obstacles."""
        if not self.obstacles:
            return fallback
        return 0.25 * min(o.semiaxes[0] for o in self.obstacles)


def point_clear(pos: np.ndarray, obs: EllipsoidObstacle) -> bool:
    """True iff pos is outside (or on the boundary of) the inflated ellipsoid."""
    pos = np.asarray(pos, dtype=float)
    if not np.all(np.isfinite(pos)):
        raise ValueError("non-finite position")
    return bool(obs.quadratic_form(pos) >= 1.0)


def position_clear_all(pos: np.ndarray, world: World) -> np.ndarray:
    """Vectorized clearance of positions (..., 3) against every obstacle."""
    pos = np.asarray(pos, dtype=float)
    ok = np.ones(pos.shape[:-1], dtype=bool)
    for obs in world.obstacles:
        ok &= obs.quadratic_form(pos) >= 1.0
    return ok


def interpolate_positions(positions: np.ndarray, resolution: float) -> np.ndarray:
    """Densify a polyline so consecutive samples are <= resolution apart.

    Returns the samples in path order, starting and ending on the original
    waypoints (which are all retained).
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if len(positions) == 1:
        return positions.copy()
    chunks = []
    for a, b in zip(positions[:-1], positions[1:]):
        seg_len = float(np.linalg.norm(b - a))
        n_sub = max(1, int(np.ceil(seg_len / resolution)))
        t = np.arange(n_sub) / n_sub
        chunks.append(a + t[:, None] * (b - a))
    chunks.append(positions[-1:])
    return np.vstack(chunks)


def segment_clear(traj: Trajectory, world: World, resolution: float | None = None):
    """Collision-check a trajectory against every obstacle with interpolation.

    Args:
        traj: trajectory whose positions are tested.
        world: obstacle set.
        resolution: max spacing between adjacent test points; defaults to
            world.default_resolution().

    Returns:
        (clear, first_violation): first_violation is the index of the
        earliest violating interpolated sample (path order), or None.
    """
    if len(traj.states) == 0:
        raise ValueError("empty trajectory")
    if resolution is None:
        resolution = world.default_resolution()
    if resolution <= 0.0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    samples = interpolate_positions(traj.positions, resolution)
    ok = position_clear_all(samples, world)
    if np.all(ok):
        return True, None
    return False, int(np.argmin(ok))


def state_in_bounds(x: np.ndarray, world: World) -> bool:
    """True iff the position components lie inside the closed workspace box."""
    pos = np.asarray(x, dtype=float).reshape(-1)[R_SL]
    return bool(np.all(pos >= world.bounds_lo) and np.all(pos <= world.bounds_hi))


def positions_in_bounds(positions: np.ndarray, world: World) -> bool:
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    return bool(np.all(positions >= world.bounds_lo) and np.all(positions <= world.bounds_hi))
