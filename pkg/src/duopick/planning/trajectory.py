"""Joint-space trajectories with linear interpolation between waypoints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..arm import KinematicChain
from ..collision import _TERNARY_ITERS, capsules_min_distances


def interpolate_path(waypoints, resolution: float) -> np.ndarray:
    """Densify a waypoint list so consecutive states differ by <= resolution.

    resolution is a joint-space Euclidean bound. Returns (M, dof) including
    both endpoints of every segment exactly.
    """
    wp = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if wp.shape[0] == 1:
        return wp.copy()
    out = [wp[0]]
    for a, b in zip(wp[:-1], wp[1:]):
        dist = float(np.linalg.norm(b - a))
        steps = max(1, int(np.ceil(dist / resolution)))
        ts = np.linspace(0.0, 1.0, steps + 1)[1:-1]
        out.extend(a + t * (b - a) for t in ts)
        # append b itself so segment endpoints survive bit-exactly
        out.append(b.copy())
    return np.asarray(out)


@dataclass
class Trajectory:
    waypoints: np.ndarray
    cost: float
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if not np.all(np.isfinite(self.waypoints)):
            raise ValueError("waypoints must be finite")

    @property
    def start(self) -> np.ndarray:
        return self.waypoints[0]

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1]

    def joint_length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))

    def task_length(self, chain: KinematicChain) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        ee = chain.ee_positions(self.waypoints)
        return float(np.sum(np.linalg.norm(np.diff(ee, axis=0), axis=1)))

    def max_step(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.max(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))

    def reversed(self) -> "Trajectory":
        return Trajectory(self.waypoints[::-1].copy(), self.cost, dict(self.stats))


def states_clearances(chain: KinematicChain, states, bodies, box_iters: int = _TERNARY_ITERS) -> np.ndarray:
    """Per-config smallest link clearance, (N,), vectorized FK; +inf if no bodies."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if not bodies:
        return np.full(states.shape[0], np.inf)
    pts = chain.origins_batch(states)
    p0 = pts[:, :-1].reshape(-1, 3)
    p1 = pts[:, 1:].reshape(-1, 3)
    radii = np.tile(chain.link_radii + chain.margin, states.shape[0])
    d = capsules_min_distances(p0, p1, radii, bodies, box_iters)
    return d.reshape(states.shape[0], -1).min(axis=1)


def min_clearance(chain: KinematicChain, states, bodies, box_iters: int = _TERNARY_ITERS) -> float:
    """Smallest link clearance over a batch of configs (vectorized FK)."""
    return float(np.min(states_clearances(chain, states, bodies, box_iters)))


def states_collision_free(chain: KinematicChain, states, bodies, box_iters: int = _TERNARY_ITERS) -> bool:
    return min_clearance(chain, states, bodies, box_iters) >= 0.0


def validate_trajectory(
    traj: Trajectory, chain: KinematicChain, bodies, resolution: float
) -> bool:
    """Dense independent re-check: every interpolated state collision-free."""
    dense = interpolate_path(traj.waypoints, resolution)
    return states_collision_free(chain, dense, bodies)


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "waypoints": traj.waypoints.tolist(),
        "cost": float(traj.cost),
        "stats": dict(traj.stats),
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    return Trajectory(np.asarray(d["waypoints"], dtype=float), float(d["cost"]), dict(d.get("stats", {})))
