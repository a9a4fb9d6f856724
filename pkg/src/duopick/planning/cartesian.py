"""Straight-line end-effector planning with per-step IK tracking.

The end effector moves along the segment between the current pose and the
target at 5 mm spacing, orientation interpolated along the shortest arc. IK
for each waypoint is seeded with the previous solution and runs without
random restarts so the joint path stays continuous. Any violation (IK
failure, joint jump, lateral deviation, collision) raises CartesianFraction
carrying the fraction that was achieved and the partial trajectory.
"""

from __future__ import annotations

import numpy as np

from ..arm import KinematicChain, inverse_kinematics
from ..errors import CartesianFraction, NoSolution, StartInCollision
from ..geometry import RigidTransform, matrix_to_rotvec, rotvec_to_matrix
from .rrt import _GATE_ITERS, _bodies_of
from .trajectory import (
    Trajectory,
    interpolate_path,
    states_collision_free,
)

STEP_M = 0.005            # max translation per waypoint
LATERAL_TOL = 0.002       # max deviation from the straight segment
JOINT_STEP_MAX = 0.3      # max joint-space jump between waypoints
ROT_STEP_RAD = 0.1        # max orientation change per waypoint


def pose_sequence(start: RigidTransform, target: RigidTransform) -> list:
    """Poses along the segment, translation <= 5 mm and rotation <= 0.1 rad apart."""
    p0, p1 = start.translation, target.translation
    rv = matrix_to_rotvec(start.rotation.T @ target.rotation)
    n = max(
        1,
        int(np.ceil(np.linalg.norm(p1 - p0) / STEP_M)),
        int(np.ceil(np.linalg.norm(rv) / ROT_STEP_RAD)),
    )
    out = []
    for i in range(1, n + 1):
        s = i / n
        out.append(
            RigidTransform(
                start.rotation @ rotvec_to_matrix(s * rv), p0 + s * (p1 - p0)
            )
        )
    return out


def _lateral_deviation(p, p0, p1) -> float:
    d = p1 - p0
    L2 = float(d @ d)
    if L2 < 1e-18:
        return float(np.linalg.norm(p - p0))
    s = np.clip((p - p0) @ d / L2, 0.0, 1.0)
    return float(np.linalg.norm(p - (p0 + s * d)))


def plan_cartesian(
    scene,
    chain: KinematicChain,
    q_start,
    target: RigidTransform,
    delta_check: float = 0.02,
) -> Trajectory:
    """Track a straight end-effector segment from FK(q_start) to target.

    Returns a trajectory whose waypoints hold every IK solution in order.
    Raises CartesianFraction when tracking stops early; the exception carries
    the achieved fraction and the partial trajectory up to the last good
    waypoint.
    """
    bodies = _bodies_of(scene)
    q = np.asarray(q_start, dtype=float)
    if not chain.in_limits(q):
        raise ValueError("q_start must be within joint limits")
    if not states_collision_free(chain, q[None, :], bodies, _GATE_ITERS):
        raise StartInCollision("start config collides")

    start_pose = chain.forward_kinematics(q)
    poses = pose_sequence(start_pose, target)
    p0, p1 = start_pose.translation, target.translation
    if np.linalg.norm(p1 - p0) < 1e-12 and np.linalg.norm(
        matrix_to_rotvec(start_pose.rotation.T @ target.rotation)
    ) < 1e-12:
        return Trajectory(q[None, :], 0.0, {"steps": 0, "fraction": 1.0})

    waypoints = [q.copy()]
    n = len(poses)

    def fail(i_done, reason):
        traj = Trajectory(np.asarray(waypoints), 0.0, {"steps": i_done})
        raise CartesianFraction(i_done / n, traj, reason)

    for i, pose in enumerate(poses):
        try:
            q_next = inverse_kinematics(chain, pose, seed=q, restarts=0)
        except NoSolution:
            fail(i, "ik failed")
        if np.linalg.norm(q_next - q) > JOINT_STEP_MAX:
            fail(i, "joint jump")
        ee = chain.forward_kinematics(q_next).translation
        if _lateral_deviation(ee, p0, p1) > LATERAL_TOL:
            fail(i, "lateral deviation")
        edge = interpolate_path(np.vstack([q, q_next]), delta_check)
        if not states_collision_free(chain, edge, bodies, _GATE_ITERS):
            fail(i, "collision")
        waypoints.append(q_next)
        q = q_next

    wp = np.asarray(waypoints)
    cost = float(np.sum(np.linalg.norm(np.diff(wp, axis=0), axis=1)))
    return Trajectory(wp, cost, {"steps": n, "fraction": 1.0})
