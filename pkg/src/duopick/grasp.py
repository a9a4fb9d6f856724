"""Grasp and cut approach poses on a circle orthogonal to the stem axis.

Candidates sit at uniform angles on the circle, approach radially inward, and
are feasible when IK succeeds inside limits with the arm collision-free. The
cutter reuses the same machinery on a wider circle raised above the fruit top
so the blade crosses the peduncle.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .arm import KinematicChain, inverse_kinematics
from .collision import in_collision
from .errors import NoFeasibleGrasp, NoSolution
from .estimator import PoseEstimate
from .geometry import WORLD_UP, WORLD_X, RigidTransform, as_vec3, unit

logger = logging.getLogger(__name__)


class Tool(enum.Enum):
    GRIPPER = "gripper"
    CUTTER = "cutter"


class SelectionPolicy(enum.Enum):
    FIRST_FEASIBLE = "first_feasible"
    CLOSEST_CONFIG = "closest_config"


@dataclass
class GraspConfig:
    n_candidates: int = 16
    clearance: float = 0.03       # added to max(a, b) for the gripper radius
    cutter_radius: float = 0.10
    cutter_offset: float = 0.02   # circle height above the fruit top
    policy: SelectionPolicy = SelectionPolicy.CLOSEST_CONFIG
    ik_restarts: int = 6          # screening budget per candidate


@dataclass
class GraspCircle:
    center: np.ndarray
    axis: np.ndarray
    radius: float
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        self.center = as_vec3(self.center, "center")
        self.axis = unit(as_vec3(self.axis, "axis"))
        self.u1 = as_vec3(self.u1, "u1")
        self.u2 = as_vec3(self.u2, "u2")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        for x, y in ((self.u1, self.u2), (self.u1, self.axis), (self.u2, self.axis)):
            if abs(float(np.dot(x, y))) >= 1e-9:
                raise ValueError("circle basis must be pairwise orthogonal")
        if not np.allclose(self.u2, np.cross(self.axis, self.u1), atol=1e-9):
            raise ValueError("u2 must equal axis x u1")

    def point(self, theta: float) -> np.ndarray:
        return self.center + self.radius * (
            self.u1 * np.cos(theta) + self.u2 * np.sin(theta)
        )


@dataclass
class GraspCandidate:
    theta: float
    pose: RigidTransform
    ik: Optional[np.ndarray]
    feasible: bool
    joint_distance: Optional[float] = None

    def __post_init__(self):
        if self.feasible and self.ik is None:
            raise ValueError("feasible candidate requires an IK solution")


def circle_basis(axis) -> tuple:
    """Deterministic in-plane basis: u1 from the world up axis, else world x."""
    a = unit(as_vec3(axis, "axis"))
    v = np.cross(a, WORLD_UP)
    if np.linalg.norm(v) < 1e-6:
        v = np.cross(a, WORLD_X)
    u1 = v / np.linalg.norm(v)
    return u1, np.cross(a, u1)


def grasp_circle(pose: PoseEstimate, cfg: GraspConfig = None) -> GraspCircle:
    """Gripper circle: centered on the fruit, radius max(a, b) + clearance."""
    cfg = cfg or GraspConfig()
    if pose.shape is None:
        raise ValueError("grasp circle needs a fitted shape on the pose")
    r = max(pose.shape.a, pose.shape.b) + cfg.clearance
    u1, u2 = circle_basis(pose.axis)
    return GraspCircle(pose.position, pose.axis, r, u1, u2)


def cutter_circle(pose: PoseEstimate, peduncle_point, cfg: GraspConfig = None) -> GraspCircle:
    """Cutter circle at the peduncle's lateral position, above the fruit top."""
    cfg = cfg or GraspConfig()
    if pose.shape is None:
        raise ValueError("cutter circle needs a fitted shape on the pose")
    a = pose.axis
    t = pose.position
    rel = as_vec3(peduncle_point, "peduncle_point") - t
    h = max(float(np.dot(rel, a)), pose.shape.c + cfg.cutter_offset)
    lateral = rel - np.dot(rel, a) * a
    center = t + lateral + h * a
    u1, u2 = circle_basis(a)
    return GraspCircle(center, a, cfg.cutter_radius, u1, u2)


def approach_direction(circle: GraspCircle, theta: float) -> np.ndarray:
    x = circle.point(theta)
    return (circle.center - x) / np.linalg.norm(circle.center - x)


def candidate_pose(circle: GraspCircle, theta: float, tool: Tool = Tool.GRIPPER) -> RigidTransform:
    """Tool pose at angle theta: z approaches radially, roll set per tool.

    Gripper: closing plane contains the stem axis (y = axis). Cutter: blade
    plane orthogonal to the stem so the blade crosses the peduncle.
    """
    d = approach_direction(circle, theta)
    a = circle.axis
    if tool is Tool.GRIPPER:
        R = np.column_stack([np.cross(a, d), a, d])
    else:
        R = np.column_stack([np.cross(d, a), -a, d])
    return RigidTransform(R, circle.point(theta))


def generate_candidates(
    circle: GraspCircle,
    n: int,
    chain: KinematicChain,
    obstacles,
    q_seed,
    tool: Tool = Tool.GRIPPER,
    ik_solver: Callable = None,
    ik_rng_base: int = 0,
    ik_restarts: int = 6,
) -> list:
    """N candidates at theta_i = 2 pi i / N, each IK- and collision-checked.

    Candidate order and results are independent of evaluation order; the IK
    rng is seeded per index.
    """
    if n < 1:
        raise ValueError("need at least one candidate")

    def default_solver(ch, pose, seed, rng):
        return inverse_kinematics(ch, pose, seed, restarts=ik_restarts, rng=rng)

    solver = ik_solver or default_solver
    obstacles = list(obstacles)
    out = []
    for i in range(n):
        theta = 2.0 * np.pi * i / n
        pose = candidate_pose(circle, theta, tool)
        q = None
        feasible = False
        try:
            q = solver(chain, pose, q_seed, rng=np.random.default_rng(ik_rng_base + i))
        except NoSolution:
            pass
        if q is not None and chain.in_limits(q):
            feasible = not in_collision(chain.link_bodies(q), obstacles)
        out.append(GraspCandidate(theta, pose, q, feasible))
    logger.debug("generated %d candidates, %d feasible", n, sum(c.feasible for c in out))
    return out


def select_grasp(candidates, q_current, policy: SelectionPolicy = SelectionPolicy.CLOSEST_CONFIG):
    """Pick the grasp per policy; ties break toward the lower index."""
    q_current = np.asarray(q_current, dtype=float)
    feasible = [(i, c) for i, c in enumerate(candidates) if c.feasible]
    if not feasible:
        raise NoFeasibleGrasp(f"none of {len(candidates)} candidates feasible")
    for i, c in feasible:
        c.joint_distance = float(np.linalg.norm(c.ik - q_current))
    if policy is SelectionPolicy.FIRST_FEASIBLE:
        return feasible[0][1]
    best = min(feasible, key=lambda ic: (ic[1].joint_distance, ic[0]))
    return best[1]
