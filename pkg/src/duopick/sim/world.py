"""Synthetic harvest world: detachable peppers, spawn sampling, cut model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..collision import segment_segment_distance
from ..geometry import RigidTransform, as_vec3, rotvec_to_matrix
from ..planning import Workspace
from ..superellipsoid import Superellipsoid

CUT_TOLERANCE = 0.008     # blade-to-peduncle detach distance
MAX_TILT = 0.5            # bound on the angle between pepper axis and vertical
PEDUNCLE_LENGTH = 0.06


@dataclass
class NoiseModel:
    """Gaussian disturbance levels for poses and cloud points."""

    sigma_t: float = 0.0
    sigma_rot: float = 0.0
    sigma_p: float = 0.0

    def __post_init__(self):
        if self.sigma_t < 0 or self.sigma_rot < 0 or self.sigma_p < 0:
            raise ValueError("noise sigmas must be >= 0")

    def perturb_pose(self, T: RigidTransform, rng: np.random.Generator) -> RigidTransform:
        """Pose with Gaussian translation and rotation-vector disturbance."""
        dt = rng.normal(scale=self.sigma_t, size=3) if self.sigma_t > 0 else np.zeros(3)
        dr = rng.normal(scale=self.sigma_rot, size=3) if self.sigma_rot > 0 else np.zeros(3)
        return RigidTransform(rotvec_to_matrix(dr) @ T.rotation, T.translation + dt)

    def perturb_points(self, points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.sigma_p == 0:
            return points
        return points + rng.normal(scale=self.sigma_p, size=points.shape)


@dataclass
class CutOutcome:
    detached: bool
    miss_distance: float
    first: bool


@dataclass
class SimPepper:
    """Ground-truth fruit with a peduncle segment it hangs from."""

    shape: Superellipsoid
    peduncle_p0: np.ndarray
    peduncle_p1: np.ndarray
    attached: bool = True
    cuts: list = field(default_factory=list)

    def __post_init__(self):
        self.peduncle_p0 = as_vec3(self.peduncle_p0, "peduncle p0")
        self.peduncle_p1 = as_vec3(self.peduncle_p1, "peduncle p1")

    @property
    def center(self) -> np.ndarray:
        return self.shape.t

    @property
    def axis(self) -> np.ndarray:
        return self.shape.rotation()[:, 2]


def make_pepper(
    pose: RigidTransform,
    a: float = 0.035,
    b: float = 0.033,
    c: float = 0.05,
    eps1: float = 0.8,
    eps2: float = 0.9,
    peduncle_length: float = PEDUNCLE_LENGTH,
) -> SimPepper:
    """Pepper at a pose, peduncle running from the fruit top up the stem axis."""
    shape = Superellipsoid(a, b, c, eps1, eps2, t=pose.translation.copy(), theta=pose.rotvec())
    axis = pose.rotation[:, 2]
    top = pose.translation + c * axis
    return SimPepper(shape, top, top + peduncle_length * axis)


def tilt_angle(rotation: np.ndarray) -> float:
    """Angle between the pose's z axis and world vertical."""
    return float(np.arccos(np.clip(rotation[2, 2], -1.0, 1.0)))


def randomize_pepper(spawn: Workspace, rng: np.random.Generator) -> RigidTransform:
    """Uniform position in the spawn box; pitch and roll bounded in total tilt.

    Pitch and roll are sampled uniformly and rejected until the angle between
    the pepper axis and vertical stays within MAX_TILT.
    """
    t = rng.uniform(spawn.lo, spawn.hi)
    while True:
        pitch, roll = rng.uniform(-MAX_TILT, MAX_TILT, size=2)
        R = rotvec_to_matrix([0.0, pitch, 0.0]) @ rotvec_to_matrix([roll, 0.0, 0.0])
        if tilt_angle(R) <= MAX_TILT:
            return RigidTransform(R, t)


def apply_cut(pepper: SimPepper, blade_p0, blade_p1, tol: float = CUT_TOLERANCE) -> CutOutcome:
    """Detach the pepper iff the blade segment passes within tol of the peduncle.

    Detachment is one-way: cutting an already-detached pepper is a no-op that
    still reports the miss distance. Every attempt is recorded on the pepper.
    """
    if tol <= 0:
        raise ValueError("cut tolerance must be > 0")
    miss = float(
        segment_segment_distance(
            as_vec3(blade_p0, "blade p0"),
            as_vec3(blade_p1, "blade p1"),
            pepper.peduncle_p0,
            pepper.peduncle_p1,
        )
    )
    hit = miss <= tol
    first = bool(pepper.attached and hit)
    if first:
        pepper.attached = False
    outcome = CutOutcome(detached=not pepper.attached, miss_distance=miss, first=first)
    pepper.cuts.append(outcome)
    return outcome


@dataclass
class SimWorld:
    """Peppers plus static foliage inside a spawn region, owned by one seed."""

    spawn: Workspace
    peppers: list = field(default_factory=list)
    foliage: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        for p in self.peppers:
            inside = np.all(p.center >= self.spawn.lo) and np.all(p.center <= self.spawn.hi)
            if not inside:
                raise ValueError("pepper center outside the spawn box")
