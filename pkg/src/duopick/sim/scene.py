"""Default dual-arm rig: bases, homes, storage bin, and pepper spawn region.

Geometry is frozen so seeded trials reproduce exactly. The two arms face the
crop row from floor-mounted bases 0.5 m apart; the storage bin sits between
them; peppers spawn in a box ahead of and above the bases where both arms
keep a horizontal approach feasible.
"""

from __future__ import annotations

import numpy as np

from ..arm import KinematicChain, default_chain
from ..collision import Box
from ..geometry import RigidTransform, frame_with_fallback
from ..planning import PlanningScene, Workspace
from .world import SimWorld, make_pepper, randomize_pepper

GRIPPER = "gripper"
CUTTER = "cutter"

BASE_GRIPPER = np.array([-0.25, 0.0, 0.0])
BASE_CUTTER = np.array([0.25, 0.0, 0.0])

HOME_GRIPPER = np.array([0.5514, -1.2458, 0.8869, 1.1367, -0.2262, 1.6098, -0.7553])
HOME_CUTTER = -HOME_GRIPPER

WORKSPACE = Workspace(np.array([-0.9, -0.5, -0.05]), np.array([0.9, 1.0, 1.3]))

# Storage bin between the bases: a thin floor slab is the only collision body;
# a tolerance volume above it decides whether a deposited fruit counts.
BIN_FLOOR = Box(np.array([0.0, 0.20, 0.212]), np.array([0.09, 0.09, 0.008]))
BIN_LO = np.array([-0.09, 0.11, 0.22])
BIN_HI = np.array([0.09, 0.29, 0.38])
STORAGE_POSE = RigidTransform(
    frame_with_fallback(np.array([0.0, 0.0, -1.0]), reference=np.array([0.0, 1.0, 0.0])),
    np.array([0.0, 0.20, 0.38]),
)

# Pepper spawn region: the center column is fully harvestable; the far left
# and right columns exceed one arm's comfortable reach, which is what the
# success-versus-horizontal-position study measures.
SPAWN = Workspace(np.array([-0.30, 0.50, 0.58]), np.array([0.30, 0.62, 0.74]))
ROW_CENTER = SPAWN.center

WALL_CLIP = 0.12          # division wall stays between the bases
JOINT_SPEED = 0.8         # rad/s, constant-velocity execution model


def default_scene() -> PlanningScene:
    """Planning scene with both arms mounted, homed, and the bin present."""
    chain = default_chain()
    arms = {
        GRIPPER: chain.with_base(RigidTransform(np.eye(3), BASE_GRIPPER.copy())),
        CUTTER: chain.with_base(RigidTransform(np.eye(3), BASE_CUTTER.copy())),
    }
    home = {GRIPPER: HOME_GRIPPER.copy(), CUTTER: HOME_CUTTER.copy()}
    return PlanningScene(
        workspace=WORKSPACE,
        bodies=[Box(BIN_FLOOR.center.copy(), BIN_FLOOR.half.copy())],
        arms=arms,
        home=home,
    )


def fruit_in_bin(point) -> bool:
    """True when a fruit center lies inside the storage tolerance volume."""
    p = np.asarray(point, dtype=float)
    return bool(np.all(p >= BIN_LO) and np.all(p <= BIN_HI))


def make_world(seed: int, n_peppers: int = 1, spawn: Workspace = None) -> SimWorld:
    """Spawn n detachable peppers uniformly in the spawn box, one RNG per world."""
    spawn = spawn or SPAWN
    rng = np.random.default_rng(seed)
    peppers = [make_pepper(randomize_pepper(spawn, rng)) for _ in range(n_peppers)]
    return SimWorld(spawn=spawn, peppers=peppers, seed=seed)


def centered_world(seed: int = 0) -> SimWorld:
    """Single upright pepper at the exact spawn-box center (the easiest case)."""
    pose = RigidTransform(np.eye(3), SPAWN.center)
    return SimWorld(spawn=SPAWN, peppers=[make_pepper(pose)], seed=seed)
