"""Deterministic harvest simulation: world state, rendering, rig, batch study."""

from .camera import DEFAULT_INTRINSICS, look_at, render_partial_cloud
from .scene import (
    BIN_FLOOR,
    BIN_HI,
    BIN_LO,
    CUTTER,
    GRIPPER,
    HOME_CUTTER,
    HOME_GRIPPER,
    JOINT_SPEED,
    ROW_CENTER,
    SPAWN,
    STORAGE_POSE,
    WALL_CLIP,
    WORKSPACE,
    centered_world,
    default_scene,
    fruit_in_bin,
    make_world,
)
from .world import (
    CUT_TOLERANCE,
    MAX_TILT,
    PEDUNCLE_LENGTH,
    CutOutcome,
    NoiseModel,
    SimPepper,
    SimWorld,
    apply_cut,
    make_pepper,
    randomize_pepper,
    tilt_angle,
)

__all__ = [
    "BIN_FLOOR",
    "BIN_HI",
    "BIN_LO",
    "CUTTER",
    "CUT_TOLERANCE",
    "CutOutcome",
    "DEFAULT_INTRINSICS",
    "GRIPPER",
    "HOME_CUTTER",
    "HOME_GRIPPER",
    "JOINT_SPEED",
    "MAX_TILT",
    "NoiseModel",
    "PEDUNCLE_LENGTH",
    "ROW_CENTER",
    "SPAWN",
    "STORAGE_POSE",
    "SimPepper",
    "SimWorld",
    "WALL_CLIP",
    "WORKSPACE",
    "apply_cut",
    "centered_world",
    "default_scene",
    "fruit_in_bin",
    "look_at",
    "make_pepper",
    "make_world",
    "randomize_pepper",
    "render_partial_cloud",
    "tilt_angle",
]
