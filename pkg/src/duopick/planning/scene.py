"""Planning scenes: static bodies, per-arm chains, and the division wall.

The wall is a thin vertical box through a given x position spanning the
shared workspace, so each arm can plan independently while the other executes
open loop. Setting it twice replaces the previous wall.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..arm import KinematicChain, chain_from_dict, default_chain
from ..collision import Box, Capsule, Plane
from ..errors import ConfigError
from ..geometry import RigidTransform, as_vec3, rotvec_to_matrix

WALL_THICKNESS = 0.01


@dataclass
class Workspace:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = as_vec3(self.lo, "workspace lo")
        self.hi = as_vec3(self.hi, "workspace hi")
        if np.any(self.hi <= self.lo):
            raise ValueError("workspace hi must exceed lo on every axis")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)


@dataclass
class PlanningScene:
    workspace: Workspace
    bodies: list = field(default_factory=list)
    arms: dict = field(default_factory=dict)       # name -> KinematicChain
    home: dict = field(default_factory=dict)       # name -> joint config
    wall: Box = None
    version: int = 0

    def collision_bodies(self) -> list:
        return self.bodies + ([self.wall] if self.wall is not None else [])

    def snapshot(self) -> "PlanningScene":
        """Independent copy for a planner to hold while the scene mutates."""
        return copy.deepcopy(self)

    def with_bodies(self, extra) -> "PlanningScene":
        """Snapshot with extra static bodies (e.g. the other arm, frozen)."""
        snap = self.snapshot()
        snap.bodies = snap.bodies + list(extra)
        return snap

    def arm_bodies(self, name: str, q) -> list:
        return self.arms[name].link_bodies(q)


def set_division_wall(scene: PlanningScene, x_position: float) -> None:
    ws = scene.workspace
    center = np.array([float(x_position), ws.center[1], ws.center[2]])
    half = np.array([WALL_THICKNESS / 2, ws.half[1], ws.half[2]])
    scene.wall = Box(center, half)
    scene.version += 1


def clear_division_wall(scene: PlanningScene) -> None:
    scene.wall = None
    scene.version += 1


# -- JSON -------------------------------------------------------------------


def _body_to_dict(body) -> dict:
    if isinstance(body, Capsule):
        return {"type": "capsule", "p0": body.p0.tolist(), "p1": body.p1.tolist(), "radius": body.radius}
    if isinstance(body, Box):
        from ..geometry import matrix_to_rotvec

        return {
            "type": "box",
            "center": body.center.tolist(),
            "half": body.half.tolist(),
            "rotvec": matrix_to_rotvec(body.rotation).tolist(),
        }
    if isinstance(body, Plane):
        return {"type": "plane", "point": body.point.tolist(), "normal": body.normal.tolist()}
    raise ConfigError(f"unknown body type {type(body).__name__}")


def body_from_dict(d: dict):
    kind = d.get("type")
    if kind == "capsule":
        return Capsule(np.asarray(d["p0"], float), np.asarray(d["p1"], float), float(d["radius"]))
    if kind == "box":
        R = rotvec_to_matrix(np.asarray(d.get("rotvec", [0, 0, 0]), float))
        return Box(np.asarray(d["center"], float), np.asarray(d["half"], float), R)
    if kind == "plane":
        return Plane(np.asarray(d["point"], float), np.asarray(d["normal"], float))
    raise ConfigError(f"unknown body type {kind!r}")


def _base_from_dict(d: dict) -> RigidTransform:
    t = np.asarray(d.get("t", [0, 0, 0]), float)
    R = rotvec_to_matrix(np.asarray(d.get("rotvec", [0, 0, 0]), float))
    return RigidTransform(R, t)


def scene_from_dict(data: dict) -> PlanningScene:
    ws = Workspace(np.asarray(data["workspace"]["lo"], float), np.asarray(data["workspace"]["hi"], float))
    bodies = [body_from_dict(b) for b in data.get("bodies", [])]
    arms = {}
    for name, spec in data.get("arms", {}).items():
        chain_spec = spec.get("chain", "default")
        chain = default_chain() if chain_spec == "default" else chain_from_dict(chain_spec)
        arms[name] = chain.with_base(_base_from_dict(spec.get("base", {})))
    home = {k: np.asarray(v, float) for k, v in data.get("home", {}).items()}
    scene = PlanningScene(workspace=ws, bodies=bodies, arms=arms, home=home)
    if "wall_x" in data and data["wall_x"] is not None:
        set_division_wall(scene, float(data["wall_x"]))
    return scene


def scene_to_dict(scene: PlanningScene) -> dict:
    from ..geometry import matrix_to_rotvec

    out = {
        "workspace": {"lo": scene.workspace.lo.tolist(), "hi": scene.workspace.hi.tolist()},
        "bodies": [_body_to_dict(b) for b in scene.bodies],
        "arms": {
            name: {
                "chain": "default",
                "base": {
                    "t": chain.base.translation.tolist(),
                    "rotvec": matrix_to_rotvec(chain.base.rotation).tolist(),
                },
            }
            for name, chain in scene.arms.items()
        },
        "home": {k: np.asarray(v).tolist() for k, v in scene.home.items()},
        "wall_x": float(scene.wall.center[0]) if scene.wall is not None else None,
    }
    return out


def load_scene(path) -> PlanningScene:
    with open(Path(path)) as f:
        return scene_from_dict(json.load(f))
