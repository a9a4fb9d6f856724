"""Serial-arm kinematics: FK, damped least-squares IK, and link capsules.

Chains load from JSON so tests can use toy chains; the packaged default is a
7-joint arm with alternating roll/pitch axes. Batch FK over many configs is
vectorized for the planner's collision checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .collision import Capsule
from .errors import NoSolution
from .geometry import RigidTransform, as_vec3, matrix_to_rotvec, rotvec_to_matrix, skew, unit

IK_POS_TOL = 2e-3
IK_ROT_TOL = 1e-2
DEFAULT_MARGIN = 5e-3


def _rpy_to_matrix(rpy) -> np.ndarray:
    r, p, y = rpy
    return (
        rotvec_to_matrix(np.array([0.0, 0.0, y]))
        @ rotvec_to_matrix(np.array([0.0, p, 0.0]))
        @ rotvec_to_matrix(np.array([r, 0.0, 0.0]))
    )


@dataclass
class JointSpec:
    axis: np.ndarray
    origin: RigidTransform
    limits: tuple

    def __post_init__(self):
        self.axis = unit(as_vec3(self.axis, "axis"))
        lo, hi = self.limits
        if not lo < hi:
            raise ValueError("joint limits must satisfy low < high")
        self.limits = (float(lo), float(hi))


@dataclass
class KinematicChain:
    joints: list
    ee_offset: RigidTransform
    link_radii: np.ndarray
    base: RigidTransform = field(default_factory=RigidTransform.identity)
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if not self.joints:
            raise ValueError("chain needs at least one joint")
        self.link_radii = np.asarray(self.link_radii, dtype=float)
        if len(self.link_radii) != len(self.joints) + 1:
            raise ValueError("need one link radius per segment (n_joints + 1)")
        if np.any(self.link_radii <= 0):
            raise ValueError("link radii must be positive")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def in_limits(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.lower - 1e-12) and np.all(q <= self.upper + 1e-12))

    def clip(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)

    def with_base(self, base: RigidTransform) -> "KinematicChain":
        return KinematicChain(self.joints, self.ee_offset, self.link_radii.copy(), base, self.margin)

    # -- kinematics ---------------------------------------------------------

    def _check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.size != self.dof or not np.all(np.isfinite(q)):
            raise ValueError(f"expected {self.dof} finite joint values")
        return q

    def frames(self, q) -> list:
        """Pose after each joint (0..dof-1) plus the end-effector pose."""
        q = self._check_q(q)
        T = self.base
        out = []
        for spec, qi in zip(self.joints, q):
            T = T @ spec.origin @ RigidTransform(rotvec_to_matrix(spec.axis * qi), np.zeros(3))
            out.append(T)
        out.append(T @ self.ee_offset)
        return out

    def forward_kinematics(self, q) -> RigidTransform:
        return self.frames(q)[-1]

    def joint_origins(self, q) -> np.ndarray:
        """(dof + 2, 3) points: base, each joint origin, end effector."""
        frames = self.frames(q)
        return np.vstack(
            [self.base.translation] + [f.translation for f in frames]
        )

    def origins_batch(self, Q) -> np.ndarray:
        """(N, dof + 2, 3) joint origin points for a batch of configs."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        n = Q.shape[0]
        R = np.broadcast_to(self.base.rotation, (n, 3, 3)).copy()
        t = np.broadcast_to(self.base.translation, (n, 3)).copy()
        pts = np.empty((n, self.dof + 2, 3))
        pts[:, 0] = t
        for i, spec in enumerate(self.joints):
            t = t + np.einsum("nij,j->ni", R, spec.origin.translation)
            R = np.einsum("nij,jk->nik", R, spec.origin.rotation)
            pts[:, i + 1] = t
            K = skew(spec.axis)
            s = np.sin(Q[:, i])[:, None, None]
            c = np.cos(Q[:, i])[:, None, None]
            Rj = np.eye(3) + s * K + (1.0 - c) * (K @ K)
            R = np.einsum("nij,njk->nik", R, Rj)
        pts[:, -1] = t + np.einsum("nij,j->ni", R, self.ee_offset.translation)
        return pts

    def ee_positions(self, Q) -> np.ndarray:
        """(N, 3) end-effector translations for a batch of configs."""
        return self.origins_batch(Q)[:, -1]

    def jacobian(self, q) -> np.ndarray:
        """Geometric Jacobian (6 x dof): position rows then rotation rows."""
        q = self._check_q(q)
        frames = self.frames(q)
        p_ee = frames[-1].translation
        J = np.zeros((6, self.dof))
        for i, spec in enumerate(self.joints):
            z = frames[i].rotation @ spec.axis
            p = frames[i].translation
            J[:3, i] = np.cross(z, p_ee - p)
            J[3:, i] = z
        return J

    def link_bodies(self, q, margin: float = None) -> list:
        """One inflated capsule per link, endpoints at consecutive origins."""
        m = self.margin if margin is None else margin
        pts = self.joint_origins(q)
        return [
            Capsule(pts[i], pts[i + 1], self.link_radii[i] + m)
            for i in range(len(pts) - 1)
        ]


def forward_kinematics(chain: KinematicChain, q) -> RigidTransform:
    return chain.forward_kinematics(q)


def link_bodies(chain: KinematicChain, q, margin: float = None) -> list:
    return chain.link_bodies(q, margin)


def inverse_kinematics(
    chain: KinematicChain,
    target: RigidTransform,
    seed,
    max_steps: int = 100,
    damping: float = 1e-3,
    step_clamp: float = 0.2,
    restarts: int = 20,
    rng: np.random.Generator = None,
) -> np.ndarray:
    """Damped least-squares IK with random restarts.

    Success means FK within 2 mm translation and 1e-2 rad rotation of the
    target, inside joint limits. Raises NoSolution when the restart budget is
    exhausted.
    """
    if not np.all(np.isfinite(target.translation)):
        raise ValueError("target must be finite")
    rng = rng or np.random.default_rng(0)
    q0 = chain.clip(np.asarray(seed, dtype=float))
    lam2 = damping * damping

    def task_error(q):
        T = chain.forward_kinematics(q)
        e_pos = target.translation - T.translation
        e_rot = matrix_to_rotvec(target.rotation @ T.rotation.T)
        return np.concatenate([e_pos, e_rot])

    def converged(err):
        return (
            np.linalg.norm(err[:3]) < IK_POS_TOL and np.linalg.norm(err[3:]) < IK_ROT_TOL
        )

    eye6 = np.eye(6)
    for attempt in range(restarts + 1):
        q = q0 if attempt == 0 else rng.uniform(chain.lower, chain.upper)
        err = task_error(q)
        lam = lam2
        stall = 0
        for _ in range(max_steps):
            if converged(err):
                return q
            J = chain.jacobian(q)
            base = np.linalg.norm(err)
            # adaptive damping: a rejected step raises lam, rotating the next
            # step toward steepest descent, so progress survives near-singular
            # postures
            improved = False
            for _ in range(8):
                dq = J.T @ np.linalg.solve(J @ J.T + lam * eye6, err)
                step = np.linalg.norm(dq)
                if step > step_clamp:
                    dq *= step_clamp / step
                q_try = chain.clip(q + dq)
                err_try = task_error(q_try)
                if np.linalg.norm(err_try) < base:
                    lam = max(lam / 3.0, 1e-12)
                    improved = True
                    break
                lam = min(lam * 10.0, 1e8)
            if not improved:
                break
            q, err = q_try, err_try
            # bail out of hopeless crawls instead of burning max_steps
            if base - np.linalg.norm(err) < max(1e-7, 5e-3 * base):
                stall += 1
                if stall >= 8:
                    break
            else:
                stall = 0
        if converged(err):
            return q
    raise NoSolution(f"IK failed after {restarts} restarts")


# -- chain loading ----------------------------------------------------------


def _transform_from_json(obj) -> RigidTransform:
    t = np.asarray(obj.get("t", [0, 0, 0]), dtype=float)
    rpy = obj.get("rpy", [0, 0, 0])
    return RigidTransform(_rpy_to_matrix(rpy), t)


def _matrix_to_rpy(R: np.ndarray) -> list:
    """Inverse of _rpy_to_matrix for the Rz(y) Ry(p) Rx(r) convention."""
    p = np.arctan2(-R[2, 0], np.hypot(R[2, 1], R[2, 2]))
    if abs(p) > np.pi / 2 - 1e-9:
        # pitch singularity: fold everything into roll
        return [float(np.arctan2(-R[0, 1], R[1, 1])), float(p), 0.0]
    r = np.arctan2(R[2, 1], R[2, 2])
    y = np.arctan2(R[1, 0], R[0, 0])
    return [float(r), float(p), float(y)]


def _transform_to_json(T: RigidTransform) -> dict:
    return {"t": [float(v) for v in T.translation], "rpy": _matrix_to_rpy(T.rotation)}


def chain_from_dict(data: dict) -> KinematicChain:
    joints = [
        JointSpec(
            axis=np.asarray(j["axis"], dtype=float),
            origin=_transform_from_json(j.get("origin", {})),
            limits=tuple(j["limits"]),
        )
        for j in data["joints"]
    ]
    return KinematicChain(
        joints=joints,
        ee_offset=_transform_from_json(data.get("ee_offset", {})),
        link_radii=np.asarray(data["link_radii"], dtype=float),
        base=_transform_from_json(data.get("base", {})),
        margin=float(data.get("margin", DEFAULT_MARGIN)),
    )


def chain_to_dict(chain: KinematicChain) -> dict:
    """Serialize a chain (base included) so chain_from_dict reproduces it."""
    return {
        "joints": [
            {
                "axis": [float(v) for v in j.axis],
                "origin": _transform_to_json(j.origin),
                "limits": [j.limits[0], j.limits[1]],
            }
            for j in chain.joints
        ],
        "ee_offset": _transform_to_json(chain.ee_offset),
        "link_radii": [float(v) for v in chain.link_radii],
        "base": _transform_to_json(chain.base),
        "margin": chain.margin,
    }


def load_chain(path) -> KinematicChain:
    with open(Path(path)) as f:
        return chain_from_dict(json.load(f))


def default_chain() -> KinematicChain:
    with resources.files("duopick.data").joinpath("arm7.json").open() as f:
        return chain_from_dict(json.load(f))
