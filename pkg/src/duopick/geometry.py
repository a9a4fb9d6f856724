"""Vectors, rotations, rigid transforms, frame construction, back-projection.

Everything downstream (fitting, kinematics, planning, simulation) builds on
this module. Points and directions are plain float64 numpy arrays of shape
(3,); batches are (N, 3). Rotations are 3x3 matrices, convertible to and from
rotation vectors (axis * angle, radians).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateAxis, EmptyCloud, ParallelReference

# Module tolerances; callers may override per call where it matters.
EPS_LEN = 1e-6        # minimum axis length, meters
EPS_ORTHO = 1e-9      # orthonormality tolerance
SMALL_ANGLE = 1e-7    # below this, Rodrigues uses the series expansion

WORLD_UP = np.array([0.0, 0.0, 1.0])
WORLD_X = np.array([1.0, 0.0, 0.0])


def as_vec3(v, name: str = "vector") -> np.ndarray:
    """Validate and convert to a finite float64 (3,) array."""
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite components: {a}")
    return a


def as_points(p, name: str = "points") -> np.ndarray:
    """Validate and convert to a finite float64 (N, 3) array."""
    a = np.asarray(p, dtype=float)
    if a.size == 0:
        return a.reshape(0, 3)
    if a.ndim == 1 and a.shape == (3,):
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN/Inf")
    return a


def unit(v: np.ndarray, eps: float = EPS_LEN) -> np.ndarray:
    """Normalize, raising DegenerateAxis when the norm is at or below eps."""
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n <= eps:
        raise DegenerateAxis(f"vector norm {n:.3e} <= {eps:.1e}")
    return v / n


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotvec_to_matrix(rv) -> np.ndarray:
    """Rodrigues' formula with a series expansion below SMALL_ANGLE."""
    rv = as_vec3(rv, "rotation vector")
    theta = float(np.linalg.norm(rv))
    K = skew(rv)
    if theta < SMALL_ANGLE:
        # sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def matrix_to_rotvec(R) -> np.ndarray:
    """Inverse of rotvec_to_matrix; robust near 0 and pi."""
    R = np.asarray(R, dtype=float)
    cos_t = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(cos_t))
    if theta < SMALL_ANGLE:
        # R ~ I + [rv]x for small angles
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - theta < 1e-6:
        # axis from the dominant column of R + I
        M = R + np.eye(3)
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / np.sqrt(2.0 * M[k, k])
        # resolve sign so small off-axis terms stay consistent
        rv = axis * theta
        if np.linalg.norm(rotvec_to_matrix(rv) - R) > np.linalg.norm(rotvec_to_matrix(-rv) - R):
            rv = -rv
        return rv
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return axis * (theta / (2.0 * np.sin(theta)))


def rotation_derivatives(rv) -> np.ndarray:
    """Partial derivatives dR/d(rv_k), shape (3, 3, 3), stacked over k.

    Uses the closed form of Gallego & Yezzi; falls back to the skew basis at
    the identity.
    """
    rv = as_vec3(rv, "rotation vector")
    theta2 = float(rv @ rv)
    R = rotvec_to_matrix(rv)
    out = np.empty((3, 3, 3))
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            out[k] = skew(e)
        return out
    I = np.eye(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        term = rv[k] * skew(rv) + skew(np.cross(rv, (I - R) @ e))
        out[k] = (term / theta2) @ R
    return out


def is_rotation(R, tol: float = EPS_ORTHO) -> bool:
    """True when R is orthonormal with det +1 within tol."""
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.all(np.isfinite(R))
        and np.abs(R.T @ R - np.eye(3)).max() <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


@dataclass
class RigidTransform:
    """SE(3) element: rotation matrix plus translation, meters."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = as_vec3(self.translation, "translation")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_rotvec(cls, rv, t) -> "RigidTransform":
        return cls(rotvec_to_matrix(rv), t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self then other applied from the right: result = self * other."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to a (3,) point or (N, 3) batch."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def apply_direction(self, d: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(d, dtype=float)

    def rotvec(self) -> np.ndarray:
        return matrix_to_rotvec(self.rotation)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def almost_equal(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return (
            np.abs(self.rotation - other.rotation).max() <= tol
            and np.abs(self.translation - other.translation).max() <= tol
        )


def build_frame(v, reference, eps_len: float = EPS_LEN) -> np.ndarray:
    """Orthonormal frame with z along v, x from the reference cross product.

    z = v/|v|, x = (v x reference)/|v x reference|, y = z x x. Returns the
    rotation matrix with columns [x | y | z].

    Raises DegenerateAxis when |v| <= eps_len and ParallelReference when the
    cross product vanishes (v parallel to the reference).
    """
    v = as_vec3(v, "axis")
    reference = as_vec3(reference, "reference")
    n = float(np.linalg.norm(v))
    if n <= eps_len:
        raise DegenerateAxis(f"axis norm {n:.3e} <= {eps_len:.1e}")
    z = v / n
    c = np.cross(v, reference)
    cn = float(np.linalg.norm(c))
    if cn <= eps_len:
        raise ParallelReference("axis is parallel to the reference vector")
    x = c / cn
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def frame_with_fallback(v, reference, eps_len: float = EPS_LEN) -> np.ndarray:
    """build_frame with the deterministic reference cascade.

    Tries the given reference, then the world up axis, then the world x axis.
    DegenerateAxis still propagates (no frame exists for a zero axis).
    """
    for ref in (reference, WORLD_UP, WORLD_X):
        try:
            return build_frame(v, ref, eps_len=eps_len)
        except ParallelReference:
            continue
    raise ParallelReference("axis parallel to every fallback reference")


@dataclass
class CameraIntrinsics:
    """Pinhole intrinsics, pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")


@dataclass
class PointCloud:
    """Points in a named frame."""

    points: np.ndarray
    frame: str = "camera"

    def __post_init__(self):
        self.points = as_points(self.points, "cloud points")

    def __len__(self) -> int:
        return self.points.shape[0]

    def require_nonempty(self) -> "PointCloud":
        if len(self) == 0:
            raise EmptyCloud(f"cloud in frame '{self.frame}' is empty")
        return self

    def transformed(self, T: RigidTransform, frame: str) -> "PointCloud":
        return PointCloud(T.apply(self.points), frame)


def back_project(pixels, depth, intr: CameraIntrinsics, frame: str = "camera") -> PointCloud:
    """Back-project masked pixels with per-pixel depth into a 3D cloud.

    pixels: (N, 2) integer (u, v) coordinates. depth: either an (H, W) image
    indexed by those pixels or an (N,) vector aligned with them, meters.
    Pixels with non-positive or non-finite depth are skipped; EmptyCloud is
    raised when nothing survives.
    """
    px = np.asarray(pixels)
    if px.ndim != 2 or px.shape[1] != 2:
        raise ValueError(f"pixels must be (N, 2), got {px.shape}")
    u = px[:, 0].astype(float)
    v = px[:, 1].astype(float)
    if np.any(u < 0) or np.any(u >= intr.width) or np.any(v < 0) or np.any(v >= intr.height):
        raise ValueError("mask pixel outside image bounds")
    d = np.asarray(depth, dtype=float)
    if d.ndim == 2:
        d = d[px[:, 1].astype(int), px[:, 0].astype(int)]
    valid = np.isfinite(d) & (d > 0)
    if not np.any(valid):
        raise EmptyCloud("no masked pixel has valid depth")
    u, v, d = u[valid], v[valid], d[valid]
    pts = np.column_stack([(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d])
    return PointCloud(pts, frame)


def project(points, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points to (N, 2) pixel coords."""
    p = as_points(points)
    z = p[:, 2]
    if np.any(z <= 0):
        raise ValueError("cannot project points at or behind the camera")
    return np.column_stack([p[:, 0] * intr.fx / z + intr.cx, p[:, 1] * intr.fy / z + intr.cy])


def centroid(cloud: PointCloud | np.ndarray) -> np.ndarray:
    """Arithmetic mean of the points. Raises EmptyCloud on an empty cloud."""
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
    if pts.shape[0] == 0:
        raise EmptyCloud("centroid of an empty cloud")
    return pts.mean(axis=0)
