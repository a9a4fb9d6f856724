"""Partial point-cloud rendering of peppers from a pinhole viewpoint.

Surface points come from the parametric sampler; visibility is decided by
back-face culling (outward normal toward the camera), the image frustum, and
ray occlusion tests against blocking bodies. No z-buffer: bodies at desk
scale are convex and sparse enough for per-point ray tests.
"""

from __future__ import annotations

import numpy as np

from ..collision import Box, Capsule, Plane, segment_box_distance, segment_segment_distance
from ..errors import EmptyView
from ..geometry import CameraIntrinsics, PointCloud, RigidTransform, frame_with_fallback, unit
from ..superellipsoid import canonical_coords, surface_normals, sample_surface
from .world import NoiseModel, SimPepper

DEFAULT_INTRINSICS = CameraIntrinsics(fx=520.0, fy=520.0, cx=320.0, cy=240.0)
FRUIT_SAMPLES = 600
PEDUNCLE_SAMPLES = 120
PEDUNCLE_RADIUS = 0.003


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera pose with the optical axis (+z) pointing from eye to target."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    R = frame_with_fallback(forward, np.asarray(up, dtype=float))
    return RigidTransform(R, eye)


def _in_frustum(points_w: np.ndarray, camera: RigidTransform, intr: CameraIntrinsics) -> np.ndarray:
    p_cam = camera.inverse().apply(points_w)
    z = p_cam[:, 2]
    ok = z > 1e-6
    u = np.where(ok, p_cam[:, 0] * intr.fx / np.where(ok, z, 1.0) + intr.cx, -1.0)
    v = np.where(ok, p_cam[:, 1] * intr.fy / np.where(ok, z, 1.0) + intr.cy, -1.0)
    return ok & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)


def _ray_blocked(eye: np.ndarray, point: np.ndarray, body) -> bool:
    if isinstance(body, Capsule):
        return segment_segment_distance(eye, point, body.p0, body.p1) < body.radius
    if isinstance(body, Box):
        return segment_box_distance(eye, point, body) <= 0.0
    if isinstance(body, Plane):
        s0 = float((eye - body.point) @ body.normal)
        s1 = float((point - body.point) @ body.normal)
        return s0 * s1 < 0.0
    raise TypeError(f"unsupported occluder {type(body).__name__}")


def _visible(points_w, camera, intr, occluders) -> np.ndarray:
    keep = _in_frustum(points_w, camera, intr)
    eye = camera.translation
    for i in np.flatnonzero(keep):
        if any(_ray_blocked(eye, points_w[i], b) for b in occluders):
            keep[i] = False
    return keep


def render_partial_cloud(
    pepper: SimPepper,
    camera: RigidTransform,
    intr: CameraIntrinsics = DEFAULT_INTRINSICS,
    noise: NoiseModel = None,
    rng: np.random.Generator = None,
    occluders=(),
    n_fruit: int = FRUIT_SAMPLES,
    n_peduncle: int = PEDUNCLE_SAMPLES,
) -> tuple[PointCloud, PointCloud]:
    """World-frame fruit and peduncle clouds as seen from the camera.

    Fruit points are surface samples kept when their outward normal faces the
    camera, they fall inside the image, and no occluder blocks the view ray.
    Peduncle points sample a thin cylinder around its segment with the same
    frustum and occlusion tests. Gaussian point noise is added last. Raises
    EmptyView when either cloud ends up empty.
    """
    noise = noise or NoiseModel()
    rng = rng if rng is not None else np.random.default_rng(0)

    pts = sample_surface(pepper.shape, n_fruit, rng)
    normals = surface_normals(canonical_coords(pts, pepper.shape), pepper.shape)
    normals_w = normals @ pepper.shape.rotation().T
    facing = np.einsum("ij,ij->i", normals_w, camera.translation - pts) > 0.0
    pts = pts[facing]
    pts = pts[_visible(pts, camera, intr, occluders)]

    seg = pepper.peduncle_p1 - pepper.peduncle_p0
    ts = rng.uniform(0.0, 1.0, n_peduncle)
    radial = rng.normal(size=(n_peduncle, 3))
    radial -= np.outer(radial @ unit(seg), unit(seg))
    norms = np.linalg.norm(radial, axis=1, keepdims=True)
    radial = np.where(norms > 1e-12, radial / norms, 0.0) * rng.uniform(
        0.0, PEDUNCLE_RADIUS, (n_peduncle, 1)
    )
    ped = pepper.peduncle_p0 + np.outer(ts, seg) + radial
    ped = ped[_visible(ped, camera, intr, occluders)]

    if len(pts) == 0 or len(ped) == 0:
        raise EmptyView("no fruit or peduncle points visible from this viewpoint")
    return (
        PointCloud(noise.perturb_points(pts, rng), "world"),
        PointCloud(noise.perturb_points(ped, rng), "world"),
    )
