"""Distance queries between capsules, boxes, and planes.

Capsules are the only moving geometry (arm links), so the supported pairs are
capsule-capsule, capsule-box, and capsule-plane; anything else raises
UnsupportedPair. Segment-box distance uses a ternary search over the segment
parameter (the distance to a convex set is convex along an affine segment).
All primitives are vectorized over leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedPair
from .geometry import as_vec3, is_rotation

_TERNARY_ITERS = 72


@dataclass
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        self.p0 = as_vec3(self.p0, "p0")
        self.p1 = as_vec3(self.p1, "p1")
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("capsule radius must be positive")

    def inflated(self, margin: float) -> "Capsule":
        return Capsule(self.p0, self.p1, self.radius + margin)


@dataclass
class Box:
    center: np.ndarray
    half: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.center = as_vec3(self.center, "center")
        self.half = as_vec3(self.half, "half")
        if np.any(self.half <= 0):
            raise ValueError("box half-extents must be positive")
        self.rotation = np.asarray(self.rotation, dtype=float)
        if not is_rotation(self.rotation):
            raise ValueError("box rotation must be in SO(3)")

    def contains(self, points) -> np.ndarray:
        q = (np.atleast_2d(points) - self.center) @ self.rotation
        return np.all(np.abs(q) <= self.half, axis=1)


@dataclass
class Plane:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.point = as_vec3(self.point, "point")
        n = as_vec3(self.normal, "normal")
        norm = np.linalg.norm(n)
        if norm < 1e-9:
            raise ValueError("plane normal must be nonzero")
        self.normal = n / norm

    def signed_distance(self, points) -> np.ndarray:
        return (np.atleast_2d(points) - self.point) @ self.normal


def segment_segment_distance(p0, p1, q0, q1):
    """Minimum distance between segments [p0,p1] and [q0,q1], batched."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    denom = a * e - b * b

    tiny = 1e-14
    safe = np.maximum
    # general case; degenerate segments fall back to point projections
    s = np.where(denom > tiny, np.clip((b * f - c * e) / safe(denom, tiny), 0.0, 1.0), 0.0)
    t = np.where(e > tiny, (b * s + f) / safe(e, tiny), 0.0)

    t_clamped = np.clip(t, 0.0, 1.0)
    s = np.where(
        t != t_clamped,
        np.clip((b * t_clamped - c) / safe(a, tiny), 0.0, 1.0),
        s,
    )
    s = np.where(a <= tiny, 0.0, s)
    t = np.where(e <= tiny, 0.0, t_clamped)

    closest_p = p0 + s[..., None] * d1
    closest_q = q0 + t[..., None] * d2
    return np.linalg.norm(closest_p - closest_q, axis=-1)


def point_box_distance(points, box: Box):
    """Distance from points to a box surface (0 inside), batched."""
    q = (np.atleast_2d(points) - box.center) @ box.rotation
    outside = np.maximum(np.abs(q) - box.half, 0.0)
    return np.linalg.norm(outside, axis=-1)


def segment_box_distance(p0, p1, box: Box, iters: int = _TERNARY_ITERS):
    """Minimum distance from segments to a box, by ternary search in t.

    The result overestimates the true minimum by at most |p1-p0|*(2/3)^iters
    (the distance is 1-Lipschitz in the segment parameter), so callers that
    only gate on a clearance margin can pass a reduced iteration count.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    lo = np.zeros(p0.shape[0])
    hi = np.ones(p0.shape[0])
    d = p1 - p0
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        f1 = point_box_distance(p0 + m1[:, None] * d, box)
        f2 = point_box_distance(p0 + m2[:, None] * d, box)
        take_left = f1 <= f2
        hi = np.where(take_left, m2, hi)
        lo = np.where(take_left, lo, m1)
    mid = 0.5 * (lo + hi)
    interior = point_box_distance(p0 + mid[:, None] * d, box)
    ends = np.minimum(point_box_distance(p0, box), point_box_distance(p1, box))
    return np.minimum(interior, ends)


def segment_plane_distance(p0, p1, plane: Plane):
    """Minimum unsigned distance from segments to a plane; 0 when straddling."""
    d0 = plane.signed_distance(p0)
    d1 = plane.signed_distance(p1)
    straddle = d0 * d1 <= 0
    return np.where(straddle, 0.0, np.minimum(np.abs(d0), np.abs(d1)))


def min_distance(a, b) -> float:
    """Surface-to-surface distance between two bodies (negative = overlap)."""
    if isinstance(b, Capsule) and not isinstance(a, Capsule):
        a, b = b, a
    if not isinstance(a, Capsule):
        raise UnsupportedPair(f"{type(a).__name__} vs {type(b).__name__}")
    if isinstance(b, Capsule):
        d = segment_segment_distance(a.p0, a.p1, b.p0, b.p1)
        return float(d - a.radius - b.radius)
    if isinstance(b, Box):
        d = segment_box_distance(a.p0, a.p1, b)
        return float(d[0] - a.radius)
    if isinstance(b, Plane):
        d = segment_plane_distance(a.p0[None, :], a.p1[None, :], b)
        return float(d[0] - a.radius)
    raise UnsupportedPair(f"Capsule vs {type(b).__name__}")


def in_collision(bodies_a, bodies_b) -> bool:
    """True iff any cross pair's minimum distance is negative."""
    for a in bodies_a:
        for b in bodies_b:
            if min_distance(a, b) < 0.0:
                return True
    return False


def capsules_min_distances(p0s, p1s, radii, bodies, box_iters: int = _TERNARY_ITERS) -> np.ndarray:
    """Per-segment minimum clearance against a body list, vectorized.

    p0s, p1s: (M, 3) segment endpoints; radii: (M,). Returns (M,) minimum of
    (distance - radius - other radius) over bodies; +inf with no bodies.
    box_iters trades box-distance accuracy for speed (see segment_box_distance).
    """
    p0s = np.atleast_2d(p0s)
    p1s = np.atleast_2d(p1s)
    radii = np.asarray(radii, dtype=float)
    out = np.full(p0s.shape[0], np.inf)
    for body in bodies:
        if isinstance(body, Capsule):
            d = segment_segment_distance(p0s, p1s, body.p0[None, :], body.p1[None, :])
            d = d - body.radius
        elif isinstance(body, Box):
            d = segment_box_distance(p0s, p1s, body, box_iters)
        elif isinstance(body, Plane):
            d = segment_plane_distance(p0s, p1s, body)
        else:
            raise UnsupportedPair(type(body).__name__)
        out = np.minimum(out, d - radii)
    return out
