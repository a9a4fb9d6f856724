"""Superellipsoid model: implicit surface, residuals, cost, sampling.

The shape is five parameters (semi-axes a, b, c and curvature exponents
eps1, eps2) plus a pose (center t, rotation vector theta). A sensor-frame
point p_s maps into the canonical frame as p_c = R(theta)^T (p_s - t), where
the implicit function

    F(p) = (|x/a|^(2/eps2) + |y/b|^(2/eps2))^(eps2/eps1) + |z/c|^(2/eps1)

equals 1 on the surface. The per-point fitting residual scales the radial
algebraic distance by volume: r = sqrt(abc) * |F^(eps1/2) - 1|.

Parameter vector layout used by the solver (11 entries):
    [a, b, c, eps1, eps2, tx, ty, tz, wx, wy, wz]
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyCloud
from .geometry import (
    PointCloud,
    RigidTransform,
    as_points,
    as_vec3,
    rotation_derivatives,
    rotvec_to_matrix,
)

EPS_LO = 0.1   # exclusive exponent bounds
EPS_HI = 1.9
SCALE_SMOOTHING = 1e-12  # under the isotropy root, for differentiability at a=b=c
_F_FLOOR = 1e-12

N_PARAMS = 11


@dataclass
class Superellipsoid:
    """Shape parameters plus pose (center t, rotation vector theta)."""

    a: float
    b: float
    c: float
    eps1: float = 1.0
    eps2: float = 1.0
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.t = as_vec3(self.t, "center")
        self.theta = as_vec3(self.theta, "rotation vector")
        self.validate()

    def validate(self) -> None:
        if not (self.a > 0 and self.b > 0 and self.c > 0):
            raise ValueError(f"semi-axes must be positive, got {(self.a, self.b, self.c)}")
        for name, e in (("eps1", self.eps1), ("eps2", self.eps2)):
            if not (EPS_LO < e < EPS_HI):
                raise ValueError(f"{name}={e} outside ({EPS_LO}, {EPS_HI})")

    @property
    def semi_axes(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def rotation(self) -> np.ndarray:
        return rotvec_to_matrix(self.theta)

    def pose(self) -> RigidTransform:
        return RigidTransform(self.rotation(), self.t)

    def params(self) -> np.ndarray:
        return np.concatenate([[self.a, self.b, self.c, self.eps1, self.eps2], self.t, self.theta])

    @classmethod
    def from_params(cls, x: np.ndarray) -> "Superellipsoid":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got {x.shape}")
        return cls(x[0], x[1], x[2], x[3], x[4], x[5:8].copy(), x[8:11].copy())

    def transformed(self, T: RigidTransform) -> "Superellipsoid":
        """The same shape observed through an extra rigid transform T."""
        pose = T @ self.pose()
        return replace(self, t=pose.translation, theta=pose.rotvec())


def canonical_coords(points_s, shape: Superellipsoid) -> np.ndarray:
    """Map sensor-frame points into the shape's canonical frame."""
    p = as_points(points_s)
    return (p - shape.t) @ shape.rotation()


def implicit_value(points_c, shape: Superellipsoid) -> np.ndarray:
    """F(p) for canonical-frame points; (N,) or scalar for a single point."""
    p = np.asarray(points_c, dtype=float)
    single = p.ndim == 1
    p = as_points(p)
    e1, e2 = shape.eps1, shape.eps2
    u = np.abs(p[:, 0] / shape.a) ** (2.0 / e2)
    v = np.abs(p[:, 1] / shape.b) ** (2.0 / e2)
    w = np.abs(p[:, 2] / shape.c) ** (2.0 / e1)
    F = (u + v) ** (e2 / e1) + w
    return float(F[0]) if single else F


def residuals(points_s, shape: Superellipsoid, signed: bool = False) -> np.ndarray:
    """Volume-scaled radial algebraic distances for sensor-frame points.

    With signed=True the absolute value is dropped; squaring makes the two
    variants identical in cost, and the solver differentiates the signed form.
    """
    p_c = canonical_coords(points_s, shape)
    F = np.maximum(implicit_value(p_c, shape), _F_FLOOR)
    m = np.sqrt(shape.a * shape.b * shape.c)
    r = m * (F ** (shape.eps1 / 2.0) - 1.0)
    return r if signed else np.abs(r)


def residual(p_s, shape: Superellipsoid) -> float:
    """Single-point residual, always >= 0."""
    return float(residuals(np.asarray(p_s, dtype=float)[None, :], shape)[0])


def scale_spread(a: float, b: float, c: float, smoothing: float = 0.0) -> float:
    """Isotropy prior sqrt((a-b)^2 + (b-c)^2 + (c-a)^2), optionally smoothed."""
    q = (a - b) ** 2 + (b - c) ** 2 + (c - a) ** 2
    return float(np.sqrt(q + smoothing))


def total_cost(cloud, shape: Superellipsoid, lambda_c: float, lambda_s: float, t_init) -> float:
    """Sum of squared residuals plus center and isotropy priors.

    Equals sum(r_i^2) exactly when both weights are zero.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
    if pts.shape[0] == 0:
        raise EmptyCloud("total_cost of an empty cloud")
    t_init = as_vec3(t_init, "t_init")
    r = residuals(pts, shape, signed=True)
    cost = float(r @ r)
    cost += lambda_c * float(np.sum((shape.t - t_init) ** 2))
    cost += lambda_s * scale_spread(shape.a, shape.b, shape.c)
    return cost


def residual_jacobian(points_s, shape: Superellipsoid) -> tuple[np.ndarray, np.ndarray]:
    """Signed residual vector and its analytic Jacobian, shape (N, 11).

    Column order matches Superellipsoid.params(). Points exactly on a
    coordinate axis of the canonical frame sit on removable singularities of
    the derivative terms; the limits there are zero and are applied by mask.
    """
    p_s = as_points(points_s)
    a, b, c, e1, e2 = shape.a, shape.b, shape.c, shape.eps1, shape.eps2
    R = shape.rotation()
    d = p_s - shape.t
    p_c = d @ R
    x, y, z = p_c[:, 0], p_c[:, 1], p_c[:, 2]

    xa2 = (x / a) ** 2
    yb2 = (y / b) ** 2
    zc2 = (z / c) ** 2
    u = xa2 ** (1.0 / e2)
    v = yb2 ** (1.0 / e2)
    w = zc2 ** (1.0 / e1)
    S = u + v
    S_pos = S > _F_FLOOR
    S_safe = np.where(S_pos, S, 1.0)
    G = np.where(S_pos, S_safe ** (e2 / e1), 0.0)
    F = np.maximum(G + w, _F_FLOOR)
    m = np.sqrt(a * b * c)
    H = F ** (e1 / 2.0)
    r = m * (H - 1.0)

    dH_dF = (e1 / 2.0) * F ** (e1 / 2.0 - 1.0)
    dG_dS = np.where(S_pos, (e2 / e1) * G / S_safe, 0.0)

    # parameter-wise partials of u, v, w (masks kill the 0*inf limits)
    with np.errstate(divide="ignore", invalid="ignore"):
        du_dx = np.where(u > 0, (2.0 / e2) * u / np.where(x != 0, x, 1.0), 0.0)
        dv_dy = np.where(v > 0, (2.0 / e2) * v / np.where(y != 0, y, 1.0), 0.0)
        dw_dz = np.where(w > 0, (2.0 / e1) * w / np.where(z != 0, z, 1.0), 0.0)
        ln_xa2 = np.where(u > 0, np.log(np.where(xa2 > 0, xa2, 1.0)), 0.0)
        ln_yb2 = np.where(v > 0, np.log(np.where(yb2 > 0, yb2, 1.0)), 0.0)
        ln_zc2 = np.where(w > 0, np.log(np.where(zc2 > 0, zc2, 1.0)), 0.0)
        ln_S = np.where(S_pos, np.log(S_safe), 0.0)

    du_da = -(2.0 / e2) * u / a
    dv_db = -(2.0 / e2) * v / b
    dw_dc = -(2.0 / e1) * w / c
    du_de2 = -u * ln_xa2 / (e2 * e2)
    dv_de2 = -v * ln_yb2 / (e2 * e2)
    dw_de1 = -w * ln_zc2 / (e1 * e1)

    dF_da = dG_dS * du_da
    dF_db = dG_dS * dv_db
    dF_dc = dw_dc
    dF_de1 = -G * ln_S * e2 / (e1 * e1) + dw_de1
    dF_de2 = G * ln_S / e1 + dG_dS * (du_de2 + dv_de2)

    # canonical-frame gradient of F
    g = np.column_stack([dG_dS * du_dx, dG_dS * dv_dy, dw_dz])

    J = np.empty((p_s.shape[0], N_PARAMS))
    # semi-axes: product rule through the sqrt(abc) prefactor
    J[:, 0] = m / (2.0 * a) * (H - 1.0) + m * dH_dF * dF_da
    J[:, 1] = m / (2.0 * b) * (H - 1.0) + m * dH_dF * dF_db
    J[:, 2] = m / (2.0 * c) * (H - 1.0) + m * dH_dF * dF_dc
    # exponents: eps1 also appears in the outer power H = F^(eps1/2)
    with np.errstate(divide="ignore", invalid="ignore"):
        lnF = np.where(F > _F_FLOOR, np.log(F), 0.0)
    J[:, 3] = m * (0.5 * H * lnF + dH_dF * dF_de1)
    J[:, 4] = m * dH_dF * dF_de2
    # center: dF/dt = -(R g)
    J[:, 5:8] = -(m * dH_dF)[:, None] * (g @ R.T)
    # rotation vector: dF/dtheta_k = d . (dR/dtheta_k @ g)
    dR = rotation_derivatives(shape.theta)
    for k in range(3):
        J[:, 8 + k] = (m * dH_dF) * np.einsum("ni,ni->n", d, g @ dR[k].T)
    return r, J


def _signed_pow(base: np.ndarray, e: float) -> np.ndarray:
    return np.sign(base) * np.abs(base) ** e


def surface_points_param(shape: Superellipsoid, eta: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Canonical-frame surface points of the standard parametric form."""
    ce = _signed_pow(np.cos(eta), shape.eps1)
    se = _signed_pow(np.sin(eta), shape.eps1)
    return np.column_stack(
        [
            shape.a * ce * _signed_pow(np.cos(omega), shape.eps2),
            shape.b * ce * _signed_pow(np.sin(omega), shape.eps2),
            shape.c * se,
        ]
    )


def _area_element(shape: Superellipsoid, eta: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """|d_eta x d_omega| of the parametric map, by central differences."""
    h = 1e-5
    p_eta = surface_points_param(shape, eta + h, omega) - surface_points_param(shape, eta - h, omega)
    p_om = surface_points_param(shape, eta, omega + h) - surface_points_param(shape, eta, omega - h)
    return np.linalg.norm(np.cross(p_eta / (2 * h), p_om / (2 * h)), axis=1)


def sample_surface(
    shape: Superellipsoid,
    n: int,
    rng: np.random.Generator,
    world_frame: bool = True,
) -> np.ndarray:
    """Near-uniform surface samples via rejection on the local area element.

    The area element is unbounded along the edge lines for small exponents, so
    the acceptance bound is capped at a high percentile of a coarse scan; the
    residual bias only thins the extreme edge concentration.
    """
    if n <= 0:
        raise ValueError("need n >= 1 samples")
    scan_eta = np.linspace(-np.pi / 2 + 1e-3, np.pi / 2 - 1e-3, 48)
    scan_om = np.linspace(-np.pi, np.pi, 96, endpoint=False)
    ee, oo = np.meshgrid(scan_eta, scan_om)
    areas = _area_element(shape, ee.ravel(), oo.ravel())
    cap = float(np.percentile(areas, 99.5)) * 2.0
    cap = max(cap, 1e-12)

    out = np.empty((0, 3))
    while out.shape[0] < n:
        batch = max(4 * (n - out.shape[0]), 256)
        eta = rng.uniform(-np.pi / 2, np.pi / 2, batch)
        omega = rng.uniform(-np.pi, np.pi, batch)
        area = np.minimum(_area_element(shape, eta, omega), cap)
        keep = rng.uniform(0.0, cap, batch) < area
        out = np.vstack([out, surface_points_param(shape, eta[keep], omega[keep])])
    out = out[:n]
    if world_frame:
        return shape.pose().apply(out)
    return out


def surface_normals(points_c, shape: Superellipsoid) -> np.ndarray:
    """Outward (unnormalized) normals grad F at canonical-frame points."""
    p = as_points(points_c)
    a, b, c, e1, e2 = shape.a, shape.b, shape.c, shape.eps1, shape.eps2
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    u = np.abs(x / a) ** (2.0 / e2)
    v = np.abs(y / b) ** (2.0 / e2)
    w = np.abs(z / c) ** (2.0 / e1)
    S = u + v
    S_pos = S > _F_FLOOR
    S_safe = np.where(S_pos, S, 1.0)
    dG_dS = np.where(S_pos, (e2 / e1) * S_safe ** (e2 / e1 - 1.0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        du_dx = np.where(u > 0, (2.0 / e2) * u / np.where(x != 0, x, 1.0), 0.0)
        dv_dy = np.where(v > 0, (2.0 / e2) * v / np.where(y != 0, y, 1.0), 0.0)
        dw_dz = np.where(w > 0, (2.0 / e1) * w / np.where(z != 0, z, 1.0), 0.0)
    return np.column_stack([dG_dS * du_dx, dG_dS * dv_dy, dw_dz])
