"""Coarse-to-fine fruit pose estimation.

Coarse stage: position from the fruit centroid, orientation from the
fruit-to-peduncle axis with the optical-center reference. Fine stage: a
bounded trust-region least-squares fit of the superellipsoid (with center and
isotropy priors), then the orientation is rebuilt from the peduncle centroid
to the refined center.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator

from .errors import DegenerateAxis, SolverDiverged, TooFewPoints
from .geometry import PointCloud, RigidTransform, as_points, as_vec3, centroid, frame_with_fallback
from .superellipsoid import (
    N_PARAMS,
    SCALE_SMOOTHING,
    Superellipsoid,
    canonical_coords,
    implicit_value,
    residual_jacobian,
    residuals,
)


class Stage(enum.Enum):
    COARSE = "coarse"
    FINE = "fine"


@dataclass
class PoseEstimate:
    """SE(3) fruit pose with its confidence stage and, when fine, the shape."""

    transform: RigidTransform
    stage: Stage
    shape: Optional[Superellipsoid] = None

    def __post_init__(self):
        if self.stage is Stage.FINE and self.shape is None:
            raise ValueError("fine pose requires the fitted shape")

    @property
    def position(self) -> np.ndarray:
        return self.transform.translation

    @property
    def axis(self) -> np.ndarray:
        """Stem-axis direction (z column of the rotation)."""
        return self.transform.rotation[:, 2]


@dataclass
class FitConfig:
    """Weights, budget, and box bounds for the superellipsoid solve."""

    lambda_c: float = 10.0     # center prior weight, 1/m^2
    lambda_s: float = 1e-3     # isotropy prior weight
    max_iters: int = 200
    tol: float = 1e-10         # relative cost change
    min_points: int = 20
    axis_bounds: tuple = (0.01, 0.15)
    eps_bounds: tuple = (0.101, 1.899)
    center_radius: float = 0.10  # box half-width around t_init, meters
    theta_bound: float = math.pi
    # restart exponent seeds tried (in order) when a solve stalls above the
    # per-point cost floor; the spherical start always runs first
    eps_restarts: tuple = ((0.5, 0.5), (0.5, 1.4), (1.4, 0.5), (1.4, 1.4))
    restart_cost_floor: float = 1e-10  # cost / n_points below this = converged
    verbose: int = 0

    def __post_init__(self):
        if self.lambda_c < 0 or self.lambda_s < 0:
            raise ValueError("regularizer weights must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def coarse_pose(fruit: PointCloud, peduncle: PointCloud, view_origin=None) -> PoseEstimate:
    """Centroid-based pose: t at the fruit centroid, z along fruit->peduncle.

    view_origin is the optical center expressed in the clouds' frame (defaults
    to the origin, i.e. camera-frame clouds); the frame reference is the
    vector from it to the fruit centroid, with the deterministic up/x fallback
    when that reference is parallel to the axis.
    """
    c_f = centroid(fruit.require_nonempty())
    c_p = centroid(peduncle.require_nonempty())
    v = c_p - c_f
    origin = np.zeros(3) if view_origin is None else as_vec3(view_origin, "view_origin")
    R = frame_with_fallback(v, c_f - origin)
    return PoseEstimate(RigidTransform(R, c_f), Stage.COARSE)


def _solver_residuals(x, pts, t_init, cfg):
    shape = Superellipsoid.from_params(x)
    rows = [residuals(pts, shape, signed=True)]
    if cfg.lambda_c > 0:
        rows.append(math.sqrt(cfg.lambda_c) * (x[5:8] - t_init))
    if cfg.lambda_s > 0:
        a, b, c = x[0], x[1], x[2]
        q = (a - b) ** 2 + (b - c) ** 2 + (c - a) ** 2
        rows.append(np.array([math.sqrt(cfg.lambda_s) * (q + SCALE_SMOOTHING) ** 0.25]))
    return np.concatenate(rows)


def _solver_jacobian(x, pts, t_init, cfg):
    shape = Superellipsoid.from_params(x)
    _, J = residual_jacobian(pts, shape)
    blocks = [J]
    if cfg.lambda_c > 0:
        Jc = np.zeros((3, N_PARAMS))
        Jc[:, 5:8] = math.sqrt(cfg.lambda_c) * np.eye(3)
        blocks.append(Jc)
    if cfg.lambda_s > 0:
        a, b, c = x[0], x[1], x[2]
        q = (a - b) ** 2 + (b - c) ** 2 + (c - a) ** 2
        # rho = sqrt(lambda_s) * (q + s)^(1/4); drho/dq = rho / (4 (q + s))
        rho = math.sqrt(cfg.lambda_s) * (q + SCALE_SMOOTHING) ** 0.25
        f = rho / (4.0 * (q + SCALE_SMOOTHING))
        Js = np.zeros((1, N_PARAMS))
        Js[0, 0] = f * (2 * (a - b) + 2 * (a - c))
        Js[0, 1] = f * (2 * (b - a) + 2 * (b - c))
        Js[0, 2] = f * (2 * (c - a) + 2 * (c - b))
        blocks.append(Js)
    return np.vstack(blocks)


def fit_superellipsoid(fruit: PointCloud, init: PoseEstimate, cfg: FitConfig = None) -> Superellipsoid:
    """Trust-region-reflective fit of the full shape+pose parameter set.

    Initialization: semi-axes at the mean centroid distance, spherical
    exponents, pose from the coarse estimate. The accepted-step cost sequence
    is non-increasing by construction of the solver; pass cfg.verbose=2 to
    have it printed.
    """
    cfg = cfg or FitConfig()
    pts = fruit.require_nonempty().points
    if pts.shape[0] < cfg.min_points:
        raise TooFewPoints(f"{pts.shape[0]} points < floor {cfg.min_points}")
    if init.stage is not Stage.COARSE:
        raise ValueError("fit initialization must be a coarse pose")

    t_init = init.transform.translation.copy()
    r0 = float(np.mean(np.linalg.norm(pts - t_init, axis=1)))
    lo_ax, hi_ax = cfg.axis_bounds
    a0 = float(np.clip(r0, lo_ax, hi_ax))
    theta0 = init.transform.rotvec()

    lo = np.concatenate(
        [
            [lo_ax] * 3,
            [cfg.eps_bounds[0]] * 2,
            t_init - cfg.center_radius,
            [-cfg.theta_bound] * 3,
        ]
    )
    hi = np.concatenate(
        [
            [hi_ax] * 3,
            [cfg.eps_bounds[1]] * 2,
            t_init + cfg.center_radius,
            [cfg.theta_bound] * 3,
        ]
    )

    def solve(eps_pair):
        x0 = np.concatenate([[a0, a0, a0], eps_pair, t_init, theta0])
        x0 = np.clip(x0, lo + 1e-12, hi - 1e-12)
        return least_squares(
            _solver_residuals,
            x0,
            jac=_solver_jacobian,
            bounds=(lo, hi),
            method="trf",
            ftol=cfg.tol,
            xtol=1e-14,
            gtol=1e-14,
            max_nfev=cfg.max_iters,
            verbose=cfg.verbose,
            args=(pts, t_init, cfg),
        )

    best = solve((1.0, 1.0))
    restarts = 0
    floor = cfg.restart_cost_floor * pts.shape[0]
    if best.cost > floor:
        for eps_pair in cfg.eps_restarts:
            res = solve(eps_pair)
            restarts += 1
            if res.cost < best.cost:
                best = res
            if best.cost <= floor:
                break
    if not np.all(np.isfinite(best.x)) or not np.isfinite(best.cost):
        raise SolverDiverged(f"non-finite solve state (status {best.status})")
    shape = Superellipsoid.from_params(best.x)
    shape.fit_report = {
        "cost": float(best.cost),
        "nfev": int(best.nfev),
        "njev": int(best.njev or 0),
        "status": int(best.status),
        "restarts": restarts,
    }
    return shape


def final_pose(peduncle: PointCloud, fitted: Superellipsoid, view_origin=None) -> PoseEstimate:
    """Rebuild the frame from the peduncle centroid to the refined center."""
    c_p = centroid(peduncle.require_nonempty())
    v = c_p - fitted.t
    if np.linalg.norm(v) <= 1e-6:
        raise DegenerateAxis("peduncle centroid coincides with the refined center")
    origin = np.zeros(3) if view_origin is None else as_vec3(view_origin, "view_origin")
    R = frame_with_fallback(v, fitted.t - origin)
    return PoseEstimate(RigidTransform(R, fitted.t.copy()), Stage.FINE, shape=fitted)


class SuperellipsoidEstimator(BaseEstimator):
    """sklearn-style wrapper around the coarse-to-fine fit.

    fit(X, peduncle=...) runs the full pipeline on an (N, 3) fruit cloud;
    predict returns implicit values (1.0 on the fitted surface), transform
    maps points into the fitted canonical frame, and score_samples returns
    negated residual distances.
    """

    def __init__(
        self,
        lambda_c: float = 10.0,
        lambda_s: float = 1e-3,
        max_iters: int = 200,
        tol: float = 1e-10,
        min_points: int = 20,
        axis_bounds: tuple = (0.01, 0.15),
        eps_bounds: tuple = (0.101, 1.899),
        center_radius: float = 0.10,
    ):
        self.lambda_c = lambda_c
        self.lambda_s = lambda_s
        self.max_iters = max_iters
        self.tol = tol
        self.min_points = min_points
        self.axis_bounds = axis_bounds
        self.eps_bounds = eps_bounds
        self.center_radius = center_radius

    def _config(self) -> FitConfig:
        return FitConfig(
            lambda_c=self.lambda_c,
            lambda_s=self.lambda_s,
            max_iters=self.max_iters,
            tol=self.tol,
            min_points=self.min_points,
            axis_bounds=tuple(self.axis_bounds),
            eps_bounds=tuple(self.eps_bounds),
            center_radius=self.center_radius,
        )

    def fit(self, X, y=None, peduncle=None, view_origin=None):
        fruit = X if isinstance(X, PointCloud) else PointCloud(as_points(X, "X"), "sensor")
        if peduncle is not None and not isinstance(peduncle, PointCloud):
            peduncle = PointCloud(as_points(peduncle, "peduncle"), fruit.frame)
        if peduncle is not None:
            init = coarse_pose(fruit, peduncle, view_origin=view_origin)
        else:
            init = PoseEstimate(RigidTransform(np.eye(3), centroid(fruit.require_nonempty())), Stage.COARSE)
        self.coarse_ = init
        self.shape_ = fit_superellipsoid(fruit, init, self._config())
        if peduncle is not None:
            self.pose_ = final_pose(peduncle, self.shape_, view_origin=view_origin)
        else:
            self.pose_ = PoseEstimate(self.shape_.pose(), Stage.FINE, shape=self.shape_)
        self.fit_report_ = self.shape_.fit_report
        return self

    def _check_fitted(self):
        if not hasattr(self, "shape_"):
            raise RuntimeError("estimator is not fitted")

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        pts = X.points if isinstance(X, PointCloud) else as_points(X, "X")
        return implicit_value(canonical_coords(pts, self.shape_), self.shape_)

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        pts = X.points if isinstance(X, PointCloud) else as_points(X, "X")
        return canonical_coords(pts, self.shape_)

    def score_samples(self, X) -> np.ndarray:
        self._check_fitted()
        pts = X.points if isinstance(X, PointCloud) else as_points(X, "X")
        return -residuals(pts, self.shape_)
