"""The planner's weighted edge cost."""

from __future__ import annotations

import numpy as np

from ..arm import KinematicChain


def motion_cost(chain: KinematicChain, s_a, s_b, lambda_fk: float = 1.0) -> float:
    """Joint-space distance plus weighted end-effector translation distance.

    cost = ||s_a - s_b||_2 + lambda_fk * ||FK(s_a) - FK(s_b)||_2, translation
    part only. With lambda_fk = 0 this is exactly the joint-space metric.
    """
    s_a = np.asarray(s_a, dtype=float)
    s_b = np.asarray(s_b, dtype=float)
    if not (np.all(np.isfinite(s_a)) and np.all(np.isfinite(s_b))):
        raise ValueError("configs must be finite")
    if lambda_fk < 0:
        raise ValueError("lambda_fk must be >= 0")
    joint = float(np.linalg.norm(s_a - s_b))
    if lambda_fk == 0.0:
        return joint
    ee = chain.ee_positions(np.vstack([s_a, s_b]))
    return joint + lambda_fk * float(np.linalg.norm(ee[0] - ee[1]))


def motion_cost_batch(ee_positions_a, q_a, ee_position_b, q_b, lambda_fk: float) -> np.ndarray:
    """Vectorized cost from many tree nodes to one config (FK precomputed)."""
    joint = np.linalg.norm(q_a - q_b[None, :], axis=1)
    if lambda_fk == 0.0:
        return joint
    task = np.linalg.norm(ee_positions_a - ee_position_b[None, :], axis=1)
    return joint + lambda_fk * task
