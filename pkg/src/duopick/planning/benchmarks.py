"""Benchmark scene where joint-space shortest paths wind in task space.

A planar 3R arm must move between mirrored folded postures. The joint-space
geodesic sweeps the shoulder through 4.4 rad, dragging the end effector along
a wide arc that a box obstacle interrupts; compact elbow-folded routes cost
more joint motion but far less end-effector travel. Weighting the edge metric
with the task-space term steers the planner toward the compact routes.
"""

from __future__ import annotations

import numpy as np

from ..arm import chain_from_dict
from ..collision import Box
from .scene import PlanningScene, Workspace


def wrap_chain():
    """Planar 3R arm, links 0.6/0.5/0.4, all joints about z."""
    return chain_from_dict(
        {
            "joints": [
                {"axis": [0, 0, 1], "origin": {"t": [0, 0, 0]}, "limits": [-2.95, 2.95]},
                {"axis": [0, 0, 1], "origin": {"t": [0.6, 0, 0]}, "limits": [-2.95, 2.95]},
                {"axis": [0, 0, 1], "origin": {"t": [0.5, 0, 0]}, "limits": [-2.95, 2.95]},
            ],
            "ee_offset": {"t": [0.4, 0, 0]},
            "link_radii": [0.03, 0.03, 0.03, 0.03],
        }
    )


def wrap_scene():
    """(chain, scene, q_start, q_goal) for the wrap-around benchmark.

    The box interrupts the stretched-out midpoint of the joint-space
    geodesic, so every route either hugs a wide end-effector arc or folds
    the elbow for a compact crossing.
    """
    chain = wrap_chain()
    ws = Workspace(np.array([-1.7, -1.7, -0.6]), np.array([1.7, 1.7, 0.6]))
    box = Box(center=np.array([1.35, 0.0, 0.0]), half=np.array([0.12, 0.12, 0.5]))
    scene = PlanningScene(workspace=ws, bodies=[box])
    q_start = np.array([2.2, 0.7, 0.7])
    q_goal = np.array([-2.2, -0.7, -0.7])
    return chain, scene, q_start, q_goal


def wrap_benchmark(lambda_fk, seeds=range(20)):
    """Median task-space path length over seeded planner runs.

    Runs the wrap-around scene once per seed with the given task-space
    weight and returns (median_task_length, per_seed_lengths). Fixed
    iteration budget keeps results reproducible across machines.
    """
    from .rrt import PlannerConfig, plan_rrt_star

    chain, scene, q_start, q_goal = wrap_scene()
    lengths = []
    for seed in seeds:
        cfg = PlannerConfig(
            seed=seed,
            lambda_fk=lambda_fk,
            max_iterations=1200,
            time_budget_s=120.0,
        )
        traj = plan_rrt_star(scene, chain, q_start, q_goal, cfg)
        lengths.append(traj.task_length(chain))
    lengths = np.asarray(lengths)
    return float(np.median(lengths)), lengths
