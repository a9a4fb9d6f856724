"""Motion planning: scenes with the division wall, RRT*, Cartesian moves."""

from .cartesian import plan_cartesian
from .costs import motion_cost
from .rrt import PlannerConfig, plan_rrt_star
from .scene import (
    PlanningScene,
    Workspace,
    clear_division_wall,
    load_scene,
    scene_from_dict,
    scene_to_dict,
    set_division_wall,
)
from .trajectory import (
    Trajectory,
    interpolate_path,
    min_clearance,
    trajectory_from_dict,
    trajectory_to_dict,
    validate_trajectory,
)

__all__ = [
    "PlannerConfig",
    "PlanningScene",
    "Trajectory",
    "Workspace",
    "clear_division_wall",
    "interpolate_path",
    "load_scene",
    "min_clearance",
    "motion_cost",
    "plan_cartesian",
    "plan_rrt_star",
    "scene_from_dict",
    "scene_to_dict",
    "set_division_wall",
    "trajectory_from_dict",
    "trajectory_to_dict",
    "validate_trajectory",
]
