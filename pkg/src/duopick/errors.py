"""Domain error taxonomy shared across the stack.

Every error a caller is expected to handle derives from DomainError, so CLI
dispatch can map them to exit code 1 uniformly.
"""

from __future__ import annotations


class DomainError(Exception):
    """Base class for recoverable, domain-level failures."""


class EmptyCloud(DomainError):
    """A point cloud that must be non-empty is empty."""


class DegenerateAxis(DomainError):
    """Axis vector too short to define a direction."""


class ParallelReference(DomainError):
    """Frame reference vector is (anti)parallel to the primary axis."""


class TooFewPoints(DomainError):
    """Cloud has fewer points than the fitting floor."""


class SolverDiverged(DomainError):
    """Nonlinear solve produced a non-finite cost."""


class NoSolution(DomainError):
    """Inverse kinematics failed after the restart budget."""


class NoFeasibleGrasp(DomainError):
    """Every grasp candidate was infeasible."""


class NoTarget(DomainError):
    """No detection survived the reachability filter."""


class CaptureMiss(DomainError):
    """Fruit center ended up outside the gripper capture window."""


class CutMiss(DomainError):
    """Blade passed the peduncle beyond the detach tolerance."""


class StartInCollision(DomainError):
    """Planner start configuration collides with the scene."""


class GoalInCollision(DomainError):
    """Planner goal configuration collides with the scene."""


class NoPathFound(DomainError):
    """Planner exhausted its budget without reaching the goal."""


class CartesianFraction(DomainError):
    """Straight-line plan covered only a fraction of the segment.

    Attributes:
        fraction: achieved fraction in [0, 1).
        trajectory: partial trajectory up to the failure point (may be None).
    """

    def __init__(self, fraction: float, trajectory=None, reason: str = ""):
        self.fraction = float(fraction)
        self.trajectory = trajectory
        msg = f"cartesian plan achieved only {self.fraction:.3f} of the segment"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class EmptyView(DomainError):
    """Nothing of the target is visible from the camera."""


class ConfigError(DomainError):
    """Invalid or unknown configuration input."""


class PortInUse(DomainError):
    """Requested server port is already bound."""


class UnsupportedPair(DomainError):
    """Collision query between body types we do not support."""
