"""Dual-arm harvest executive.

Runs one harvest attempt as a fixed state graph: pick the most central
reachable target, move both arms to pre-grasp standoffs behind a division
wall, refine the fruit pose from the wrist cameras, approach, grasp and cut,
retract, then store the fruit while the cutter returns home.

Scheduling overlaps one arm's execution with the other arm's planning; the
two executions themselves never overlap, so each plan only needs the other
arm frozen at a known configuration. Time is simulated deterministically
from planner statistics and path lengths, which keeps seeded trials
byte-reproducible.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .arm import inverse_kinematics
from .errors import (
    CaptureMiss,
    CutMiss,
    DomainError,
    NoFeasibleGrasp,
    NoPathFound,
    NoSolution,
    NoTarget,
)
from .estimator import PoseEstimate, Stage, coarse_pose, final_pose, fit_superellipsoid
from .geometry import PointCloud, RigidTransform, frame_with_fallback, unit
from .grasp import (
    GraspCircle,
    GraspConfig,
    Tool,
    candidate_pose,
    circle_basis,
    generate_candidates,
)
from .planning import (
    PlannerConfig,
    PlanningScene,
    Trajectory,
    clear_division_wall,
    plan_cartesian,
    plan_rrt_star,
    set_division_wall,
)
from .sim.camera import DEFAULT_INTRINSICS, render_partial_cloud
from .sim.scene import (
    CUTTER,
    GRIPPER,
    JOINT_SPEED,
    ROW_CENTER,
    STORAGE_POSE,
    WALL_CLIP,
    fruit_in_bin,
)
from .sim.world import NoiseModel, apply_cut

logger = logging.getLogger(__name__)

STANDOFF = 0.20           # pre-grasp distance from the fruit center
CUTTER_LIFT = 0.05        # raises the cutter camera to see the peduncle
PLUNGE = 0.08             # length of the final straight approach segment
BLADE_REACH = 0.10        # blade midpoint ahead of the cutter flange
BLADE_HALF = 0.05         # half length of the cut segment
CAPTURE_DEPTH = (0.02, 0.12)   # fruit center depth window along the approach
CAPTURE_LATERAL = 0.035        # fruit center offset from the approach axis
DEFAULT_FRUIT_RADIUS = 0.035   # stand-in radius before a shape is fitted
DEFAULT_FRUIT_HALF_HEIGHT = 0.05
FINE_NOISE_RATIO = 0.4    # fine pose sigma as a fraction of the coarse sigma


class HarvestStage(enum.Enum):
    HOME = "Home"
    MOVE_TO_PREGRASP = "MoveToPreGrasp"
    FINE_POSE = "FinePoseAcquisition"
    MOVE_TO_GRASP = "MoveToGrasp"
    GRASP_AND_CUT = "GraspAndCut"
    RETRACT = "Retract"
    MOVE_TO_STORAGE = "MoveToStorage"
    DONE = "Done"
    FAILED = "Failed"


# Exhaustive transition graph; FAILED is reachable from every live stage
# except the terminal pair, and the nominal path is a single chain.
TRANSITIONS = {
    HarvestStage.HOME: (HarvestStage.MOVE_TO_PREGRASP, HarvestStage.FAILED),
    HarvestStage.MOVE_TO_PREGRASP: (HarvestStage.FINE_POSE, HarvestStage.FAILED),
    HarvestStage.FINE_POSE: (HarvestStage.MOVE_TO_GRASP, HarvestStage.FAILED),
    HarvestStage.MOVE_TO_GRASP: (HarvestStage.GRASP_AND_CUT, HarvestStage.FAILED),
    HarvestStage.GRASP_AND_CUT: (HarvestStage.RETRACT, HarvestStage.FAILED),
    HarvestStage.RETRACT: (HarvestStage.MOVE_TO_STORAGE, HarvestStage.FAILED),
    HarvestStage.MOVE_TO_STORAGE: (HarvestStage.DONE, HarvestStage.FAILED),
    HarvestStage.DONE: (),
    HarvestStage.FAILED: (),
}


class FailureReason(enum.Enum):
    CUTTER_OFFSET = "CutterOffset"
    STORAGE_TIMEOUT = "StorageTimeout"
    GRASP_FAILURE = "GraspFailure"
    POSE_OUT_OF_WORKSPACE = "PoseOutOfWorkspace"
    NO_FEASIBLE_GRASP = "NoFeasibleGrasp"
    PLANNING_FAILURE = "PlanningFailure"


@dataclass
class TargetSelection:
    detections: list
    reachable: list
    chosen: int

    def __post_init__(self):
        if self.chosen not in self.reachable:
            raise ValueError("chosen target must be in the reachable subset")


@dataclass
class HarvestLog:
    """One trial's outcome, per-stage simulated times, and key measurements."""

    outcome: str
    failure_reason: Optional[FailureReason]
    stage_times: dict
    total_time: float
    seed: int
    target_index: Optional[int] = None
    fruit_x: Optional[float] = None
    wall_x: Optional[float] = None
    cut_miss: Optional[float] = None
    drop_point: Optional[np.ndarray] = None
    stage_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.outcome not in ("success", "failure"):
            raise ValueError("outcome must be success or failure")
        if (self.outcome == "failure") != (self.failure_reason is not None):
            raise ValueError("failure reason exactly when the trial failed")
        if any(t < 0 for t in self.stage_times.values()):
            raise ValueError("stage times must be >= 0")
        total = sum(self.stage_times.values())
        if abs(total - self.total_time) > 0.01 * max(self.total_time, 1e-9):
            raise ValueError("stage times must sum to the total within 1%")

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "failure_reason": self.failure_reason.value if self.failure_reason else None,
            "stage_times": {k: round(v, 6) for k, v in self.stage_times.items()},
            "total_time": round(self.total_time, 6),
            "seed": self.seed,
            "target_index": self.target_index,
            "fruit_x": None if self.fruit_x is None else round(self.fruit_x, 6),
            "wall_x": self.wall_x,
            "cut_miss": None if self.cut_miss is None else round(self.cut_miss, 6),
            "drop_point": None if self.drop_point is None else [round(float(v), 6) for v in self.drop_point],
            "stage_history": [s.value for s in self.stage_history],
        }


def default_noise() -> NoiseModel:
    """Assumed field sensing noise: 5 mm coarse pose, 1 mm cloud points."""
    return NoiseModel(sigma_t=0.005, sigma_p=0.001)


@dataclass
class HarvestConfig:
    seed: int = 0
    policy: str = "parallel"              # or "sequential"
    noise: NoiseModel = field(default_factory=default_noise)
    grasp: GraspConfig = field(default_factory=GraspConfig)
    speed: float = JOINT_SPEED
    plan_iterations: int = 800
    plan_budget_s: float = 10.0
    storage_budget_s: float = 10.0
    lambda_fk: float = 1.0
    ik_steps: int = 40
    ik_restarts: int = 2
    # audit sink: when set, every executed trajectory is appended as
    # (stage, arm, trajectory, wall_x or None at execution time)
    trajectory_log: Optional[list] = None

    def __post_init__(self):
        if self.policy not in ("parallel", "sequential"):
            raise ValueError("policy must be parallel or sequential")
        if self.speed <= 0:
            raise ValueError("speed must be positive")

    def screen_solver(self) -> Callable:
        steps, restarts = self.ik_steps, self.ik_restarts
        def solve(chain, pose, seed, rng):
            return inverse_kinematics(chain, pose, seed, max_steps=steps,
                                      restarts=restarts, rng=rng)
        return solve


def plan_sim_time(traj: Trajectory) -> float:
    """Deterministic planning-time model from planner statistics."""
    effort = traj.stats.get("iterations", len(traj.waypoints))
    return 0.01 + 0.002 * float(effort)


def exec_sim_time(traj: Trajectory, speed: float = JOINT_SPEED) -> float:
    """Constant joint-velocity execution-time model."""
    if speed <= 0:
        raise ValueError("speed must be positive")
    return traj.joint_length() / speed


@dataclass
class ArmAction:
    """Deferred plan for one arm; the callable may use the other arm's result."""

    arm: str
    plan: Callable[[Optional[Trajectory]], Trajectory]


@dataclass
class PhaseTrace:
    """Plan/execute intervals for one two-arm phase on the simulated clock."""

    arm_a: str
    arm_b: str
    plan_a: tuple
    exec_a: tuple
    plan_b: Optional[tuple]
    exec_b: Optional[tuple]
    total: float
    parallel: bool

    def intervals(self, arm: str) -> list:
        if arm == self.arm_a:
            return [self.plan_a, self.exec_a]
        return [iv for iv in (self.plan_b, self.exec_b) if iv is not None]


class PhaseFailure(Exception):
    """One arm's plan failed; carries whatever completed before the join."""

    def __init__(self, cause: DomainError, traj_a: Optional[Trajectory], trace: PhaseTrace):
        self.cause = cause
        self.traj_a = traj_a
        self.trace = trace
        super().__init__(str(cause))


def parallel_plan_execute(
    action_a: ArmAction,
    action_b: ArmAction,
    parallel: bool = True,
    speed: float = JOINT_SPEED,
    wall_present: bool = False,
    disjoint: bool = False,
) -> tuple:
    """Schedule two plan+execute actions and return (traj_a, traj_b, trace).

    Parallel mode overlaps arm B's planning with arm A's execution; the two
    executions stay disjoint in time, so arm B executes against arm A parked
    at its final configuration. Requires the division wall (or explicitly
    disjoint actions) because arm B plans while arm A is in flight. Either
    arm's failure propagates after arm A's motion completes.
    """
    if parallel and not (wall_present or disjoint):
        raise ValueError("parallel phase needs the division wall or disjoint actions")

    traj_a = action_a.plan(None)
    p_a = plan_sim_time(traj_a)
    e_a = exec_sim_time(traj_a, speed)
    exec_a = (p_a, p_a + e_a)

    plan_b_start = p_a if parallel else p_a + e_a
    try:
        traj_b = action_b.plan(traj_a)
    except DomainError as err:
        trace = PhaseTrace(action_a.arm, action_b.arm, (0.0, p_a), exec_a,
                           None, None, total=exec_a[1], parallel=parallel)
        raise PhaseFailure(err, traj_a, trace) from err
    p_b = plan_sim_time(traj_b)
    e_b = exec_sim_time(traj_b, speed)
    plan_b = (plan_b_start, plan_b_start + p_b)
    exec_b_start = max(exec_a[1], plan_b[1])
    exec_b = (exec_b_start, exec_b_start + e_b)
    trace = PhaseTrace(action_a.arm, action_b.arm, (0.0, p_a), exec_a,
                       plan_b, exec_b, total=exec_b[1], parallel=parallel)
    return traj_a, traj_b, trace


def _horizontal_bearing(p_from, p_to) -> np.ndarray:
    v = np.array([p_to[0] - p_from[0], p_to[1] - p_from[1], 0.0])
    return unit(v)


def approach_directions(scene: PlanningScene) -> dict:
    """Fixed per-arm approach bearings: base toward the crop-row center.

    Using a rig constant rather than the fruit position keeps the pre-grasp
    poses translation-equivariant in the target.
    """
    return {
        name: _horizontal_bearing(chain.base.translation, ROW_CENTER)
        for name, chain in scene.arms.items()
    }


def pregrasp_poses(target: PoseEstimate, scene: PlanningScene,
                   standoff: float = STANDOFF, cutter_lift: float = CUTTER_LIFT) -> tuple:
    """Standoff poses facing the fruit along each arm's fixed approach bearing.

    The bearings depend only on the rig, so translating the fruit translates
    both poses by the same vector.
    """
    bearings = approach_directions(scene)
    out = []
    for name, lift in ((GRIPPER, 0.0), (CUTTER, cutter_lift)):
        d = bearings[name]
        p = target.position - standoff * d + np.array([0.0, 0.0, lift])
        R = frame_with_fallback(d, reference=np.array([0.0, 0.0, 1.0]))
        out.append(RigidTransform(R, p))
    return tuple(out)


def _level_circle(center: np.ndarray, radius: float) -> GraspCircle:
    """Vertical-axis approach circle: level wrist poses for any fruit tilt."""
    axis = np.array([0.0, 0.0, 1.0])
    u1, u2 = circle_basis(axis)
    return GraspCircle(np.asarray(center, float).copy(), axis, radius, u1, u2)


def _coarse_circles(position: np.ndarray) -> tuple:
    """Grasp and cut circles for an unfitted detection, using default radii."""
    cfg = GraspConfig()
    gr = _level_circle(position, DEFAULT_FRUIT_RADIUS + cfg.clearance)
    cut_center = position + np.array(
        [0.0, 0.0, DEFAULT_FRUIT_HALF_HEIGHT + cfg.cutter_offset + 0.01])
    cut = _level_circle(cut_center, cfg.cutter_radius)
    return gr, cut


def _bearing_theta(circle: GraspCircle, bearing: np.ndarray) -> float:
    """Circle angle whose inward approach direction best matches the bearing."""
    return float(np.arctan2(-np.dot(bearing, circle.u2), -np.dot(bearing, circle.u1)))


def select_target(detections, scene: PlanningScene, cfg: HarvestConfig = None) -> TargetSelection:
    """Keep detections both arms can reach; pick the most central one.

    Reachable means: inside the workspace, pre-grasp IK solves for both arms,
    the gripper solves IK for at least one grasp-circle candidate, and the
    cutter solves IK for its bearing-aligned cut pose. Ties break toward the
    lower index.
    """
    cfg = cfg or HarvestConfig()
    solver = cfg.screen_solver()
    ws = scene.workspace
    reachable = []
    for i, det in enumerate(detections):
        p = det.position
        if not (np.all(p >= ws.lo) and np.all(p <= ws.hi)):
            continue
        try:
            pg_g, pg_c = pregrasp_poses(det, scene)
            q_g = inverse_kinematics(scene.arms[GRIPPER], pg_g, scene.home[GRIPPER],
                                     max_steps=60, restarts=6,
                                     rng=np.random.default_rng(1000 + i))
            q_c = inverse_kinematics(scene.arms[CUTTER], pg_c, scene.home[CUTTER],
                                     max_steps=60, restarts=6,
                                     rng=np.random.default_rng(2000 + i))
        except NoSolution:
            continue
        gr, cut = _coarse_circles(p)
        probes = (
            (GRIPPER, gr, Tool.GRIPPER, q_g, 3000),
            (CUTTER, cut, Tool.CUTTER, q_c, 4000),
        )
        ok = True
        for name, circle, tool, q_seed, salt in probes:
            base_t = scene.arms[name].base.translation
            theta0 = _bearing_theta(circle, _horizontal_bearing(base_t, p))
            thetas = theta0 + 2.0 * np.pi * np.arange(16) / 16
            order = np.argsort(np.abs(np.angle(np.exp(1j * (thetas - theta0)))))
            solved = False
            for k in order:
                pose = candidate_pose(circle, float(thetas[k]), tool)
                try:
                    solver(scene.arms[name], pose, q_seed,
                           rng=np.random.default_rng(salt + 16 * i + int(k)))
                    solved = True
                    break
                except NoSolution:
                    continue
            if not solved:
                ok = False
                break
        if ok:
            reachable.append(i)
    if not reachable:
        raise NoTarget("no detection is reachable by both arms")
    center = ws.center
    dists = [np.linalg.norm(detections[i].position - center) for i in reachable]
    chosen = reachable[int(np.argmin(dists))]
    return TargetSelection(list(detections), reachable, chosen)


def _reverse(traj: Trajectory) -> Trajectory:
    return Trajectory(traj.waypoints[::-1].copy(), traj.cost,
                      {"iterations": 0, "reversed": True})


class _Run:
    """Mutable state for one harvest attempt."""

    def __init__(self, scene, arms, detections, cfg, world):
        self.scene = scene.snapshot()
        self.arms = arms
        self.cfg = cfg
        self.world = world
        self.detections = list(detections)
        self.rng = np.random.default_rng(cfg.seed)
        self.q = {name: scene.home[name].copy() for name in arms}
        self.times = {}
        self.history = [HarvestStage.HOME]
        self.selection = None
        self.fine = None
        self.ped_centroid = None
        self.grasp_best = None
        self.cut_best = None
        self.approach = {}
        self.pregrasp_q = {}
        self.grab = None
        self.cut_miss = None
        self.drop = None
        self.wall_x = None

    def charge(self, stage: HarvestStage, dt: float) -> None:
        key = stage.value
        self.times[key] = self.times.get(key, 0.0) + float(dt)

    def plan_cfg(self, seed_offset: int, budget: float = None) -> PlannerConfig:
        return PlannerConfig(
            seed=self.cfg.seed * 131 + seed_offset,
            lambda_fk=self.cfg.lambda_fk,
            max_iterations=self.cfg.plan_iterations,
            time_budget_s=self.cfg.plan_budget_s if budget is None else budget,
        )

    def other_arm_bodies(self, moving: str) -> list:
        other = CUTTER if moving == GRIPPER else GRIPPER
        return self.arms[other].link_bodies(self.q[other])

    def record(self, stage, arm, traj) -> None:
        if self.cfg.trajectory_log is not None:
            wall = None if self.scene.wall is None else self.wall_x
            self.cfg.trajectory_log.append((stage.value, arm, traj, wall))

    def phase(self, stage, action_a, action_b, disjoint=False):
        wall = self.scene.wall is not None
        try:
            traj_a, traj_b, trace = parallel_plan_execute(
                action_a, action_b, parallel=self.cfg.policy == "parallel",
                speed=self.cfg.speed, wall_present=wall, disjoint=disjoint)
        except PhaseFailure as err:
            self.charge(stage, err.trace.total)
            if err.traj_a is not None:
                self.q[action_a.arm] = err.traj_a.end.copy()
                self.record(stage, action_a.arm, err.traj_a)
            raise err.cause
        self.charge(stage, trace.total)
        self.q[action_a.arm] = traj_a.end.copy()
        self.q[action_b.arm] = traj_b.end.copy()
        self.record(stage, action_a.arm, traj_a)
        self.record(stage, action_b.arm, traj_b)
        return traj_a, traj_b, trace


def run_harvest(scene: PlanningScene, arms: dict, detections, cfg: HarvestConfig = None,
                world=None) -> HarvestLog:
    """Execute one harvest attempt and return its log.

    Planner and grasp failures become structured failure reasons, never
    exceptions; on failure both arms are sent home with the wall cleared.
    """
    cfg = cfg or HarvestConfig()
    run = _Run(scene, arms, detections, cfg, world)
    stage = HarvestStage.HOME
    reason = None
    handlers = {
        HarvestStage.HOME: _stage_home,
        HarvestStage.MOVE_TO_PREGRASP: _stage_pregrasp,
        HarvestStage.FINE_POSE: _stage_fine_pose,
        HarvestStage.MOVE_TO_GRASP: _stage_grasp_approach,
        HarvestStage.GRASP_AND_CUT: _stage_grasp_and_cut,
        HarvestStage.RETRACT: _stage_retract,
        HarvestStage.MOVE_TO_STORAGE: _stage_storage,
    }
    while stage not in (HarvestStage.DONE, HarvestStage.FAILED):
        try:
            nxt = handlers[stage](run, stage)
        except DomainError as err:
            reason = classify_failure(stage, err)
            logger.info("stage %s failed: %s -> %s", stage.value, err, reason.value)
            nxt = HarvestStage.FAILED
        if nxt not in TRANSITIONS[stage]:
            raise RuntimeError(f"undefined transition {stage.value} -> {nxt.value}")
        run.history.append(nxt)
        stage = nxt
    if stage is HarvestStage.FAILED and run.history[1:] != [HarvestStage.FAILED]:
        _abort_home(run)
    total = sum(run.times.values())
    fruit_x = None
    if run.selection is not None:
        fruit_x = float(run.detections[run.selection.chosen].position[0])
    return HarvestLog(
        outcome="success" if stage is HarvestStage.DONE else "failure",
        failure_reason=reason,
        stage_times=run.times,
        total_time=total,
        seed=cfg.seed,
        target_index=None if run.selection is None else run.selection.chosen,
        fruit_x=fruit_x,
        wall_x=run.wall_x,
        cut_miss=run.cut_miss,
        drop_point=run.drop,
        stage_history=run.history,
    )


def classify_failure(stage: HarvestStage, err: DomainError) -> FailureReason:
    """Map a stage's domain error to the structured failure reason."""
    if isinstance(err, CaptureMiss):
        return FailureReason.GRASP_FAILURE
    if isinstance(err, CutMiss):
        return FailureReason.CUTTER_OFFSET
    if isinstance(err, (NoTarget, NoFeasibleGrasp)):
        return FailureReason.NO_FEASIBLE_GRASP
    if stage is HarvestStage.FINE_POSE:
        return FailureReason.POSE_OUT_OF_WORKSPACE
    if stage is HarvestStage.MOVE_TO_STORAGE and isinstance(err, NoPathFound):
        return FailureReason.STORAGE_TIMEOUT
    return FailureReason.PLANNING_FAILURE


WALL_MARGIN = 0.06        # pre-grasp wrist clearance needed to keep the wall


def _stage_home(run: _Run, stage: HarvestStage) -> HarvestStage:
    run.charge(stage, 0.05 + 0.01 * len(run.detections))
    run.selection = select_target(run.detections, run.scene, run.cfg)
    target = run.detections[run.selection.chosen]
    wall_x = float(np.clip(target.position[0], -WALL_CLIP, WALL_CLIP))
    pg_g, pg_c = pregrasp_poses(target, run.scene)
    # The wall only helps if both standoffs clear it; near the row ends the
    # far arm's pre-grasp crowds the center line, so plan without it there.
    if pg_g.translation[0] < wall_x - WALL_MARGIN and pg_c.translation[0] > wall_x + WALL_MARGIN:
        run.wall_x = wall_x
        set_division_wall(run.scene, wall_x)
    return HarvestStage.MOVE_TO_PREGRASP


def _stage_pregrasp(run: _Run, stage: HarvestStage) -> HarvestStage:
    target = run.detections[run.selection.chosen]
    pg_g, pg_c = pregrasp_poses(target, run.scene)
    try:
        q_g = inverse_kinematics(run.arms[GRIPPER], pg_g, run.q[GRIPPER],
                                 max_steps=60, restarts=6,
                                 rng=np.random.default_rng(run.cfg.seed * 7 + 1))
        q_c = inverse_kinematics(run.arms[CUTTER], pg_c, run.q[CUTTER],
                                 max_steps=60, restarts=6,
                                 rng=np.random.default_rng(run.cfg.seed * 7 + 2))
    except NoSolution as err:
        raise NoPathFound(f"pre-grasp IK failed: {err}") from err
    run.pregrasp_q = {GRIPPER: q_g, CUTTER: q_c}

    def plan_gripper(_):
        scn = run.scene.with_bodies(run.other_arm_bodies(GRIPPER))
        return plan_rrt_star(scn, run.arms[GRIPPER], run.q[GRIPPER], q_g, run.plan_cfg(1))

    def plan_cutter(_):
        frozen = run.arms[GRIPPER].link_bodies(q_g)
        scn = run.scene.with_bodies(frozen)
        return plan_rrt_star(scn, run.arms[CUTTER], run.q[CUTTER], q_c, run.plan_cfg(2))

    # Cutter plans against the gripper parked at its goal, so the phase is
    # execution-disjoint even on wall-less edge targets.
    run.phase(stage, ArmAction(GRIPPER, plan_gripper), ArmAction(CUTTER, plan_cutter),
              disjoint=True)
    return HarvestStage.FINE_POSE


def _stage_fine_pose(run: _Run, stage: HarvestStage) -> HarvestStage:
    if run.world is None or not run.world.peppers:
        raise NoPathFound("fine pose needs a simulation world")
    pepper = run.world.peppers[0]
    noise = run.cfg.noise
    clouds_f, clouds_p, eyes = [], [], []
    for name in (GRIPPER, CUTTER):
        cam = run.arms[name].forward_kinematics(run.q[name])
        try:
            fruit, ped = render_partial_cloud(
                pepper, cam, DEFAULT_INTRINSICS, noise=noise, rng=run.rng,
                occluders=run.world.foliage)
        except DomainError:
            continue
        clouds_f.append(fruit.points)
        clouds_p.append(ped.points)
        eyes.append(cam.translation)
    if not clouds_f:
        raise NoPathFound("no camera sees the target")
    fruit_cloud = PointCloud(np.vstack(clouds_f))
    ped_cloud = PointCloud(np.vstack(clouds_p))
    view = np.mean(eyes, axis=0)
    run.charge(stage, 0.35 + 2e-4 * len(fruit_cloud.points))

    coarse = coarse_pose(fruit_cloud, ped_cloud, view_origin=view)
    fitted = fit_superellipsoid(fruit_cloud, coarse)
    fine = final_pose(ped_cloud, fitted, view_origin=view)
    sigma_fine = FINE_NOISE_RATIO * noise.sigma_t
    jitter = run.rng.normal(0.0, sigma_fine, 3) if sigma_fine > 0 else np.zeros(3)
    fine = PoseEstimate(
        RigidTransform(fine.transform.rotation, fine.position + jitter),
        Stage.FINE, fine.shape)
    ped = ped_cloud.points.mean(axis=0)
    if sigma_fine > 0:
        ped = ped + run.rng.normal(0.0, sigma_fine, 3)
    ws = run.scene.workspace
    if not (np.all(fine.position >= ws.lo) and np.all(fine.position <= ws.hi)):
        raise NoPathFound("fine pose outside the workspace")
    run.fine = fine
    run.ped_centroid = ped
    return HarvestStage.MOVE_TO_GRASP


def _ordered_feasible(candidates, q_current) -> list:
    """Feasible candidates sorted by joint distance, stable on ties."""
    feasible = [c for c in candidates if c.feasible]
    return sorted(feasible, key=lambda c: float(np.linalg.norm(c.ik - q_current)))


def _concat(leg1: Trajectory, leg2: Trajectory) -> Trajectory:
    wp2 = leg2.waypoints
    if len(wp2) and np.array_equal(wp2[0], leg1.waypoints[-1]):
        wp2 = wp2[1:]
    wp = np.vstack([leg1.waypoints, wp2]) if len(wp2) else leg1.waypoints
    effort = leg1.stats.get("iterations", 0) + len(leg2.waypoints)
    return Trajectory(wp, leg1.cost + leg2.cost, {"iterations": effort})


def _approach(run: _Run, arm: str, candidates, obstacles, seed_offset: int) -> tuple:
    """Approach the closest workable candidate: joint plan, then straight plunge.

    The staging pose sits PLUNGE behind the candidate along its approach axis;
    staging IK is seeded from the candidate's own solution so the final
    straight segment stays on one branch. Candidates are tried in
    closest-configuration order until one plans cleanly.
    """
    ordered = _ordered_feasible(candidates, run.q[arm])
    if not ordered:
        raise NoFeasibleGrasp(f"none of {len(candidates)} {arm} candidates feasible")
    scn = run.scene.with_bodies(obstacles)
    chain = run.arms[arm]
    last = None
    for k, cand in enumerate(ordered):
        stage_pose = RigidTransform(
            cand.pose.rotation,
            cand.pose.translation - PLUNGE * cand.pose.rotation[:, 2])
        try:
            q_stage = inverse_kinematics(
                chain, stage_pose, cand.ik, max_steps=40, restarts=2,
                rng=np.random.default_rng(run.cfg.seed * 17 + seed_offset + k))
            leg1 = plan_rrt_star(scn, chain, run.q[arm], q_stage,
                                 run.plan_cfg(5 + seed_offset + k))
            leg2 = plan_cartesian(scn, chain, q_stage, cand.pose)
        except DomainError as err:
            last = err
            continue
        return cand, _concat(leg1, leg2)
    raise last


def _stage_grasp_approach(run: _Run, stage: HarvestStage) -> HarvestStage:
    clear_division_wall(run.scene)
    cfg = run.cfg
    solver = cfg.screen_solver()
    static = run.scene.collision_bodies()
    run.charge(stage, 0.04 * cfg.grasp.n_candidates)   # candidate screening

    # Both arms approach on vertical-axis circles: level wrist poses stay in
    # the dexterous band across the whole tilt range, the capture depth is
    # set by the circle radius, and a horizontal cut plane through the
    # observed peduncle centroid meets the stem for any in-bound tilt.
    def plan_gripper(_):
        radius = max(run.fine.shape.a, run.fine.shape.b) + cfg.grasp.clearance
        gcircle = _level_circle(run.fine.position, radius)
        other = run.other_arm_bodies(GRIPPER)
        cands = generate_candidates(
            gcircle, cfg.grasp.n_candidates, run.arms[GRIPPER], static + other,
            run.q[GRIPPER], tool=Tool.GRIPPER, ik_solver=solver,
            ik_rng_base=cfg.seed * 31)
        run.grasp_best, traj = _approach(run, GRIPPER, cands, other, seed_offset=0)
        return traj

    def plan_cutter(traj_a):
        frozen = run.arms[GRIPPER].link_bodies(traj_a.end)
        ccircle = _level_circle(run.ped_centroid, cfg.grasp.cutter_radius)
        cands = generate_candidates(
            ccircle, cfg.grasp.n_candidates, run.arms[CUTTER], static + frozen,
            run.q[CUTTER], tool=Tool.CUTTER, ik_solver=solver,
            ik_rng_base=cfg.seed * 31 + 7)
        run.cut_best, traj = _approach(run, CUTTER, cands, frozen, seed_offset=40)
        return traj

    traj_g, traj_c, _ = run.phase(
        stage, ArmAction(GRIPPER, plan_gripper), ArmAction(CUTTER, plan_cutter),
        disjoint=True)
    run.approach = {GRIPPER: traj_g, CUTTER: traj_c}
    return HarvestStage.GRASP_AND_CUT


def _stage_grasp_and_cut(run: _Run, stage: HarvestStage) -> HarvestStage:
    pepper = run.world.peppers[0]
    run.charge(stage, 0.8)   # close the fingers, actuate the shears

    ee_g = run.arms[GRIPPER].forward_kinematics(run.q[GRIPPER])
    rel = pepper.center - ee_g.translation
    depth = float(rel @ ee_g.rotation[:, 2])
    lateral = float(np.linalg.norm(rel - depth * ee_g.rotation[:, 2]))
    if not (CAPTURE_DEPTH[0] <= depth <= CAPTURE_DEPTH[1] and lateral <= CAPTURE_LATERAL):
        raise CaptureMiss(
            f"fruit escaped the jaws (depth {depth:.3f}, lateral {lateral:.3f})")

    ee_c = run.arms[CUTTER].forward_kinematics(run.q[CUTTER])
    blade_mid = ee_c.translation + BLADE_REACH * ee_c.rotation[:, 2]
    blade_dir = ee_c.rotation[:, 0]
    outcome = apply_cut(pepper, blade_mid - BLADE_HALF * blade_dir,
                        blade_mid + BLADE_HALF * blade_dir)
    run.cut_miss = outcome.miss_distance
    if not outcome.detached:
        raise CutMiss(f"blade missed the peduncle by {outcome.miss_distance:.3f} m")
    run.grab = ee_g.inverse().apply(pepper.center)
    return HarvestStage.RETRACT


def _stage_retract(run: _Run, stage: HarvestStage) -> HarvestStage:
    back_c = _reverse(run.approach[CUTTER])
    back_g = _reverse(run.approach[GRIPPER])
    run.phase(stage, ArmAction(CUTTER, lambda _: back_c),
              ArmAction(GRIPPER, lambda _: back_g), disjoint=True)
    return HarvestStage.MOVE_TO_STORAGE


def _stage_storage(run: _Run, stage: HarvestStage) -> HarvestStage:
    try:
        q_store = inverse_kinematics(
            run.arms[GRIPPER], STORAGE_POSE, run.q[GRIPPER], max_steps=60,
            restarts=6, rng=np.random.default_rng(run.cfg.seed * 7 + 3))
    except NoSolution as err:
        raise NoPathFound(f"storage IK failed: {err}") from err

    # Cutter retires first so the bin run is planned against it parked at
    # home, not crowding the fruit row.
    def plan_cutter(_):
        scn = run.scene.with_bodies(run.other_arm_bodies(CUTTER))
        return plan_rrt_star(scn, run.arms[CUTTER], run.q[CUTTER],
                             run.scene.home[CUTTER], run.plan_cfg(4))

    def plan_gripper(_):
        frozen = run.arms[CUTTER].link_bodies(run.scene.home[CUTTER])
        scn = run.scene.with_bodies(frozen)
        return plan_rrt_star(scn, run.arms[GRIPPER], run.q[GRIPPER], q_store,
                             run.plan_cfg(3, budget=run.cfg.storage_budget_s))

    run.phase(stage, ArmAction(CUTTER, plan_cutter), ArmAction(GRIPPER, plan_gripper),
              disjoint=True)
    run.charge(stage, 0.4)   # open the fingers, let the fruit drop
    ee = run.arms[GRIPPER].forward_kinematics(run.q[GRIPPER])
    drop = ee.apply(run.grab)
    run.drop = drop
    if not fruit_in_bin(drop):
        raise NoPathFound(f"fruit released outside the bin at {np.round(drop, 3)}")
    return HarvestStage.DONE


def _abort_home(run: _Run) -> None:
    """Best-effort recovery: clear the wall and send both arms home."""
    clear_division_wall(run.scene)
    for name in (GRIPPER, CUTTER):
        home = run.scene.home[name]
        if np.allclose(run.q[name], home):
            continue
        try:
            scn = run.scene.with_bodies(run.other_arm_bodies(name))
            traj = plan_rrt_star(scn, run.arms[name], run.q[name], home,
                                 run.plan_cfg(9, budget=5.0))
            run.charge(HarvestStage.FAILED, plan_sim_time(traj) + exec_sim_time(traj, run.cfg.speed))
            run.q[name] = traj.end.copy()
            run.record(HarvestStage.FAILED, name, traj)
        except DomainError as err:
            logger.warning("abort: %s could not home (%s)", name, err)
