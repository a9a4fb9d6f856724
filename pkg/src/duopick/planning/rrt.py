"""Joint-space RRT* under the weighted joint/task-space edge cost.

Deterministic for a fixed (seed, scene, config): sampling uses one seeded
generatorand the loop order is fixed. A direct-connect fast path returns the
straight segment when it is collision-free, which is optimal because both
cost terms are metrics (triangle inequality). The planner is anytime: it
keeps sampling after the first solution and returns the best tree path.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from ..arm import KinematicChain
from ..errors import GoalInCollision, NoPathFound, StartInCollision
from .costs import motion_cost, motion_cost_batch
from .trajectory import (
    Trajectory,
    interpolate_path,
    states_clearances,
    states_collision_free,
)

logger = logging.getLogger(__name__)


@dataclass
class PlannerConfig:
    lambda_fk: float = 1.0
    max_iterations: int = 800
    step: float = 0.3             # rad, joint-space
    goal_bias: float = 0.05
    delta_check: float = 0.02     # rad, collision interpolation
    time_budget_s: float = 5.0
    seed: int = 0
    gamma: float = None            # rewire scale; None = joint-space diameter
    early_stop_iters: int = 200    # extra iterations after the first solution
    max_neighbors: int = 12
    goal_connect_radius: float = 1.0   # joint rad; edge is densely checked
    goal_noise: float = 0.25           # rad std around the goal on bias draws

    def __post_init__(self):
        if self.lambda_fk < 0:
            raise ValueError("lambda_fk must be >= 0")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must be in [0, 1]")


# Ternary-search depth for box gating: error <= link_len * (2/3)^24, microns
# against a 5 mm inflation margin.
_GATE_ITERS = 24


def _bodies_of(scene) -> list:
    if hasattr(scene, "collision_bodies"):
        return list(scene.collision_bodies())
    return list(scene)


def _edge_free(chain, bodies, q_a, q_b, resolution) -> bool:
    states = interpolate_path(np.vstack([q_a, q_b]), resolution)
    return states_collision_free(chain, states, bodies, _GATE_ITERS)


def plan_rrt_star(scene, chain: KinematicChain, q_start, q_goal, cfg: PlannerConfig = None) -> Trajectory:
    """Plan from q_start to q_goal; returns the best path found.

    Raises StartInCollision / GoalInCollision on bad endpoints and NoPathFound
    when the iteration cap or time budget expires without a solution (a
    nonpositive budget fails immediately).
    """
    cfg = cfg or PlannerConfig()
    bodies = _bodies_of(scene)
    q_start = np.asarray(q_start, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    if not chain.in_limits(q_start) or not chain.in_limits(q_goal):
        raise ValueError("endpoints must be within joint limits")
    if not states_collision_free(chain, q_start[None, :], bodies, _GATE_ITERS):
        raise StartInCollision("start config collides")
    if not states_collision_free(chain, q_goal[None, :], bodies, _GATE_ITERS):
        raise GoalInCollision("goal config collides")
    if cfg.time_budget_s <= 0:
        raise NoPathFound("time budget exhausted before planning")

    t_deadline = time.monotonic() + cfg.time_budget_s

    def finish(waypoints, stats):
        wp = interpolate_path(np.asarray(waypoints), cfg.step)
        cost = sum(
            motion_cost(chain, a, b, cfg.lambda_fk) for a, b in zip(wp[:-1], wp[1:])
        )
        return Trajectory(wp, cost, stats)

    if _edge_free(chain, bodies, q_start, q_goal, cfg.delta_check):
        return finish(
            [q_start, q_goal],
            {"iterations": 0, "nodes": 2, "direct": True, "seed": cfg.seed},
        )

    rng = np.random.default_rng(cfg.seed)
    dof = chain.dof
    cap = cfg.max_iterations + 2
    nodes = np.empty((cap, dof))
    ee = np.empty((cap, 3))
    parent = np.full(cap, -1, dtype=int)
    cost_to = np.full(cap, np.inf)
    children: list = [[] for _ in range(cap)]
    nodes[0] = q_start
    ee[0] = chain.ee_positions(q_start[None, :])[0]
    cost_to[0] = 0.0
    n = 1

    ee_goal = chain.ee_positions(q_goal[None, :])[0]
    gamma = cfg.gamma or float(np.linalg.norm(chain.upper - chain.lower))
    best_parent_of_goal = -1
    best_cost = np.inf
    cost_history = []
    first_solution_iter = -1
    it = 0

    for it in range(1, cfg.max_iterations + 1):
        if it % 64 == 0 and time.monotonic() > t_deadline:
            break
        if first_solution_iter >= 0 and it - first_solution_iter >= cfg.early_stop_iters:
            break

        if rng.random() < cfg.goal_bias:
            # jitter around the goal so a blocked greedy ray is not retried
            sample = np.clip(
                q_goal + rng.normal(scale=cfg.goal_noise, size=dof),
                chain.lower,
                chain.upper,
            )
        else:
            sample = rng.uniform(chain.lower, chain.upper)

        d_near = motion_cost_batch(ee[:n], nodes[:n], chain.ee_positions(sample[None, :])[0], sample, cfg.lambda_fk)
        i_near = int(np.argmin(d_near))
        diff = sample - nodes[i_near]
        dist = float(np.linalg.norm(diff))
        if dist < 1e-12:
            continue
        q_new = nodes[i_near] + diff * min(1.0, cfg.step / dist)
        states = interpolate_path(np.vstack([nodes[i_near], q_new]), cfg.delta_check)
        clear = states_clearances(chain, states, bodies, _GATE_ITERS)
        bad = np.flatnonzero(clear < 0.0)
        if bad.size:
            # keep the free prefix of the blocked extension
            if bad[0] < 2:
                continue
            q_new = states[bad[0] - 1]
        ee_new = chain.ee_positions(q_new[None, :])[0]

        # choose parent among near nodes (bounded count), cheapest first
        rn = max(cfg.step, gamma * (np.log(n + 1) / (n + 1)) ** (1.0 / 7.0))
        d_all = motion_cost_batch(ee[:n], nodes[:n], ee_new, q_new, cfg.lambda_fk)
        near = np.flatnonzero(d_all <= rn)
        if near.size > cfg.max_neighbors:
            near = near[np.argsort(d_all[near], kind="stable")[: cfg.max_neighbors]]
        order = near[np.argsort(cost_to[near] + d_all[near], kind="stable")]
        i_parent = -1
        for j in order:
            if j == i_near or _edge_free(chain, bodies, nodes[j], q_new, cfg.delta_check):
                i_parent = int(j)
                break
        if i_parent < 0:
            i_parent = i_near
        k = n
        nodes[k] = q_new
        ee[k] = ee_new
        parent[k] = i_parent
        cost_to[k] = cost_to[i_parent] + d_all[i_parent]
        children[i_parent].append(k)
        n += 1

        # rewire near nodes through the new one when cheaper
        for j in near:
            j = int(j)
            if j == i_parent:
                continue
            c_through = cost_to[k] + d_all[j]
            if c_through + 1e-12 < cost_to[j] and _edge_free(
                chain, bodies, q_new, nodes[j], cfg.delta_check
            ):
                children[parent[j]].remove(j)
                parent[j] = k
                children[k].append(j)
                stack = [j]
                while stack:
                    m = stack.pop()
                    p = parent[m]
                    cost_to[m] = cost_to[p] + motion_cost_batch(
                        ee[p : p + 1], nodes[p : p + 1], ee[m], nodes[m], cfg.lambda_fk
                    )[0]
                    stack.extend(children[m])

        # try to reach the goal when the attempt could beat the incumbent
        d_goal = motion_cost_batch(ee[k : k + 1], nodes[k : k + 1], ee_goal, q_goal, cfg.lambda_fk)[0]
        if (
            np.linalg.norm(q_goal - q_new) <= cfg.goal_connect_radius
            and cost_to[k] + d_goal < best_cost
            and _edge_free(chain, bodies, q_new, q_goal, cfg.delta_check)
        ):
            total = cost_to[k] + d_goal
            if total < best_cost:
                best_cost = total
                best_parent_of_goal = k
                cost_history.append((it, float(total)))
                if first_solution_iter < 0:
                    first_solution_iter = it

        # keep the stored goal cost honest under rewiring
        if best_parent_of_goal >= 0:
            d_g = motion_cost_batch(
                ee[best_parent_of_goal : best_parent_of_goal + 1],
                nodes[best_parent_of_goal : best_parent_of_goal + 1],
                ee_goal,
                q_goal,
                cfg.lambda_fk,
            )[0]
            cur = cost_to[best_parent_of_goal] + d_g
            if cur < best_cost:
                best_cost = float(cur)
                cost_history.append((it, float(cur)))

    if best_parent_of_goal < 0:
        raise NoPathFound(f"no path after {it} iterations")

    path = [q_goal]
    j = best_parent_of_goal
    while j >= 0:
        path.append(nodes[j].copy())
        j = parent[j]
    path.reverse()
    stats = {
        "iterations": it,
        "nodes": int(n),
        "direct": False,
        "seed": cfg.seed,
        "first_solution_iter": first_solution_iter,
        "cost_history": cost_history,
    }
    traj = finish(path, stats)
    logger.debug("rrt*: %d nodes, cost %.4f", n, traj.cost)
    return traj
