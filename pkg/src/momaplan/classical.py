"""Sampling planner over the full state space, and the independent checker.

The planner grows two trees (RRT-Connect) over SE(2) x R^{N_m} with a
weighted state metric and validates every edge densely against the
collision spheres. The validator is a separate code path used to accept
dataset samples and optimizer outputs; it never shares the optimizer's
penalty code.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import robot, scene as mscene, path as mpath
from .parallel import limit_worker_threads, resolve_workers, single_thread_blas
from .rngs import seeded_rng

METRIC_W_HEADING = 0.5
METRIC_W_JOINT = 0.3
EXTEND_STEP = 0.8          # metric units per extension
PLANNER_MARGIN = 0.01      # extra clearance so the strict validator passes


@dataclass
class PlanQuery:
    scene: object
    model: object
    start: robot.RobotState
    goal: robot.RobotState
    time_budget: float = 5.0
    seed: int = 0
    max_iters: int | None = None   # iteration budget overrides wall clock (tests)


@dataclass
class PlanResult:
    path: object = None            # WaypointPath on success
    success: bool = False
    elapsed: float = 0.0
    iterations: int = 0
    nodes: int = 0
    reason: str = ""


def state_metric(a, b, nm):
    """Weighted distance: base position 1.0, heading 0.5, joints 0.3 each."""
    a, b = np.asarray(a), np.asarray(b)
    dxy = np.linalg.norm(a[..., :2] - b[..., :2], axis=-1)
    dth = METRIC_W_HEADING * np.abs(np.arctan2(np.sin(a[..., 2] - b[..., 2]),
                                               np.cos(a[..., 2] - b[..., 2])))
    dq2 = ((METRIC_W_JOINT * (a[..., 3:] - b[..., 3:])) ** 2).sum(axis=-1)
    return np.sqrt(dxy**2 + dth**2 + dq2)


def _sample_state(rng, room, limits):
    x = rng.uniform(room[0, 0], room[0, 1])
    y = rng.uniform(room[1, 0], room[1, 1])
    th = rng.uniform(-math.pi, math.pi)
    q = rng.uniform(limits[:, 0], limits[:, 1])
    return np.concatenate([[x, y, th], q])


def _steer(a, b, max_step, nm):
    d = float(state_metric(a, b, nm))
    if d <= max_step:
        return np.array(b, copy=True), True
    u = max_step / d
    out = a + u * (b - a)
    out[2] = a[2] + u * robot.wrap_angle(b[2] - a[2])
    return out, False


class _Tree:
    def __init__(self, root):
        self.states = [np.asarray(root, dtype=float)]
        self.parents = [-1]

    def nearest(self, q, nm):
        arr = np.stack(self.states)
        d = state_metric(arr, q, nm)
        return int(d.argmin())

    def add(self, state, parent):
        self.states.append(state)
        self.parents.append(parent)
        return len(self.states) - 1

    def trace(self, idx):
        out = []
        while idx >= 0:
            out.append(self.states[idx])
            idx = self.parents[idx]
        return out[::-1]


def rrt_connect(query):
    """Bidirectional tree search; deterministic under an iteration budget."""
    t0 = time.perf_counter()
    model, sc = query.model, query.scene
    nm = model.n_joints
    sv, gv = query.start.as_vector(), query.goal.as_vector()
    if not mpath.state_clear(sc, model, sv, margin=PLANNER_MARGIN):
        return PlanResult(reason="invalid_start", elapsed=time.perf_counter() - t0)
    if not mpath.state_clear(sc, model, gv, margin=PLANNER_MARGIN):
        return PlanResult(reason="invalid_goal", elapsed=time.perf_counter() - t0)
    if np.array_equal(sv, gv):
        wp = mpath.WaypointPath([query.start, query.goal])
        return PlanResult(path=wp, success=True, elapsed=time.perf_counter() - t0, nodes=2)

    if sc.room is not None:
        room = sc.room
    else:
        span = np.array([min(sv[0], gv[0]) - 2.0, max(sv[0], gv[0]) + 2.0])
        room = np.array([span, [min(sv[1], gv[1]) - 2.0, max(sv[1], gv[1]) + 2.0], [0, 2.5]])
    rng = seeded_rng(query.seed, 909)
    tree_a, tree_b = _Tree(sv), _Tree(gv)
    swapped = False

    def extend(tree, target):
        near = tree.nearest(target, nm)
        new, reached = _steer(tree.states[near], target, EXTEND_STEP, nm)
        if mpath.edge_clear(sc, model, tree.states[near], new, margin=PLANNER_MARGIN):
            return ("reached" if reached else "advanced"), tree.add(new, near)
        return "trapped", -1

    iters = 0
    max_iters = query.max_iters if query.max_iters is not None else 10**9
    while iters < max_iters:
        iters += 1
        if query.max_iters is None and time.perf_counter() - t0 > query.time_budget:
            break
        target = _sample_state(rng, room, model.joint_limits)
        status, new_idx = extend(tree_a, target)
        if status != "trapped":
            connect_target = tree_a.states[new_idx]
            while True:
                status_b, idx_b = extend(tree_b, connect_target)
                if status_b != "advanced":
                    break
            if status_b == "reached":
                chain = tree_a.trace(new_idx) + tree_b.trace(idx_b)[::-1]
                if swapped:   # tree_a currently roots at the goal
                    chain = chain[::-1]
                states = _dedupe(chain)
                wp = mpath.WaypointPath([robot.RobotState.from_vector(s) for s in states])
                return PlanResult(path=wp, success=True, elapsed=time.perf_counter() - t0,
                                  iterations=iters, nodes=len(tree_a.states) + len(tree_b.states))
        tree_a, tree_b = tree_b, tree_a
        swapped = not swapped
    return PlanResult(success=False, elapsed=time.perf_counter() - t0, iterations=iters,
                      nodes=len(tree_a.states) + len(tree_b.states), reason="budget_exhausted")


def _dedupe(states):
    out = [states[0]]
    for s in states[1:]:
        if not np.array_equal(s, out[-1]):
            out.append(s)
    if len(out) == 1:
        out.append(out[0].copy())
    return out


# ---------------------------------------------------------------------------
# independent feasibility checking


@dataclass
class ValidationReport:
    ok: bool
    kind: str = ""
    where: float = 0.0    # time (trajectories) or row index (paths)
    channel: str = ""
    value: float = 0.0

    def __bool__(self):
        return self.ok


def _check_states(states, sc, model, where):
    centers, radii = robot.collision_points_batch(model, states)
    d = sc.sdf_batch(centers.reshape(-1, 3)).reshape(centers.shape[:2])
    clear = d - radii[None, :]
    bad = np.argwhere(clear < 0.0)
    if len(bad):
        i, j = bad[0]
        return ValidationReport(False, "collision", float(where[i]), f"sphere_{j}", float(clear[i, j]))
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    q = states[:, 3:]
    viol = np.argwhere((q < lo[None, :] - 1e-9) | (q > hi[None, :] + 1e-9))
    if len(viol):
        i, j = viol[0]
        return ValidationReport(False, "joint_limit", float(where[i]), f"q{j}", float(q[i, j]))
    return ValidationReport(True)


def validate_path(p, sc, model):
    """Dense interpolation between rows, clearance and joint-limit checks."""
    if isinstance(p, mpath.WaypointPath):
        vecs = p.vectors()
    else:
        vecs = np.stack([s.as_vector() for s in p.robot_states()])
    for i in range(len(vecs) - 1):
        n = mpath.edge_resolution(vecs[i], vecs[i + 1])
        states = mpath.interpolate_state_vectors(vecs[i], vecs[i + 1], n)
        rep = _check_states(states, sc, model, np.full(len(states), i, dtype=float))
        if not rep.ok:
            return rep
    return _check_states(vecs[-1:], sc, model, np.array([len(vecs) - 1.0]))


def validate_trajectory(traj, sc, model, dt=0.01):
    """Time-dense feasibility: clearance, joint limits, and rate limits.

    Base positions are re-integrated here with a cumulative Simpson rule,
    independent of any optimizer internals.
    """
    ts = np.arange(0.0, traj.t_f, dt)
    ts = np.append(ts, traj.t_f)
    a0 = traj.channel_values(ts, 0)
    a1 = traj.channel_values(ts, 1)
    a2 = traj.channel_values(ts, 2)
    theta = a0["theta"]
    adot = a1["a"]
    # own position integrator (composite Simpson on the half grid)
    x, y = _simpson_positions(traj.start_xy, ts, adot, theta, a2["a"], a1["theta"])
    states = np.column_stack([x, y, theta, a0["q"]])
    rep = _check_states(states, sc, model, ts)
    if not rep.ok:
        return rep
    checks = [
        ("v", np.abs(adot), model.v_max),
        ("omega", np.abs(a1["theta"]), model.omega_max),
        ("acc", np.abs(a2["a"]), model.acc_max),
        ("omega_dot", np.abs(a2["theta"]), model.omega_dot_max),
        ("joint_vel", np.abs(a1["q"]).max(axis=1), model.joint_vel_max),
        ("joint_acc", np.abs(a2["q"]).max(axis=1), model.joint_acc_max),
    ]
    for name, series, limit in checks:
        over = np.argwhere(series > limit + 1e-6)
        if len(over):
            i = int(over[0][0])
            return ValidationReport(False, "rate_limit", float(ts[i]), name, float(series[i]))
    return ValidationReport(True)


def _simpson_positions(start_xy, ts, adot, theta, addot, thdot):
    """Cumulative Simpson integration of (adot cos theta, adot sin theta)."""
    fx = adot * np.cos(theta)
    fy = adot * np.sin(theta)
    x = np.empty_like(ts)
    y = np.empty_like(ts)
    x[0], y[0] = start_xy
    # derivative of the integrand for Hermite-corrected trapezoid (4th order)
    dfx = addot * np.cos(theta) - adot * np.sin(theta) * thdot
    dfy = addot * np.sin(theta) + adot * np.cos(theta) * thdot
    h = np.diff(ts)
    x[1:] = x[0] + np.cumsum(h / 2 * (fx[:-1] + fx[1:]) + h**2 / 12 * (dfx[:-1] - dfx[1:]))
    y[1:] = y[0] + np.cumsum(h / 2 * (fy[:-1] + fy[1:]) + h**2 / 12 * (dfy[:-1] - dfy[1:]))
    return x, y


def validate(obj, sc, model, dt=0.01):
    """Dispatch: trajectories check rates too; paths check geometry only."""
    if hasattr(obj, "channel_values"):
        return validate_trajectory(obj, sc, model, dt=dt)
    return validate_path(obj, sc, model)


# ---------------------------------------------------------------------------
# boundary-state generation and dataset collection


def task_states(sc, model, seed, jitter=0.25, tries=50):
    """Start/goal states at the scene's designated base positions.

    Headings are uniform; joints are mid-range plus jitter, re-drawn until
    the state clears collision (falling back to exact mid-range).
    """
    rng = seeded_rng(seed, 1010)
    out = []
    for xy in (sc.start_xy, sc.goal_xy):
        heading = rng.uniform(-math.pi, math.pi)
        state = None
        for _ in range(tries):
            q = model.mid_joints() + rng.uniform(-jitter, jitter, model.n_joints)
            cand = robot.RobotState(xy[0], xy[1], heading, q)
            if mpath.state_clear(sc, model, cand.as_vector(), margin=PLANNER_MARGIN):
                state = cand
                break
        if state is None:
            state = robot.RobotState(xy[0], xy[1], heading, model.mid_joints())
        out.append(state)
    return out[0], out[1]


def collect_task(sc, model, start, goal, seed, budget=5.0, max_iters=None, opt_params=None):
    """One sample: plan, prune, refine, validate, resample. None on failure."""
    from . import trajopt

    result = rrt_connect(PlanQuery(sc, model, start, goal, time_budget=budget,
                                   seed=seed, max_iters=max_iters))
    if not result.success:
        return None, f"plan:{result.reason}"
    pruned = mpath.prune(result.path, sc, model, seed=seed, margin=PLANNER_MARGIN)
    problem = trajopt.OptProblem(scene=sc, model=model, **(opt_params or {}))
    traj0 = trajopt.init_from_path(pruned, model, goal_heading=goal.theta)
    traj, status = trajopt.optimize(problem, traj0, goal=goal)
    if status.get("status") != "converged":
        return None, f"opt:{status.get('status')}"
    rep = validate(traj, sc, model)
    if not rep.ok:
        return None, f"validate:{rep.kind}:{rep.channel}"
    path64 = mpath.resample_uniform(traj, mpath.DEFAULT_N_STATES)
    frame = robot.task_frame(start, goal)
    return {
        "path_task": mpath.to_task_frame(path64, frame),
        "start": start,
        "goal": goal,
        "trajectory": traj,
    }, "ok"


def _collect_one(args):
    limit_worker_threads()
    (out_dir, preset, density, model_dict, base_seed, index, budget, max_iters) = args
    model = robot.model_from_dict(model_dict)
    sc = mscene.generate_scene(preset, base_seed + index, density)
    start, goal = task_states(sc, model, base_seed + index)
    sample, status = collect_task(sc, model, start, goal, seed=base_seed + index,
                                  budget=budget, max_iters=max_iters)
    if sample is None:
        return index, status, None
    scene_name = f"scene_{index:05d}.json"
    mscene.save_scene(sc, os.path.join(out_dir, scene_name))
    record_name = f"sample_{index:05d}.nmpt"
    mpath.save_record(os.path.join(out_dir, record_name), sample["path_task"],
                      sample["start"], sample["goal"], scene_name, label=-1)
    return index, "ok", record_name


def collect_dataset(out_dir, preset, n_tasks, seed, model, density=0.2, budget=5.0,
                    max_iters=None, workers=None, log_fn=None):
    """Plan n_tasks seeded tasks and record every validated sample.

    Each task is an independent seeded unit, so results are byte-identical
    regardless of worker count. Returns the list of record file names.
    """
    os.makedirs(out_dir, exist_ok=True)
    model_dict = robot.model_to_dict(model)
    jobs = [(out_dir, preset, density, model_dict, seed, i, budget, max_iters)
            for i in range(n_tasks)]
    workers = resolve_workers(workers)
    records = []
    if workers > 1 and n_tasks > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            for index, status, rec in pool.map(_collect_one, jobs, chunksize=4):
                if rec:
                    records.append(rec)
                if log_fn:
                    log_fn(index, status)
    else:
        with single_thread_blas():
            for job in jobs:
                index, status, rec = _collect_one(job)
                if rec:
                    records.append(rec)
                if log_fn:
                    log_fn(index, status)
    return sorted(records)
