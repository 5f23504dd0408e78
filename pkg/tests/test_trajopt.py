import math

import numpy as np
import pytest

from momaplan import classical, path as mpath, robot, scene, trajopt
from momaplan.rngs import seeded_rng


@pytest.fixture(scope="module")
def model():
    return robot.default_model()


def straight_waypoints(model, d=4.0):
    return mpath.WaypointPath([
        robot.RobotState(0, 0, 0, model.mid_joints()),
        robot.RobotState(d, 0, 0, model.mid_joints()),
    ])


def smooth_random_path(model, rng, n=40):
    """Tangent-consistent path with bounded-curvature heading, like the
    sampler produces (its training data comes from rate-limited trajectories)."""
    u = np.linspace(0.0, 1.0, n - 1)
    heading = rng.uniform(-1, 1) \
        + rng.uniform(0.3, 0.8) * np.sin(2 * math.pi * rng.uniform(0.3, 0.8) * u + rng.uniform(0, 6)) \
        + rng.uniform(0.2, 0.5) * np.sin(2 * math.pi * rng.uniform(0.9, 1.4) * u + rng.uniform(0, 6))
    steps = 0.12 * np.column_stack([np.cos(heading), np.sin(heading)])
    pos = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)]) + rng.uniform(-1, 1, 2)
    theta = np.concatenate([[heading[0]], heading])
    q = model.mid_joints() + 0.2 * np.sin(np.linspace(0, 2, n))[:, None]
    vecs = np.column_stack([pos, theta, q])
    return mpath.WaypointPath([robot.RobotState.from_vector(v) for v in vecs])


# --- initialization -----------------------------------------------------------

def test_init_straight_line(model):
    w = straight_waypoints(model)
    traj = trajopt.init_from_path(w, model, goal_heading=0.0)
    ts = np.linspace(0, traj.t_f, 100)
    ch = traj.channel_values(ts)
    assert np.abs(ch["theta"]).max() < 1e-12
    a = ch["a"]
    assert np.all(np.diff(a) >= -1e-9)
    pos = traj.positions(np.array([0.0, traj.t_f]))
    assert np.abs(pos[0] - [0, 0]).max() < 1e-9
    assert np.abs(pos[1] - [4, 0]).max() < 1e-9


def test_init_stationary_base(model):
    w = mpath.WaypointPath([
        robot.RobotState(1, 2, 0.3, model.mid_joints()),
        robot.RobotState(1, 2, 1.1, model.mid_joints() + 0.4),
    ])
    traj = trajopt.init_from_path(w, model)
    ts = np.linspace(0, traj.t_f, 50)
    assert np.abs(traj.channel_values(ts)["a"]).max() < 1e-12
    assert traj.t_f > 0
    pos = traj.positions(ts)
    assert np.abs(pos - [1, 2]).max() < 1e-12


def random_feasible_waypoints(model, rng, n=64):
    """Dense samples of a random rate-limited trajectory; this is the input
    family the initializer sees (truth paths and sampler outputs)."""
    M = 6
    C = 2 + model.n_joints
    knots = np.zeros((C, M + 1, 3))
    durations = rng.uniform(0.8, 1.6, M)
    speeds = rng.uniform(0.3, 0.8, M + 1)
    speeds[0] = speeds[-1] = 0.0
    arc = np.concatenate([[0.0], np.cumsum(0.5 * (speeds[:-1] + speeds[1:]) * durations)])
    knots[0, :, 0] = arc
    knots[0, :, 1] = speeds
    yaw = np.cumsum(rng.uniform(-0.6, 0.6, M + 1))
    knots[1, :, 0] = yaw
    knots[1, 1:-1, 1] = rng.uniform(-0.4, 0.4, M - 1)
    for j in range(model.n_joints):
        base = model.mid_joints()[j]
        knots[2 + j, :, 0] = base + rng.uniform(-0.3, 0.3, M + 1)
    traj = trajopt.Trajectory(knots=knots, durations=durations,
                              start_xy=rng.uniform(-1, 1, 2))
    return traj.to_waypoint_path(n)


def test_init_tracks_smooth_paths(model):
    rng = seeded_rng(140)
    for trial in range(5):
        w = random_feasible_waypoints(model, rng)
        traj = trajopt.init_from_path(w, model)
        vecs = w.vectors()
        arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(vecs[:, :2], axis=0), axis=1))])
        ts = np.linspace(0, traj.t_f, 200)
        pos = traj.positions(ts)
        a_of_t = traj.channel_values(ts)["a"]
        ref = np.column_stack([np.interp(a_of_t, arc, vecs[:, 0]),
                               np.interp(a_of_t, arc, vecs[:, 1])])
        assert np.linalg.norm(pos - ref, axis=1).max() < 0.05


def test_init_c2_continuity(model):
    rng = seeded_rng(141)
    traj = trajopt.init_from_path(smooth_random_path(model, rng), model)
    knot_times = np.cumsum(traj.durations)[:-1]
    eps = 1e-9
    for order in (0, 1, 2):
        lo = traj.channel_values(knot_times - eps, order)
        hi = traj.channel_values(knot_times + eps, order)
        for key in ("a", "theta"):
            assert np.abs(lo[key] - hi[key]).max() < 1e-5
        assert np.abs(lo["q"] - hi["q"]).max() < 1e-5


# --- boundary residual ------------------------------------------------------------

def test_boundary_residual_straight(model):
    w = straight_waypoints(model, d=3.0)
    traj = trajopt.init_from_path(w, model, goal_heading=0.0)
    start = robot.RobotState(0, 0, 0, model.mid_joints())
    goal = robot.RobotState(3, 0, 0, model.mid_joints())
    r = trajopt.boundary_residual(traj, start, goal)
    assert np.abs(r).max() < 1e-9
    goal_off = robot.RobotState(2.5, 0, 0, model.mid_joints())
    r2 = trajopt.boundary_residual(traj, start, goal_off)
    assert r2[0] == pytest.approx(0.5, abs=1e-9)


def test_boundary_residual_circle_arc(model):
    # constant speed + constant yaw rate: chord has a closed form
    v, omega, tf = 0.8, 0.5, 3.0
    M = 4
    knot_t = np.linspace(0, tf, M + 1)
    knots = np.zeros((2 + model.n_joints, M + 1, 3))
    knots[0, :, 0] = v * knot_t
    knots[0, :, 1] = v
    knots[1, :, 0] = omega * knot_t
    knots[1, :, 1] = omega
    traj = trajopt.Trajectory(knots=knots, durations=np.diff(knot_t), start_xy=np.zeros(2))
    x_true = (v / omega) * math.sin(omega * tf)
    y_true = (v / omega) * (1.0 - math.cos(omega * tf))
    start = robot.RobotState(0, 0, 0, model.mid_joints())
    goal = robot.RobotState(x_true, y_true, 0, model.mid_joints())
    r = trajopt.boundary_residual(traj, start, goal)
    assert np.abs(r).max() < 1e-10


def test_boundary_residual_node_doubling(model):
    rng = seeded_rng(142)
    traj = trajopt.init_from_path(smooth_random_path(model, rng), model)
    start = traj.state_at(0.0)
    goal = traj.state_at(traj.t_f)
    r16 = trajopt.boundary_residual(traj, start, goal, nodes_per_piece=16)
    r32 = trajopt.boundary_residual(traj, start, goal, nodes_per_piece=32)
    assert np.abs(r16 - r32).max() < 1e-12


# --- objective gradient --------------------------------------------------------------

def test_objective_gradient_finite_difference(model):
    rng = seeded_rng(143)
    sc = scene.Scene(obstacles=[
        scene.ObstaclePrimitive("sphere", [1.5, 0.8, 0.8], radius=0.4),
        scene.ObstaclePrimitive("cuboid", [3.0, -0.5, 0.75], 0.4, half_extents=[0.3, 0.3, 0.75]),
    ], floor=True)
    problem = trajopt.OptProblem(scene=sc, model=model)
    w = smooth_random_path(model, rng)
    traj0 = trajopt.init_from_path(w, model)
    goal = traj0.state_at(traj0.t_f)
    fixed = trajopt._fixed_parts(traj0)
    x = trajopt._pack_vars(traj0)
    _, grad = trajopt._objective_tape(x, fixed, problem, goal, problem.w_boundary)
    h = 1e-6
    for _ in range(30):
        i = int(rng.integers(0, x.size))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp = trajopt._objective_tape(xp, fixed, problem, goal, problem.w_boundary)[0]
        fm = trajopt._objective_tape(xm, fixed, problem, goal, problem.w_boundary)[0]
        fd = (fp - fm) / (2 * h)
        assert abs(grad[i] - fd) / max(abs(fd), 1.0) < 1e-4


# --- optimization ---------------------------------------------------------------------

def empty_scene():
    return scene.Scene(obstacles=[], floor=True)


def test_optimize_near_stationary_start(model):
    sc = empty_scene()
    problem = trajopt.OptProblem(scene=sc, model=model)
    goal = robot.RobotState(3, 0, 0, model.mid_joints())
    traj0 = trajopt.init_from_path(straight_waypoints(model, 3.0), model, goal_heading=0.0)
    first, status1 = trajopt.optimize(problem, traj0, goal=goal)
    assert status1["status"] == "converged"
    # restarting from the solution barely moves the objective
    second, status2 = trajopt.optimize(problem, first, goal=goal)
    assert status2["objective"] <= status1["objective"] + 1e-8


def test_optimize_converges_and_validates(model):
    rng = seeded_rng(144)
    results = []
    for i in range(5):
        sc = scene.generate_scene("cuboids", 2000 + i, 0.15)
        start, goal = classical.task_states(sc, model, 2000 + i)
        plan = classical.rrt_connect(classical.PlanQuery(sc, model, start, goal,
                                                         time_budget=10.0, seed=i))
        assert plan.success
        pruned = mpath.prune(plan.path, sc, model, seed=i, margin=0.01)
        traj0 = trajopt.init_from_path(pruned, model, goal_heading=goal.theta)
        problem = trajopt.OptProblem(scene=sc, model=model)
        traj, status = trajopt.optimize(problem, traj0, goal=goal)
        if status["status"] != "converged":
            results.append(False)
            continue
        assert status["residual"] < 1e-4
        rep = classical.validate(traj, sc, model)
        results.append(bool(rep.ok))
        # start state is exact
        s0 = traj.state_at(0.0)
        assert abs(s0.x - start.x) < 1e-9 and abs(s0.y - start.y) < 1e-9
        assert abs(robot.wrap_angle(s0.theta - start.theta)) < 1e-9
        assert np.abs(traj.channel_values(np.array([0.0]))["q"][0] - start.q).max() < 1e-9
    assert sum(results) >= 4


def test_optimize_c2_and_objective_monotone(model):
    sc = empty_scene()
    problem = trajopt.OptProblem(scene=sc, model=model)
    goal = robot.RobotState(2.5, 0, 0, model.mid_joints())
    traj0 = trajopt.init_from_path(straight_waypoints(model, 2.5), model, goal_heading=0.0)
    traj, status = trajopt.optimize(problem, traj0, goal=goal)
    knot_times = np.cumsum(traj.durations)[:-1]
    eps = 1e-9
    for order in (0, 1, 2):
        lo = traj.channel_values(knot_times - eps, order)
        hi = traj.channel_values(knot_times + eps, order)
        assert np.abs(lo["a"] - hi["a"]).max() < 1e-5
        assert np.abs(lo["theta"] - hi["theta"]).max() < 1e-5
        assert np.abs(lo["q"] - hi["q"]).max() < 1e-5


def test_optimize_parallel_sequential_policy(model):
    sc = empty_scene()
    problem = trajopt.OptProblem(scene=sc, model=model)
    goal = robot.RobotState(3, 0, 0, model.mid_joints())
    inits = [trajopt.init_from_path(straight_waypoints(model, 3.0), model, goal_heading=0.0)
             for _ in range(3)]
    out = trajopt.optimize_parallel(problem, inits, goal,
                                    validate_fn=lambda t: classical.validate(t, sc, model).ok)
    assert out["index"] == 0 and out["trajectory"] is not None
    assert out["statuses"][0]["status"] == "converged"
    assert all(s["status"] == "cancelled" for s in out["statuses"][1:])


def test_optimize_parallel_single_matches_optimize(model):
    sc = empty_scene()
    problem = trajopt.OptProblem(scene=sc, model=model)
    goal = robot.RobotState(2, 0, 0, model.mid_joints())
    init = trajopt.init_from_path(straight_waypoints(model, 2.0), model, goal_heading=0.0)
    solo, _ = trajopt.optimize(problem, init, goal=goal)
    out = trajopt.optimize_parallel(problem, [init], goal,
                                    validate_fn=lambda t: classical.validate(t, sc, model).ok)
    assert np.allclose(out["trajectory"].knots, solo.knots)
    assert np.allclose(out["trajectory"].durations, solo.durations)


def test_optimize_parallel_process_mode(model):
    sc = empty_scene()
    problem = trajopt.OptProblem(scene=sc, model=model)
    goal = robot.RobotState(2.5, 0, 0, model.mid_joints())
    inits = [trajopt.init_from_path(straight_waypoints(model, 2.5), model, goal_heading=0.0)
             for _ in range(2)]
    out = trajopt.optimize_parallel(problem, inits, goal, workers=2, mode="parallel",
                                    validate_fn=lambda t: classical.validate(t, sc, model).ok)
    assert out["trajectory"] is not None
    assert classical.validate(out["trajectory"], sc, model).ok


def test_trajectory_json_round_trip(tmp_path, model):
    rng = seeded_rng(145)
    traj = trajopt.init_from_path(smooth_random_path(model, rng), model)
    f1, f2 = tmp_path / "t1.json", tmp_path / "t2.json"
    trajopt.save_trajectory(traj, f1)
    traj2 = trajopt.load_trajectory(f1)
    trajopt.save_trajectory(traj2, f2)
    assert f1.read_bytes() == f2.read_bytes()
    ts = np.linspace(0, traj.t_f, 20)
    assert np.array_equal(traj.channel_values(ts)["q"], traj2.channel_values(ts)["q"])


def test_degenerate_zero_length_path(model):
    w = mpath.WaypointPath([
        robot.RobotState(0.5, -0.5, 0.2, model.mid_joints()),
        robot.RobotState(0.5, -0.5, 0.2, model.mid_joints() + 0.3),
    ])
    traj = trajopt.init_from_path(w, model)
    assert traj.t_f > 0
    assert np.abs(traj.channel_values(np.array([traj.t_f]))["a"]).max() < 1e-12
