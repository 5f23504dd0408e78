import numpy as np
import pytest
from scipy.optimize import brentq

from momaplan import classical, path as mpath, robot, scene, trajopt
from momaplan.rngs import seeded_rng


@pytest.fixture(scope="module")
def model():
    return robot.default_model()


def empty_room():
    return scene.Scene(obstacles=[], room=np.array([[-5, 5], [-5, 5], [0, 2.5]]),
                       walled=True, floor=True)


def test_start_equals_goal(model):
    sc = empty_room()
    s = robot.RobotState(0, 0, 0.3, model.mid_joints())
    res = classical.rrt_connect(classical.PlanQuery(sc, model, s, s, seed=1))
    assert res.success and res.elapsed < 0.05
    assert len(res.path) == 2


def test_invalid_start_reports(model):
    sc = scene.Scene(obstacles=[scene.ObstaclePrimitive("sphere", [0, 0, 0.5], radius=1.0)])
    s = robot.RobotState(0, 0, 0, model.mid_joints())
    g = robot.RobotState(3, 0, 0, model.mid_joints())
    res = classical.rrt_connect(classical.PlanQuery(sc, model, s, g, seed=1))
    assert not res.success and res.reason == "invalid_start"


def test_empty_room_straight_line(model):
    sc = empty_room()
    s = robot.RobotState(-3, -2, 0.3, model.mid_joints())
    g = robot.RobotState(3, 2, -0.5, model.mid_joints())
    res = classical.rrt_connect(classical.PlanQuery(sc, model, s, g, seed=4, max_iters=3000))
    assert res.success
    rep = classical.validate(res.path, sc, model)
    assert rep.ok
    pruned = mpath.prune(res.path, sc, model, seed=4)
    euclid = np.hypot(g.x - s.x, g.y - s.y)
    assert pruned.base_arc_length() <= 1.05 * euclid
    assert np.allclose(pruned.vectors()[0], s.as_vector())
    assert np.allclose(pruned.vectors()[-1], g.as_vector())


def test_walled_off_goal_fails_at_budget(model):
    walls = []
    for dx, dy, hx, hy in [(1.2, 0, 0.1, 1.3), (-1.2, 0, 0.1, 1.3),
                           (0, 1.2, 1.3, 0.1), (0, -1.2, 1.3, 0.1)]:
        walls.append(scene.ObstaclePrimitive(
            "cuboid", [2.0 + dx, 0.0 + dy, 1.25], 0.0, half_extents=[hx, hy, 1.25]))
    sc = scene.Scene(obstacles=walls, room=np.array([[-5, 5], [-5, 5], [0, 2.5]]),
                     walled=True, floor=True)
    s = robot.RobotState(-3, 0, 0, model.mid_joints())
    g = robot.RobotState(2, 0, 0, model.mid_joints())
    res = classical.rrt_connect(classical.PlanQuery(sc, model, s, g, seed=2, max_iters=150))
    assert not res.success and res.reason == "budget_exhausted"
    assert res.iterations == 150


def test_rrt_deterministic_per_seed(model):
    sc = scene.generate_scene("cuboids", 55, 0.2)
    start, goal = classical.task_states(sc, model, 55)
    a = classical.rrt_connect(classical.PlanQuery(sc, model, start, goal, seed=9, max_iters=4000))
    b = classical.rrt_connect(classical.PlanQuery(sc, model, start, goal, seed=9, max_iters=4000))
    assert a.success and b.success
    assert np.array_equal(a.vectors() if hasattr(a, "vectors") else a.path.vectors(),
                          b.path.vectors())
    assert a.iterations == b.iterations


def test_planned_paths_pass_validator(model):
    for i in range(3):
        sc = scene.generate_scene("mixed", 300 + i, 0.2)
        start, goal = classical.task_states(sc, model, 300 + i)
        res = classical.rrt_connect(classical.PlanQuery(sc, model, start, goal,
                                                        time_budget=10.0, seed=i))
        assert res.success
        assert classical.validate(res.path, sc, model).ok
        pruned = mpath.prune(res.path, sc, model, seed=i, margin=classical.PLANNER_MARGIN)
        assert classical.validate(pruned, sc, model).ok


# --- validator ----------------------------------------------------------------

def test_validate_velocity_violation(model):
    C = 2 + model.n_joints
    M = 4
    knots = np.zeros((C, M + 1, 3))
    knots[0, :, 0] = [0.0, 0.8, 1.6, 2.4, 3.2]
    knots[0, :, 1] = [0.0, 0.5, 1.8 * model.v_max, 0.5, 0.0]   # one knot spikes
    knots[2:, :, 0] = model.mid_joints()[:, None]
    traj = trajopt.Trajectory(knots=knots, durations=np.full(M, 1.5),
                              start_xy=np.array([-4.0, 0.0]))
    sc = empty_room()
    rep = classical.validate(traj, sc, model)
    assert not rep.ok
    assert rep.kind == "rate_limit" and rep.channel == "v"
    assert 1.5 <= rep.where <= 3.0            # first crossing precedes the spike knot


def test_validate_grazing_path_fails(model):
    sc_of = lambda d: scene.Scene(obstacles=[
        scene.ObstaclePrimitive("sphere", [1.0, float(d), 0.36], radius=0.30)])
    base_r = 0.32   # base collision sphere radius = its clearance threshold

    def min_clearance(d):
        sc = sc_of(d)
        xs = np.linspace(0.0, 2.0, 400)
        states = np.zeros((400, 3 + model.n_joints))
        states[:, 0] = xs
        states[:, 3:] = model.mid_joints()
        centers, radii = robot.collision_points_batch(model, states)
        dist = sc.sdf_batch(centers.reshape(-1, 3)).reshape(400, -1)
        return float((dist - radii[None, :]).min())

    # position the obstacle so the tightest clearance is exactly -1e-3
    d_star = brentq(lambda d: min_clearance(d) + 1e-3, 0.4, 1.2, xtol=1e-12)
    sc = sc_of(d_star)
    w = mpath.WaypointPath([robot.RobotState(0, 0, 0, model.mid_joints()),
                            robot.RobotState(2, 0, 0, model.mid_joints())])
    rep = classical.validate(w, sc, model)
    assert not rep.ok and rep.kind == "collision"


def test_validate_trajectory_accepts_feasible(model):
    sc = empty_room()
    w = mpath.WaypointPath([robot.RobotState(-2, 0, 0, model.mid_joints()),
                            robot.RobotState(2, 0, 0, model.mid_joints())])
    traj = trajopt.init_from_path(w, model, goal_heading=0.0)
    assert classical.validate(traj, sc, model).ok


# --- boundary states and collection -----------------------------------------------

def test_task_states_clear_and_deterministic(model):
    sc = scene.generate_scene("mixed", 77, 0.3)
    s1, g1 = classical.task_states(sc, model, 77)
    s2, g2 = classical.task_states(sc, model, 77)
    assert np.array_equal(s1.as_vector(), s2.as_vector())
    assert np.array_equal(g1.as_vector(), g2.as_vector())
    assert mpath.state_clear(sc, model, s1.as_vector(), margin=classical.PLANNER_MARGIN)
    assert mpath.state_clear(sc, model, g1.as_vector(), margin=classical.PLANNER_MARGIN)
    assert np.allclose([s1.x, s1.y], sc.start_xy)
    assert np.allclose([g1.x, g1.y], sc.goal_xy)


def test_collect_dataset_smoke(tmp_path, model):
    out = tmp_path / "data"
    records = classical.collect_dataset(str(out), "cuboids", n_tasks=6, seed=500,
                                        model=model, density=0.2, budget=10.0, workers=2)
    assert len(records) >= 4
    for rec in records:
        data = mpath.load_record(out / rec)
        assert data["path"].n_states == 64
        d = np.linalg.norm(np.diff(data["path"].states[:, :2], axis=0), axis=1)
        if d.sum() > 1e-9:
            assert d.std() <= 1e-6 * max(d.sum(), 1.0)
        sc = scene.load_scene(out / data["scene_ref"])
        assert sc.preset == "cuboids"


def test_collect_dataset_reproducible(tmp_path, model):
    a = tmp_path / "a"
    b = tmp_path / "b"
    ra = classical.collect_dataset(str(a), "cuboids", n_tasks=3, seed=600, model=model,
                                   density=0.2, budget=10.0, workers=1)
    rb = classical.collect_dataset(str(b), "cuboids", n_tasks=3, seed=600, model=model,
                                   density=0.2, budget=10.0, workers=2)
    assert ra == rb
    for rec in ra:
        assert (a / rec).read_bytes() == (b / rec).read_bytes()
