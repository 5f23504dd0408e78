import math

import numpy as np
import pytest

from momaplan import robot
from momaplan.rngs import seeded_rng


# --- independent homogeneous-transform FK oracle ---------------------------

def _hom_trans(v):
    H = np.eye(4)
    H[:3, 3] = v
    return H


def _hom_rot(axis, angle):
    H = np.eye(4)
    c, s = math.cos(angle), math.sin(angle)
    if axis == "z":
        H[:3, :3] = [[c, -s, 0], [s, c, 0], [0, 0, 1]]
    else:
        H[:3, :3] = [[c, 0, s], [0, 1, 0], [-s, 0, c]]
    return H


def fk_oracle(model, state):
    """Keypoint positions by explicit 4x4 matrix composition."""
    H = _hom_trans([state.x, state.y, 0.0]) @ _hom_rot("z", state.theta)
    positions = [H[:3, 3].copy()]
    frames = [H.copy()]
    for j in range(1, model.n_joints + 2):
        link = model.link_vectors[j - 1]
        positions.append((H @ np.append(link, 1.0))[:3])
        H = H @ _hom_trans(link)
        if 2 <= j <= model.n_joints:
            H = H @ _hom_rot(model.joint_axes[j - 2], state.q[j - 2])
        frames.append(H.copy())
    return np.array(positions), frames


def collision_oracle(model, state):
    _, frames = fk_oracle(model, state)
    centers = []
    for link, offset, _ in model.collision_points:
        H = frames[max(link - 1, 0)]
        centers.append((H @ np.append(offset, 1.0))[:3])
    return np.array(centers)


def random_state(model, rng):
    q = rng.uniform(model.joint_limits[:, 0], model.joint_limits[:, 1])
    return robot.RobotState(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-np.pi, np.pi), q)


@pytest.fixture(scope="module")
def model():
    return robot.default_model()


# --- keypoints --------------------------------------------------------------

def test_keypoints_identity_pose(model):
    s = robot.RobotState(0, 0, 0, model.mid_joints())
    kp = robot.keypoints(model, s)
    cum = np.cumsum(np.vstack([[0, 0, 0], model.link_vectors]), axis=0)
    assert np.allclose(kp[:, :3], cum, atol=1e-12)
    assert np.allclose(kp[:, 3], [1.0, 0.0] + [0.0] * model.n_joints, atol=1e-12)


def test_keypoints_base_row(model):
    s = robot.RobotState(1, 2, 0, model.mid_joints())
    kp = robot.keypoints(model, s)
    assert np.allclose(kp[0], [1, 2, 0, 1], atol=1e-12)


def test_keypoints_match_homogeneous_oracle(model):
    rng = seeded_rng(31)
    for _ in range(100):
        s = random_state(model, rng)
        kp = robot.keypoints(model, s)
        oracle, _ = fk_oracle(model, s)
        assert np.abs(kp[:, :3] - oracle).max() < 1e-9


def test_keypoints_features(model):
    rng = seeded_rng(32)
    s = random_state(model, rng)
    kp = robot.keypoints(model, s)
    assert kp[0, 3] == pytest.approx(math.cos(s.theta))
    assert kp[1, 3] == pytest.approx(math.sin(s.theta))
    assert np.allclose(kp[2:, 3], robot.normalize_joints(model, s.q))


def test_keypoints_jacobian_trivials(model):
    rng = seeded_rng(33)
    s = random_state(model, rng)
    J = robot.keypoints_jacobian(model, s)
    assert np.allclose(J[0, :, 0], [1, 0, 0])
    # the final joint moves no modeled point
    assert np.allclose(J[:, :, 3 + model.n_joints - 1], 0.0)


def test_keypoints_jacobian_finite_difference(model):
    rng = seeded_rng(34)
    h = 1e-6
    for _ in range(100):
        s = random_state(model, rng)
        v = s.as_vector()
        J = robot.keypoints_jacobian_batch(model, v[None])[0]
        for k in range(v.size):
            dv = np.zeros_like(v)
            dv[k] = h
            fd = (robot.keypoints_batch(model, (v + dv)[None])[0, :, :3]
                  - robot.keypoints_batch(model, (v - dv)[None])[0, :, :3]) / (2 * h)
            scale = max(np.abs(fd).max(), 1.0)
            assert np.abs(J[:, :, k] - fd).max() / scale < 1e-5


# --- joint normalization -----------------------------------------------------

def test_normalize_joint_endpoints(model):
    for i in range(model.n_joints):
        lo, hi = model.joint_limits[i]
        assert robot.normalize_joint(model, i, lo) == pytest.approx(-1.0)
        assert robot.normalize_joint(model, i, hi) == pytest.approx(1.0)
        assert robot.normalize_joint(model, i, (lo + hi) / 2) == pytest.approx(0.0)


def test_normalize_round_trip(model):
    rng = seeded_rng(35)
    q = rng.uniform(-3, 3, model.n_joints)
    qn = robot.normalize_joints(model, q)
    assert np.abs(robot.denormalize_joints(model, qn) - q).max() < 1e-12


# --- collision points ---------------------------------------------------------

def test_collision_points_base_stack(model):
    s = robot.RobotState(0, 0, 0.7, model.mid_joints())
    centers, radii = robot.collision_points(model, s)
    assert centers.shape[0] == model.n_collision_points
    base = [(k, off) for k, (l, off, _) in enumerate(model.collision_points) if l == 0]
    for k, off in base:
        assert np.allclose(centers[k], [0, 0, off[2]], atol=1e-12)


def test_collision_point_count_state_independent(model):
    rng = seeded_rng(36)
    for _ in range(5):
        s = random_state(model, rng)
        centers, _ = robot.collision_points(model, s)
        assert centers.shape == (model.n_collision_points, 3)


def test_collision_points_match_oracle(model):
    rng = seeded_rng(37)
    for _ in range(50):
        s = random_state(model, rng)
        centers, _ = robot.collision_points(model, s)
        assert np.abs(centers - collision_oracle(model, s)).max() < 1e-9


def test_collision_jacobian_finite_difference(model):
    rng = seeded_rng(38)
    h = 1e-6
    for _ in range(20):
        s = random_state(model, rng)
        v = s.as_vector()
        _, _, J = robot.collision_points_batch(model, v[None], jacobian=True)
        for k in range(v.size):
            dv = np.zeros_like(v)
            dv[k] = h
            ca, _ = robot.collision_points_batch(model, (v + dv)[None])
            cb, _ = robot.collision_points_batch(model, (v - dv)[None])
            fd = (ca[0] - cb[0]) / (2 * h)
            assert np.abs(J[0, :, :, k] - fd).max() < 1e-5


def test_collision_pathstate_jacobian(model):
    rng = seeded_rng(39)
    h = 1e-7
    for _ in range(10):
        s = random_state(model, rng)
        ps = s.as_path_state()
        ps[2:4] *= 1.3   # heading pair need not be unit norm
        _, _, J = robot.collision_points_pathstate_batch(model, ps[None], jacobian=True)
        for k in range(ps.size):
            dv = np.zeros_like(ps)
            dv[k] = h
            ca, _ = robot.collision_points_pathstate_batch(model, (ps + dv)[None])
            cb, _ = robot.collision_points_pathstate_batch(model, (ps - dv)[None])
            fd = (ca[0] - cb[0]) / (2 * h)
            assert np.abs(J[0, :, :, k] - fd).max() < 1e-4


# --- path-state conversion -----------------------------------------------------

def test_state_from_path_state_basics():
    assert robot.state_from_path_state([0, 0, 1, 0, 0.1]).theta == pytest.approx(0.0)
    s = robot.state_from_path_state([0, 0, 0.6, 0.8, 0.1])
    assert s.theta == pytest.approx(math.atan2(0.8, 0.6))
    with pytest.raises(ValueError):
        robot.state_from_path_state([0, 0, 0, 0, 0.1])


def test_path_state_round_trip(model):
    rng = seeded_rng(40)
    for _ in range(20):
        s = random_state(model, rng)
        back = robot.state_from_path_state(s.as_path_state())
        assert abs(robot.wrap_angle(back.theta - s.theta)) < 1e-12


# --- task frame ------------------------------------------------------------------

def test_task_frame_quarter_turn():
    start = robot.RobotState(0, 0, 0.3, [0.0])
    goal = robot.RobotState(0, 5, 0.1, [0.0])
    f = robot.task_frame(start, goal)
    assert np.allclose(f.apply_points([0, 5, 1]), [5, 0, 1], atol=1e-12)


def test_task_frame_degenerate_uses_start_heading():
    start = robot.RobotState(1, 1, 0.7, [0.0])
    goal = robot.RobotState(1, 1, -0.4, [0.0])
    f = robot.task_frame(start, goal)
    assert f.theta_d == pytest.approx(0.7)


def test_task_frame_goal_on_x_axis():
    rng = seeded_rng(41)
    for _ in range(50):
        start = robot.RobotState(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3), [0.0])
        goal = robot.RobotState(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3), [0.0])
        f = robot.task_frame(start, goal)
        g = f.apply_points([goal.x, goal.y, 0.0])
        assert abs(g[1]) < 1e-12 and g[0] >= 0
        s = f.apply_points([start.x, start.y, 0.0])
        assert np.allclose(s, 0.0, atol=1e-12)


def test_task_frame_preserves_distances():
    rng = seeded_rng(42)
    start = robot.RobotState(1.0, -2.0, 0.5, [0.0])
    goal = robot.RobotState(3.0, 4.0, 0.0, [0.0])
    f = robot.task_frame(start, goal)
    a = rng.uniform(-5, 5, size=(30, 3))
    b = rng.uniform(-5, 5, size=(30, 3))
    da = np.linalg.norm(f.apply_points(a) - f.apply_points(b), axis=1)
    assert np.allclose(da, np.linalg.norm(a - b, axis=1), atol=1e-12)


def test_task_frame_state_round_trip(model):
    rng = seeded_rng(43)
    start = random_state(model, rng)
    goal = random_state(model, rng)
    f = robot.task_frame(start, goal)
    s = random_state(model, rng)
    back = f.invert_state(f.apply_state(s))
    assert abs(back.x - s.x) < 1e-12 and abs(back.y - s.y) < 1e-12
    assert abs(robot.wrap_angle(back.theta - s.theta)) < 1e-12


# --- persistence --------------------------------------------------------------------

def test_model_json_round_trip(tmp_path, model):
    f = tmp_path / "model.json"
    robot.save_model(model, f)
    m2 = robot.load_model(f)
    assert np.array_equal(m2.link_vectors, model.link_vectors)
    assert m2.joint_axes == model.joint_axes
    assert np.array_equal(m2.joint_limits, model.joint_limits)
    assert len(m2.collision_points) == len(model.collision_points)
    for (l1, o1, r1), (l2, o2, r2) in zip(m2.collision_points, model.collision_points):
        assert l1 == l2 and np.array_equal(o1, o2) and r1 == r2
    rng = seeded_rng(44)
    s = random_state(model, rng)
    assert np.array_equal(robot.keypoints(model, s), robot.keypoints(m2, s))
