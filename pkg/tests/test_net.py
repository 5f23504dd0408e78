import math

import numpy as np
import pytest

from momaplan import net, robot, scene
from momaplan import tensor as T
from momaplan.rngs import seeded_rng

MICRO_ENC = net.EncoderConfig(d_model=16, n_heads=2, n_blocks=2, point_hidden=8,
                              g_tokens=6, grid=1.0, boundary_dim=8)
MICRO_DEN = net.DenoiserConfig(d_model=16, n_heads=2, n_layers=2, ffw=16,
                               k_primitives=5, head_hidden=8)


@pytest.fixture(scope="module")
def model():
    return robot.default_model()


@pytest.fixture(scope="module")
def weights(model):
    return net.init_weights(MICRO_ENC, MICRO_DEN, model, seed=1)


def random_task(model, rng):
    start = robot.RobotState(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3),
                             model.mid_joints() + rng.uniform(-0.3, 0.3, model.n_joints))
    goal = robot.RobotState(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3),
                            model.mid_joints() + rng.uniform(-0.3, 0.3, model.n_joints))
    return start, goal


def encode_world_task(weights, model, sc, start, goal, n_points=128, cloud_seed=3):
    frame = robot.task_frame(start, goal)
    cloud = scene.sample_surface(sc, n_points, seed=cloud_seed).points
    cloud_t = frame.apply_points(cloud)
    return net.encode_task(weights, MICRO_ENC, model, cloud_t,
                           frame.apply_state(start), frame.apply_state(goal))


def test_encoding_shapes(weights, model):
    rng = seeded_rng(100)
    sc = scene.generate_scene("mixed", 5, 0.2)
    start, goal = random_task(model, rng)
    enc = encode_world_task(weights, model, sc, start, goal)
    S = 2 * (model.n_joints + 2)
    assert enc.tokens.shape == (S + MICRO_ENC.g_tokens, MICRO_ENC.d_model)
    assert enc.pooled.shape == (MICRO_ENC.d_model,)
    assert enc.n_keypoint_tokens == S
    assert np.all(np.isfinite(enc.tokens))


def test_canonicalization_invariance(weights, model):
    """Tasks differing only by a rigid SE(2) motion produce one encoding."""
    rng = seeded_rng(101)
    sc = scene.generate_scene("cuboids", 8, 0.15)
    start, goal = random_task(model, rng)
    enc_a = encode_world_task(weights, model, sc, start, goal)

    dx, dy, rot = rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3)
    c, s = math.cos(rot), math.sin(rot)

    def move_xy(x, y):
        return c * x - s * y + dx, s * x + c * y + dy

    moved_obstacles = []
    for o in sc.obstacles:
        nx, ny = move_xy(o.position[0], o.position[1])
        moved_obstacles.append(scene.ObstaclePrimitive(
            o.kind, [nx, ny, o.position[2]], o.yaw + rot,
            half_extents=o.half_extents, radius=o.radius, half_height=o.half_height))
    sc_m = scene.Scene(obstacles=moved_obstacles)
    sc_plain = scene.Scene(obstacles=list(sc.obstacles))

    def move_state(st):
        nx, ny = move_xy(st.x, st.y)
        return robot.RobotState(nx, ny, st.theta + rot, st.q)

    enc_b = encode_world_task(weights, model, sc_m, move_state(start), move_state(goal))
    enc_a2 = encode_world_task(weights, model, sc_plain, start, goal)
    # identical up to float error introduced by the rigid motion
    assert np.abs(enc_a2.tokens - enc_b.tokens).max() < 1e-4
    assert np.abs(enc_a2.pooled - enc_b.pooled).max() < 1e-4


def test_point_permutation_invariance(weights, model):
    rng = seeded_rng(102)
    pts = rng.uniform(-2, 2, size=(64, 3))
    start, goal = random_task(model, rng)
    f = robot.task_frame(start, goal)
    st, gt = f.apply_state(start), f.apply_state(goal)
    enc1 = net.encode_task(weights, MICRO_ENC, model, pts, st, gt)
    enc2 = net.encode_task(weights, MICRO_ENC, model, pts[rng.permutation(64)], st, gt)
    assert np.abs(enc1.tokens - enc2.tokens).max() < 1e-6


def test_zero_weights_finite(model):
    w = {k: np.zeros_like(v) for k, v in net.init_weights(MICRO_ENC, MICRO_DEN, model, 0).items()}
    rng = seeded_rng(103)
    pts = rng.uniform(-2, 2, size=(32, 3))
    start, goal = random_task(model, rng)
    f = robot.task_frame(start, goal)
    enc = net.encode_task(w, MICRO_ENC, model, pts, f.apply_state(start), f.apply_state(goal))
    assert np.all(np.isfinite(enc.tokens))
    out, logits = net.denoise(w, MICRO_DEN, rng.normal(size=(8, 11)).astype(np.float32), 3, enc)
    assert np.all(np.isfinite(out)) and np.all(np.isfinite(logits))


def test_denoiser_output_shapes(weights, model):
    rng = seeded_rng(104)
    sc = scene.generate_scene("mixed", 9, 0.15)
    start, goal = random_task(model, rng)
    enc = encode_world_task(weights, model, sc, start, goal)
    path = rng.normal(size=(64, 4 + model.n_joints)).astype(np.float32)
    out, logits = net.denoise(weights, MICRO_DEN, path, 5, enc)
    assert out.shape == (64, 4 + model.n_joints)
    assert logits.shape == (MICRO_DEN.k_primitives,)
    batch = rng.normal(size=(3, 64, 4 + model.n_joints)).astype(np.float32)
    out_b, _ = net.denoise(weights, MICRO_DEN, batch, 5, enc)
    assert out_b.shape == batch.shape
    assert np.abs(out_b[0] - net.denoise(weights, MICRO_DEN, batch[0], 5, enc)[0]).max() < 1e-5


def test_default_config_paper_sizes(model):
    den = net.DenoiserConfig()
    assert den.k_primitives == 32
    assert den.n_layers == 2


def test_denoiser_rejects_bad_timestep(weights, model):
    rng = seeded_rng(105)
    sc = scene.generate_scene("mixed", 2, 0.15)
    start, goal = random_task(model, rng)
    enc = encode_world_task(weights, model, sc, start, goal)
    with pytest.raises(ValueError):
        net.denoise(weights, MICRO_DEN, np.zeros((8, 11), dtype=np.float32), 0, enc)


def test_tape_and_numpy_forward_agree(weights, model):
    rng = seeded_rng(106)
    sc = scene.generate_scene("cuboids", 3, 0.15)
    start, goal = random_task(model, rng)
    frame = robot.task_frame(start, goal)
    cloud = frame.apply_points(scene.sample_surface(sc, 96, seed=2).points)
    st, gt = frame.apply_state(start), frame.apply_state(goal)

    enc_np = net.encode_task(weights, MICRO_ENC, model, cloud, st, gt)
    path = rng.normal(size=(2, 16, 4 + model.n_joints)).astype(np.float32)
    out_np, logits_np = net.denoise(weights, MICRO_DEN, path, 7, enc_np)

    tape = T.Tape()
    w = net.wrap_weights(tape, weights)
    kp = net.keypoint_sequence(model, st, gt).astype(np.float32)
    bv = net.boundary_vector(model, st, gt).astype(np.float32)
    tokens, pooled, _ = net.forward_encoder(tape, w, MICRO_ENC, cloud.astype(np.float32), kp, bv)
    out_t = net.forward_denoiser(tape, w, MICRO_DEN, path, 7, tokens)
    logits_t = net.forward_primitive_head(tape, w, pooled)

    assert np.abs(tokens.data - enc_np.tokens).max() < 2e-5
    assert np.abs(out_t.data - out_np).max() < 2e-5
    assert np.abs(logits_t.data - logits_np).max() < 2e-5


def test_attention_rows_are_probabilities():
    tape = T.Tape()
    rng = seeded_rng(107)
    x = tape.leaf(rng.normal(size=(5, 8)).astype(np.float32))
    y = T.softmax(x)
    assert np.abs(y.data.sum(axis=-1) - 1.0).max() < 1e-5


def test_denoiser_finite_under_stress(weights, model):
    rng = seeded_rng(108)
    sc = scene.generate_scene("mixed", 4, 0.15)
    start, goal = random_task(model, rng)
    enc = encode_world_task(weights, model, sc, start, goal)
    for scale_f in (1e-3, 1.0, 1e3):
        path = (scale_f * rng.normal(size=(16, 11))).astype(np.float32)
        out, logits = net.denoise(weights, MICRO_DEN, path, 9, enc)
        assert np.all(np.isfinite(out)) and np.all(np.isfinite(logits))


def test_encoder_deterministic(weights, model):
    rng = seeded_rng(109)
    sc = scene.generate_scene("cuboids", 6, 0.15)
    start, goal = random_task(model, rng)
    a = encode_world_task(weights, model, sc, start, goal)
    b = encode_world_task(weights, model, sc, start, goal)
    assert np.array_equal(a.tokens, b.tokens)
