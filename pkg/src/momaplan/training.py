"""Training losses (analytic gradients) and the training loop.

Geometric losses are computed in numpy against the predicted path and
injected into the network tape as seed gradients; the focal classification
term and the probability weighting of the geometric term both backpropagate
through the primitive logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import net, robot
from . import tensor as T
from .path import Path, TASK
from .rngs import seeded_rng


@dataclass
class LossWeights:
    safe: float = 50.0
    smooth: float = 0.1
    unip: float = 20.0
    recon: float = 1.0
    focal: float = 1.0
    gamma: float = 2.0


@dataclass(eq=False)
class TrainingSample:
    scene: object
    cloud_task: np.ndarray        # (N_e, 3) task frame
    start_task: robot.RobotState
    goal_task: robot.RobotState
    truth: Path                   # task frame
    truth_index: int
    scene_ref: str = ""
    frame: object = None


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# geometric losses


def loss_safe(states, scene, model):
    """Mean-over-states sum of collision-sphere clearance violations."""
    states = np.asarray(states, dtype=float)
    n = states.shape[0]
    centers, radii, J = robot.collision_points_pathstate_batch(model, states, jacobian=True)
    flat = centers.reshape(-1, 3)
    d = scene.sdf_batch(flat).reshape(n, -1)
    viol = radii[None, :] - d
    active = viol > 0.0
    value = float(viol[active].sum()) / n
    grad = np.zeros_like(states)
    if active.any():
        g_sdf = scene.sdf_gradient_batch(flat).reshape(n, -1, 3)
        grad = -np.einsum("bc,bci,bcij->bj", active.astype(float), g_sdf, J) / n
    return value, grad


def _segment_deltas(states):
    """Per-channel inter-state changes: base chord, heading chord, joint L1."""
    dp_vec = np.diff(states[:, :2], axis=0)
    dp = np.linalg.norm(dp_vec, axis=1)
    dth_vec = np.diff(states[:, 2:4], axis=0)
    dth = np.linalg.norm(dth_vec, axis=1)
    dq = np.abs(np.diff(states[:, 4:], axis=0)).sum(axis=1)
    return dp, dth, dq, dp_vec, dth_vec


def loss_smooth(pred, truth):
    """Hinge on each channel's total change exceeding the truth path's."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    dp, dth, dq, dp_vec, dth_vec = _segment_deltas(pred)
    dp_t, dth_t, dq_t, _, _ = _segment_deltas(truth)
    excess = np.array([dp.sum() - dp_t.sum(), dth.sum() - dth_t.sum(), dq.sum() - dq_t.sum()])
    value = float(np.maximum(excess, 0.0).sum())
    grad = np.zeros_like(pred)
    if excess[0] > 0:
        unit = dp_vec / np.maximum(dp[:, None], 1e-12)
        grad[1:, :2] += unit
        grad[:-1, :2] -= unit
    if excess[1] > 0:
        unit = dth_vec / np.maximum(dth[:, None], 1e-12)
        grad[1:, 2:4] += unit
        grad[:-1, 2:4] -= unit
    if excess[2] > 0:
        sgn = np.sign(np.diff(pred[:, 4:], axis=0))
        grad[1:, 4:] += sgn
        grad[:-1, 4:] -= sgn
    return value, grad


def loss_unip(pred, truth):
    """Population Std of the base segment lengths, normalized by the truth
    arc via sqrt((N_tau - 1) * sum of truth segments)."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    dp, _, _, dp_vec, _ = _segment_deltas(pred)
    dp_t = _segment_deltas(truth)[0]
    n_seg = len(dp)
    total_t = dp_t.sum()
    denom = math.sqrt(n_seg * total_t) if total_t > 0 else 1.0
    mu = dp.mean()
    var = ((dp - mu) ** 2).mean()
    std = math.sqrt(var)
    value = std / denom
    grad = np.zeros_like(pred)
    if std > 1e-15:
        dstd_ddp = (dp - mu) / (n_seg * std)
        coef = dstd_ddp / denom
        unit = dp_vec / np.maximum(dp[:, None], 1e-12)
        contrib = coef[:, None] * unit
        grad[1:, :2] += contrib
        grad[:-1, :2] -= contrib
    return value, grad


def loss_focal(logits, truth_index, gamma=2.0):
    """Focal classification loss on the softmaxed truth probability."""
    logits = np.asarray(logits, dtype=float)
    z = logits - logits.max()
    p = np.exp(z)
    p /= p.sum()
    pt = max(float(p[truth_index]), 1e-12)
    one_minus = 1.0 - pt
    value = -(one_minus**gamma) * math.log(pt)
    dL_dpt = -one_minus**gamma / pt
    if gamma > 0:
        dL_dpt += gamma * one_minus ** (gamma - 1.0) * math.log(pt)
    dpt = -pt * p
    dpt[truth_index] += pt
    return value, dL_dpt * dpt


def geometric_loss(pred, truth, scene, model, lw):
    """Weighted sum of the safety, smoothness, and uniformity terms."""
    ls, gs = loss_safe(pred, scene, model)
    lm, gm = loss_smooth(pred, truth)
    lu, gu = loss_unip(pred, truth)
    value = lw.safe * ls + lw.smooth * lm + lw.unip * lu
    grad = lw.safe * gs + lw.smooth * gm + lw.unip * gu
    return value, grad, {"safe": ls, "smooth": lm, "unip": lu}


# ---------------------------------------------------------------------------
# anchored noising


def anchored_noisy_path(x0, prim, schedule, t, eps):
    """Noisy input at step t anchored on the truth primitive.

    The anchor interpolates linearly from the clean path (t = 0) to the
    primitive (t = truncation step), where the distribution coincides with
    the truncated forward process; variance follows the marginal schedule.
    """
    tt = schedule.t_trunc
    if not 1 <= t <= tt:
        raise ValueError(f"training timestep must lie in [1, {tt}]")
    w = t / tt
    anchor = (1.0 - w) * np.asarray(x0) + w * np.asarray(prim)
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * anchor + math.sqrt(1.0 - ab) * np.asarray(eps)


# ---------------------------------------------------------------------------
# full objective


def total_loss(sample, lib, weights, enc_cfg, den_cfg, model, schedule, lw, rng,
               t_eps=None):
    """Single-sample loss and parameter gradients.

    Draws (t, eps), noises the truth path toward its primitive anchor, runs
    the network, and combines clean-path reconstruction, the
    probability-weighted geometric losses, and focal classification.
    Pass t_eps=(t, eps) to fix the draw (gradient checks).
    """
    x0 = sample.truth.states
    prim = lib.centroids[sample.truth_index]
    if t_eps is None:
        t = int(rng.integers(1, schedule.t_trunc + 1))
        eps = rng.standard_normal(x0.shape)
    else:
        t, eps = t_eps
    x_t = anchored_noisy_path(x0, prim, schedule, t, eps)

    tape = T.Tape()
    w = net.wrap_weights(tape, weights)
    kp = net.keypoint_sequence(model, sample.start_task, sample.goal_task).astype(np.float32)
    bv = net.boundary_vector(model, sample.start_task, sample.goal_task).astype(np.float32)
    tokens, pooled, _ = net.forward_encoder(tape, w, enc_cfg, sample.cloud_task.astype(np.float32), kp, bv)
    out = net.forward_denoiser(tape, w, den_cfg, x_t[None].astype(np.float32), t, tokens)
    logits_t = net.forward_primitive_head(tape, w, pooled)

    tau_hat = out.data[0].astype(float)
    logits = logits_t.data.astype(float)

    geo, dgeo, parts = geometric_loss(tau_hat, x0, sample.scene, model, lw)
    z = logits - logits.max()
    p = np.exp(z)
    p /= p.sum()
    pt = float(p[sample.truth_index])
    lf, gf = loss_focal(logits, sample.truth_index, lw.gamma)
    diff = tau_hat - x0
    mse = float((diff * diff).mean())
    d_mse = 2.0 * diff / diff.size

    loss = lw.recon * mse + pt * geo + lw.focal * lf
    if not np.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss: mse={mse}, geo={geo}, focal={lf}, t={t}")

    seed_path = (lw.recon * d_mse + pt * dgeo)[None].astype(np.float32)
    dpt = -pt * p
    dpt[sample.truth_index] += pt
    seed_logits = (lw.focal * gf + geo * dpt).astype(np.float32)
    tape.backward([(out, seed_path), (logits_t, seed_logits)])

    grads = {k: (w[k].grad if w[k].grad is not None else np.zeros_like(weights[k]))
             for k in weights}
    parts.update({"mse": mse, "focal": lf, "p_truth": pt, "geo": geo, "loss": float(loss)})
    return float(loss), grads, parts


# ---------------------------------------------------------------------------
# training loop


def train(samples, lib, enc_cfg, den_cfg, model, schedule, lw=None, epochs=10, seed=0,
          lr=1e-4, batch_size=16, weights=None, log_fn=None):
    """Mini-batch Adam loop; deterministic for a fixed seed.

    Returns (weights, curves) where curves is one dict per epoch with the
    mean loss and component means.
    """
    if not samples:
        raise ValueError("empty training set")
    lw = lw or LossWeights()
    if weights is None:
        weights = net.init_weights(enc_cfg, den_cfg, model, seed=seed)
    state = T.AdamState()
    rng = seeded_rng(seed, 808)
    curves = []
    keys = ("loss", "mse", "geo", "focal", "safe", "smooth", "unip", "p_truth")
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        sums = dict.fromkeys(keys, 0.0)
        count = 0
        for b0 in range(0, len(order), batch_size):
            batch = order[b0:b0 + batch_size]
            acc = None
            for idx in batch:
                loss, grads, parts = total_loss(samples[idx], lib, weights, enc_cfg, den_cfg,
                                                model, schedule, lw, rng)
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] += grads[k]
                for k in keys:
                    sums[k] += parts[k]
                count += 1
            for k in acc:
                acc[k] /= len(batch)
            T.adam_step(weights, acc, state, lr=lr)
        row = {"epoch": epoch, **{k: sums[k] / count for k in keys}}
        curves.append(row)
        if log_fn:
            log_fn(row)
    return weights, curves


def write_curves(filename, curves):
    import csv
    with open(filename, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(curves[0].keys()))
        writer.writeheader()
        writer.writerows({k: repr(v) if isinstance(v, float) else v for k, v in row.items()}
                         for row in curves)


# ---------------------------------------------------------------------------
# dataset loading


def load_training_samples(data_dir, model, n_points=512, require_labels=True):
    """Records -> TrainingSamples; the cloud seed is the referenced scene's seed."""
    import glob
    import os

    from . import path as mpath
    from . import scene as mscene

    samples = []
    scenes = {}
    for fname in sorted(glob.glob(os.path.join(str(data_dir), "sample_*.nmpt"))):
        rec = mpath.load_record(fname)
        if require_labels and rec["label"] < 0:
            raise ValueError(f"{fname} is unlabeled; build the primitive library first")
        ref = rec["scene_ref"]
        if ref not in scenes:
            sc = mscene.load_scene(os.path.join(str(data_dir), ref))
            cloud = mscene.sample_surface(sc, n_points, seed=sc.seed).points
            scenes[ref] = (sc, cloud)
        sc, cloud = scenes[ref]
        frame = robot.task_frame(rec["start"], rec["goal"])
        samples.append(TrainingSample(
            scene=sc,
            cloud_task=frame.apply_points(cloud),
            start_task=frame.apply_state(rec["start"]),
            goal_task=frame.apply_state(rec["goal"]),
            truth=rec["path"],
            truth_index=rec["label"],
            scene_ref=ref,
            frame=frame))
    return samples


def label_records(data_dir, lib):
    """Second collection pass: write truth-primitive labels into the records."""
    import glob
    import os

    from . import path as mpath
    from . import primitive

    count = 0
    for fname in sorted(glob.glob(os.path.join(str(data_dir), "sample_*.nmpt"))):
        rec = mpath.load_record(fname)
        idx, _ = primitive.truth_primitive(lib, rec["path"])
        mpath.save_record(fname, mpath.Path(rec["path_f32"].astype(float), mpath.TASK),
                          rec["start"], rec["goal"], rec["scene_ref"], label=idx)
        count += 1
    return count
