"""Task representation encoder and path denoiser.

The encoder fuses three inputs, all expressed in the task-canonical frame:
a surface point cloud (per-point MLP, grid-pooled into a fixed token
budget), the boundary keypoint sequence (per-keypoint MLP + sinusoidal
positions), and a boundary-state MLP whose output is concatenated onto
every keypoint embedding. Fusion runs self-attention over keypoint tokens
then cross-attention onto the point tokens.

The denoiser embeds the noisy path (one token per state, sinusoidal
positions + timestep embedding), runs two transformer layers with
cross-attention to the task encoding, and predicts the clean path directly.
A separate head maps the pooled encoding to primitive logits, so primitive
selection runs before and independently of denoising.

Training uses the tape forward (exact gradients); inference uses a numpy
fast path that must match it (see tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import robot
from . import tensor as T


@dataclass
class EncoderConfig:
    d_model: int = 128
    n_heads: int = 4
    n_blocks: int = 2
    point_hidden: int = 64
    g_tokens: int = 64
    grid: float = 0.5
    boundary_dim: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")


@dataclass
class DenoiserConfig:
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    ffw: int = 256
    k_primitives: int = 32
    head_hidden: int = 128

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")


@dataclass
class TaskEncoding:
    tokens: np.ndarray    # (T, d_model): keypoint tokens then point tokens
    pooled: np.ndarray    # (d_model,)
    n_keypoint_tokens: int = 0


# ---------------------------------------------------------------------------
# weights


def _linear_init(rng, fan_in, fan_out):
    return (rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)).astype(np.float32)


def init_weights(enc_cfg, den_cfg, model, seed=0):
    """Fresh f32 weight dict covering encoder, denoiser, and primitive head."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 505]))
    d = enc_cfg.d_model
    if den_cfg.d_model != d:
        raise ValueError("encoder and denoiser widths must match for cross-attention")
    nm = model.n_joints
    w = {}

    def lin(name, fi, fo):
        w[f"{name}.w"] = _linear_init(rng, fi, fo)
        w[f"{name}.b"] = np.zeros(fo, dtype=np.float32)

    def ln(name, dim):
        w[f"{name}.g"] = np.ones(dim, dtype=np.float32)
        w[f"{name}.b"] = np.zeros(dim, dtype=np.float32)

    def attn(name):
        for part in ("q", "k", "v", "o"):
            lin(f"{name}.{part}", d, d)

    ph = enc_cfg.point_hidden
    lin("enc.point.l0", 3, ph)
    lin("enc.point.l1", ph, ph)
    lin("enc.point.proj", ph, d)
    ln("enc.point.ln", d)
    lin("enc.kp.l0", 4, d)
    lin("enc.kp.l1", d, d)
    bd = enc_cfg.boundary_dim
    lin("enc.bound.l0", 2 * (4 + nm), bd)
    lin("enc.bound.l1", bd, bd)
    lin("enc.fuse_in", d + bd, d)
    for i in range(enc_cfg.n_blocks):
        ln(f"enc.blk{i}.ln1", d)
        attn(f"enc.blk{i}.self")
        ln(f"enc.blk{i}.ln2", d)
        attn(f"enc.blk{i}.cross")
    ln("enc.out_ln", d)

    lin("den.embed", 4 + nm, d)
    for i in range(den_cfg.n_layers):
        ln(f"den.lyr{i}.ln1", d)
        attn(f"den.lyr{i}.self")
        ln(f"den.lyr{i}.ln2", d)
        attn(f"den.lyr{i}.cross")
        ln(f"den.lyr{i}.ln3", d)
        lin(f"den.lyr{i}.ffw.l0", d, den_cfg.ffw)
        lin(f"den.lyr{i}.ffw.l1", den_cfg.ffw, d)
    ln("den.out_ln", d)
    lin("den.head", d, 4 + nm)
    lin("den.prim.l0", d, den_cfg.head_hidden)
    lin("den.prim.l1", den_cfg.head_hidden, den_cfg.k_primitives)
    return w


# ---------------------------------------------------------------------------
# shared input featurization


def boundary_vector(model, start, goal):
    """Concatenated boundary descriptors with normalized joints."""
    def feat(s):
        return np.concatenate([[s.x, s.y, math.cos(s.theta), math.sin(s.theta)],
                               robot.normalize_joints(model, s.q)])
    return np.concatenate([feat(start), feat(goal)])


def keypoint_sequence(model, start, goal):
    """2(N_m+2) keypoints, base to end effector, start state then goal state."""
    return np.vstack([robot.keypoints(model, start), robot.keypoints(model, goal)])


def point_groups(points, grid, g_tokens):
    """Deterministic grid pooling groups.

    Cells rank by (count desc, cell id asc); points outside the top
    g_tokens cells are dropped. Returns (kept points index, segment ids).
    """
    cells = np.floor(points / grid).astype(np.int64) + 1024
    ids = (cells[:, 0] * 2048 + cells[:, 1]) * 2048 + cells[:, 2]
    uniq, inverse, counts = np.unique(ids, return_inverse=True, return_counts=True)
    order = np.lexsort((uniq, -counts))[:g_tokens]
    rank = np.full(len(uniq), -1, dtype=int)
    rank[order] = np.arange(len(order))
    seg = rank[inverse]
    keep = seg >= 0
    return np.where(keep)[0], seg[keep]


# ---------------------------------------------------------------------------
# tape forward (training)


def _lin_t(w, name, x):
    return T.add(T.matmul(x, w[f"{name}.w"]), w[f"{name}.b"])


def _ln_t(w, name, x):
    return T.layer_norm(x, w[f"{name}.g"], w[f"{name}.b"])


def _attn_t(w, name, q_in, kv_in, n_heads):
    d = q_in.shape[-1]
    dh = d // n_heads
    q = _lin_t(w, f"{name}.q", q_in)
    k = _lin_t(w, f"{name}.k", kv_in)
    v = _lin_t(w, f"{name}.v", kv_in)
    heads = []
    for h in range(n_heads):
        sl = (Ellipsis, slice(h * dh, (h + 1) * dh))
        qh, kh, vh = T.slice_(q, sl), T.slice_(k, sl), T.slice_(v, sl)
        scores = T.scale(T.matmul(qh, T.transpose_last(kh)), 1.0 / math.sqrt(dh))
        heads.append(T.matmul(T.softmax(scores), vh))
    return _lin_t(w, f"{name}.o", T.concat(heads, axis=-1))


def _mlp2_t(w, name, x, act=T.relu):
    return _lin_t(w, f"{name}.l1", act(_lin_t(w, f"{name}.l0", x)))


def forward_encoder(tape, w, enc_cfg, points, kp_seq, bvec):
    """Tape encoder: returns (tokens (T, d), pooled (d,), n_keypoint_tokens)."""
    keep, seg = point_groups(points, enc_cfg.grid, enc_cfg.g_tokens)
    pts = tape.constant(points[keep])
    pf = _mlp2_t(w, "enc.point", pts)
    pf = T.relu(pf)
    pooled_cells = T.segment_max(pf, seg, enc_cfg.g_tokens)
    pt_tok = _ln_t(w, "enc.point.ln", _lin_t(w, "enc.point.proj", pooled_cells))

    kp = tape.constant(kp_seq)
    h = T.relu(_lin_t(w, "enc.kp.l0", kp))
    h = _lin_t(w, "enc.kp.l1", h)
    S = kp_seq.shape[0]
    h = T.add(h, T.sinusoidal_position_encoding(tape, np.arange(S), enc_cfg.d_model))

    bb = _mlp2_t(w, "enc.bound", tape.constant(bvec))
    tiled = T.matmul(tape.constant(np.ones((S, 1), dtype=np.float32)),
                     T.reshape(bb, (1, enc_cfg.boundary_dim)))
    x = _lin_t(w, "enc.fuse_in", T.concat([h, tiled], axis=-1))

    for i in range(enc_cfg.n_blocks):
        h = _ln_t(w, f"enc.blk{i}.ln1", x)
        x = T.add(x, _attn_t(w, f"enc.blk{i}.self", h, h, enc_cfg.n_heads))
        x = T.add(x, _attn_t(w, f"enc.blk{i}.cross", _ln_t(w, f"enc.blk{i}.ln2", x), pt_tok, enc_cfg.n_heads))
    tokens = _ln_t(w, "enc.out_ln", T.concat([x, pt_tok], axis=0))
    pooled = T.mean(tokens, axis=0)
    return tokens, pooled, S


def forward_denoiser(tape, w, den_cfg, path_batch, t, enc_tokens):
    """Tape denoiser: path_batch (B, N_tau, 4+N_m) -> same-shape prediction."""
    B, n_states, dim = path_batch.shape
    x = _lin_t(w, "den.embed", tape.constant(path_batch))
    x = T.add(x, T.sinusoidal_position_encoding(tape, np.arange(n_states), den_cfg.d_model))
    x = T.add(x, T.sinusoidal_position_encoding(tape, np.array([t]), den_cfg.d_model))
    for i in range(den_cfg.n_layers):
        h = _ln_t(w, f"den.lyr{i}.ln1", x)
        x = T.add(x, _attn_t(w, f"den.lyr{i}.self", h, h, den_cfg.n_heads))
        x = T.add(x, _attn_t(w, f"den.lyr{i}.cross", _ln_t(w, f"den.lyr{i}.ln2", x), enc_tokens, den_cfg.n_heads))
        x = T.add(x, _mlp2_t(w, f"den.lyr{i}.ffw", _ln_t(w, f"den.lyr{i}.ln3", x), act=T.gelu))
    out = _lin_t(w, "den.head", _ln_t(w, "den.out_ln", x))
    return out


def forward_primitive_head(tape, w, pooled):
    return _mlp2_t(w, "den.prim", pooled)


def wrap_weights(tape, weights):
    """Leaf tensors for every weight; pass to the tape forwards."""
    return {k: tape.leaf(v) for k, v in weights.items()}


# ---------------------------------------------------------------------------
# numpy fast path (inference)


def _lin_n(w, name, x):
    return x @ w[f"{name}.w"] + w[f"{name}.b"]


def _ln_n(w, name, x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True, dtype=np.float64)
    xhat = ((x - mu) / np.sqrt(var + eps)).astype(np.float32)
    return xhat * w[f"{name}.g"] + w[f"{name}.b"]


def _softmax_n(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _attn_n(w, name, q_in, kv_in, n_heads):
    d = q_in.shape[-1]
    dh = d // n_heads
    q = _lin_n(w, f"{name}.q", q_in)
    k = _lin_n(w, f"{name}.k", kv_in)
    v = _lin_n(w, f"{name}.v", kv_in)
    q = q.reshape(*q.shape[:-1], n_heads, dh)
    k = k.reshape(*k.shape[:-1], n_heads, dh)
    v = v.reshape(*v.shape[:-1], n_heads, dh)
    scores = np.einsum("...qhd,...khd->...hqk", q, k) / math.sqrt(dh)
    attn = _softmax_n(scores)
    out = np.einsum("...hqk,...khd->...qhd", attn, v)
    return _lin_n(w, f"{name}.o", out.reshape(*out.shape[:-2], d))


def _pe_n(positions, dim, base=10000.0):
    positions = np.asarray(positions, dtype=float)
    half = dim // 2
    freqs = base ** (-np.arange(half) / half)
    angles = positions[:, None] * freqs[None, :]
    pe = np.zeros((len(positions), dim), dtype=np.float32)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : dim - half])
    return pe


def encode_task(weights, enc_cfg, model, cloud_task, start_task, goal_task):
    """Inference encoder over task-frame inputs; returns a TaskEncoding."""
    points = np.asarray(cloud_task, dtype=np.float32)
    kp_seq = keypoint_sequence(model, start_task, goal_task).astype(np.float32)
    bvec = boundary_vector(model, start_task, goal_task).astype(np.float32)

    keep, seg = point_groups(points, enc_cfg.grid, enc_cfg.g_tokens)
    pf = np.maximum(_lin_n(weights, "enc.point.l0", points[keep]), 0.0)
    pf = np.maximum(_lin_n(weights, "enc.point.l1", pf), 0.0)
    pooled_cells = np.zeros((enc_cfg.g_tokens, pf.shape[1]), dtype=np.float32)
    np.maximum.at(pooled_cells, seg, pf)   # empty cells stay zero (matches segment_max)
    counts = np.bincount(seg, minlength=enc_cfg.g_tokens)
    pooled_cells[counts == 0] = 0.0
    pt_tok = _ln_n(weights, "enc.point.ln", _lin_n(weights, "enc.point.proj", pooled_cells))

    h = np.maximum(_lin_n(weights, "enc.kp.l0", kp_seq), 0.0)
    h = _lin_n(weights, "enc.kp.l1", h)
    S = kp_seq.shape[0]
    h = h + _pe_n(np.arange(S), enc_cfg.d_model)

    bb = _lin_n(weights, "enc.bound.l1", np.maximum(_lin_n(weights, "enc.bound.l0", bvec), 0.0))
    x = _lin_n(weights, "enc.fuse_in", np.concatenate([h, np.tile(bb, (S, 1))], axis=-1))

    for i in range(enc_cfg.n_blocks):
        hn = _ln_n(weights, f"enc.blk{i}.ln1", x)
        x = x + _attn_n(weights, f"enc.blk{i}.self", hn, hn, enc_cfg.n_heads)
        x = x + _attn_n(weights, f"enc.blk{i}.cross", _ln_n(weights, f"enc.blk{i}.ln2", x), pt_tok, enc_cfg.n_heads)
    tokens = _ln_n(weights, "enc.out_ln", np.concatenate([x, pt_tok], axis=0))
    return TaskEncoding(tokens=tokens, pooled=tokens.mean(axis=0, dtype=np.float64).astype(np.float32),
                        n_keypoint_tokens=S)


def denoise(weights, den_cfg, path_batch, t, enc):
    """Inference denoiser; accepts (N_tau, D) or (B, N_tau, D).

    Returns (clean-path prediction, primitive logits). The logits depend on
    the task encoding only.
    """
    single = path_batch.ndim == 2
    x_in = np.asarray(path_batch, dtype=np.float32)
    if single:
        x_in = x_in[None]
    if t < 1:
        raise ValueError(f"timestep must be >= 1, got {t}")
    B, n_states, dim = x_in.shape
    x = _lin_n(weights, "den.embed", x_in)
    x = x + _pe_n(np.arange(n_states), den_cfg.d_model)
    x = x + _pe_n(np.array([t]), den_cfg.d_model)
    for i in range(den_cfg.n_layers):
        h = _ln_n(weights, f"den.lyr{i}.ln1", x)
        x = x + _attn_n(weights, f"den.lyr{i}.self", h, h, den_cfg.n_heads)
        x = x + _attn_n(weights, f"den.lyr{i}.cross", _ln_n(weights, f"den.lyr{i}.ln2", x),
                        enc.tokens, den_cfg.n_heads)
        h = _ln_n(weights, f"den.lyr{i}.ln3", x)
        h = _lin_n(weights, f"den.lyr{i}.ffw.l0", h)
        h = 0.5 * h * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (h + 0.044715 * h**3)))
        x = x + _lin_n(weights, f"den.lyr{i}.ffw.l1", h)
    out = _lin_n(weights, "den.head", _ln_n(weights, "den.out_ln", x))
    logits = classify(weights, den_cfg, enc)
    return (out[0] if single else out), logits


def classify(weights, den_cfg, enc):
    """Primitive logits from the pooled task encoding alone."""
    h = np.maximum(_lin_n(weights, "den.prim.l0", enc.pooled), 0.0)
    return _lin_n(weights, "den.prim.l1", h)


# ---------------------------------------------------------------------------
# config persistence (sidecar JSON next to the weights file)


def configs_to_dict(enc_cfg, den_cfg, n_points=512):
    return {
        "version": 1,
        "n_points": n_points,
        "encoder": {
            "d_model": enc_cfg.d_model, "n_heads": enc_cfg.n_heads,
            "n_blocks": enc_cfg.n_blocks, "point_hidden": enc_cfg.point_hidden,
            "g_tokens": enc_cfg.g_tokens, "grid": enc_cfg.grid,
            "boundary_dim": enc_cfg.boundary_dim,
        },
        "denoiser": {
            "d_model": den_cfg.d_model, "n_heads": den_cfg.n_heads,
            "n_layers": den_cfg.n_layers, "ffw": den_cfg.ffw,
            "k_primitives": den_cfg.k_primitives, "head_hidden": den_cfg.head_hidden,
        },
    }


def configs_from_dict(data):
    if data.get("version") != 1:
        raise ValueError(f"unsupported net config version {data.get('version')}")
    enc = EncoderConfig(**data["encoder"])
    den = DenoiserConfig(**data["denoiser"])
    return enc, den, data.get("n_points", 512)


def save_configs(filename, enc_cfg, den_cfg, n_points=512):
    import json
    with open(filename, "w") as f:
        json.dump(configs_to_dict(enc_cfg, den_cfg, n_points), f, indent=2, sort_keys=True)
        f.write("\n")


def load_configs(filename):
    import json
    with open(filename) as f:
        return configs_from_dict(json.load(f))
