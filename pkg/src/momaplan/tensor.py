"""Dense-tensor engine with reverse-mode autodiff on an explicit tape.

Ops record backward closures in execution order; a single reverse sweep per
forward pass accumulates exact analytic gradients. Storage is f32 by default
(f64 tapes exist for optimization work); reductions accumulate in f64.
"""

from __future__ import annotations

import math
import struct

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "tape", "requires")

    def __init__(self, data, tape, requires):
        self.data = data
        self.grad = None
        self.tape = tape
        self.requires = requires

    @property
    def shape(self):
        return self.data.shape

    def _acc(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed=None):
        self.tape.backward([(self, seed)])


class Tape:
    """Execution-ordered op record; one backward pass per forward pass."""

    def __init__(self, dtype=np.float32):
        self.dtype = dtype
        self.ops = []

    def leaf(self, data, requires=True):
        return Tensor(np.asarray(data, dtype=self.dtype), self, requires)

    def constant(self, data):
        return Tensor(np.asarray(data, dtype=self.dtype), self, False)

    def _node(self, data, requires):
        return Tensor(np.asarray(data, dtype=self.dtype), self, requires)

    def backward(self, seeds):
        for t, g in seeds:
            if g is None:
                g = np.ones_like(t.data)
            t._acc(np.asarray(g, dtype=self.dtype))
        for op in reversed(self.ops):
            op()


def _wrap(tape, x):
    return x if isinstance(x, Tensor) else tape.constant(x)


def _unbroadcast(g, shape):
    """Sum the gradient over axes that numpy broadcasting expanded."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    t = a.tape if isinstance(a, Tensor) else b.tape
    a, b = _wrap(t, a), _wrap(t, b)
    out = t._node(a.data + b.data, a.requires or b.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            if a.requires:
                a._acc(_unbroadcast(out.grad, a.shape))
            if b.requires:
                b._acc(_unbroadcast(out.grad, b.shape))
        t.ops.append(bwd)
    return out


def sub(a, b):
    t = a.tape if isinstance(a, Tensor) else b.tape
    a, b = _wrap(t, a), _wrap(t, b)
    out = t._node(a.data - b.data, a.requires or b.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            if a.requires:
                a._acc(_unbroadcast(out.grad, a.shape))
            if b.requires:
                b._acc(_unbroadcast(-out.grad, b.shape))
        t.ops.append(bwd)
    return out


def mul(a, b):
    t = a.tape if isinstance(a, Tensor) else b.tape
    a, b = _wrap(t, a), _wrap(t, b)
    out = t._node(a.data * b.data, a.requires or b.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            if a.requires:
                a._acc(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires:
                b._acc(_unbroadcast(out.grad * a.data, b.shape))
        t.ops.append(bwd)
    return out


def div(a, b):
    t = a.tape if isinstance(a, Tensor) else b.tape
    a, b = _wrap(t, a), _wrap(t, b)
    out = t._node(a.data / b.data, a.requires or b.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            if a.requires:
                a._acc(_unbroadcast(out.grad / b.data, a.shape))
            if b.requires:
                b._acc(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))
        t.ops.append(bwd)
    return out


def neg(a):
    out = a.tape._node(-a.data, a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(-out.grad)
        a.tape.ops.append(bwd)
    return out


def scale(a, s):
    out = a.tape._node(a.data * s, a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(out.grad * s)
        a.tape.ops.append(bwd)
    return out


def add_scalar(a, s):
    out = a.tape._node(a.data + s, a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(out.grad)
        a.tape.ops.append(bwd)
    return out


def matmul(a, b):
    t = a.tape if isinstance(a, Tensor) else b.tape
    a, b = _wrap(t, a), _wrap(t, b)
    out = t._node(np.matmul(a.data, b.data), a.requires or b.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if a.requires:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if b.data.ndim > 1 \
                    else np.multiply.outer(g, b.data)
                a._acc(_unbroadcast(ga, a.shape))
            if b.requires:
                if a.data.ndim > 1:
                    gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                else:
                    gb = np.multiply.outer(a.data, g)
                b._acc(_unbroadcast(gb, b.shape))
        t.ops.append(bwd)
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a):
    out = a.tape._node(np.maximum(a.data, 0.0), a.requires)
    if out.requires:
        mask = a.data > 0.0
        def bwd():
            if out.grad is not None:
                a._acc(out.grad * mask)
        a.tape.ops.append(bwd)
    return out


_GELU_K = math.sqrt(2.0 / math.pi)


def gelu(a):
    x = a.data
    inner = _GELU_K * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = a.tape._node(0.5 * x * (1.0 + th), a.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_K * (1.0 + 3 * 0.044715 * x * x)
            a._acc(out.grad * d.astype(a.tape.dtype))
        a.tape.ops.append(bwd)
    return out


def softmax(a):
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = a.tape._node(y, a.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            a._acc(y * (g - (g * y).sum(axis=-1, keepdims=True)))
        a.tape.ops.append(bwd)
    return out


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize the last axis, then scale and shift."""
    t = a.tape
    gamma, beta = _wrap(t, gamma), _wrap(t, beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True, dtype=np.float64)
    sigma = np.sqrt(var + eps)
    xhat = ((x - mu) / sigma).astype(t.dtype)
    out = t._node(xhat * gamma.data + beta.data, a.requires or gamma.requires or beta.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if gamma.requires:
                gamma._acc(_unbroadcast(g * xhat, gamma.shape))
            if beta.requires:
                beta._acc(_unbroadcast(g, beta.shape))
            if a.requires:
                gh = g * gamma.data
                m1 = gh.mean(axis=-1, keepdims=True, dtype=np.float64)
                m2 = (gh * xhat).mean(axis=-1, keepdims=True, dtype=np.float64)
                a._acc(((gh - m1 - xhat * m2) / sigma).astype(t.dtype))
        t.ops.append(bwd)
    return out


# ---------------------------------------------------------------------------
# structure


def concat(tensors, axis=-1):
    t = tensors[0].tape
    out = t._node(np.concatenate([x.data for x in tensors], axis=axis),
                  any(x.requires for x in tensors))
    if out.requires:
        sizes = [x.data.shape[axis] for x in tensors]
        splits = np.cumsum(sizes)[:-1]
        def bwd():
            if out.grad is None:
                return
            for x, piece in zip(tensors, np.split(out.grad, splits, axis=axis)):
                if x.requires:
                    x._acc(piece)
        t.ops.append(bwd)
    return out


def slice_(a, key):
    out = a.tape._node(a.data[key], a.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            g = np.zeros_like(a.data)
            g[key] = out.grad
            a._acc(g)
        a.tape.ops.append(bwd)
    return out


def reshape(a, shape):
    out = a.tape._node(a.data.reshape(shape), a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(out.grad.reshape(a.data.shape))
        a.tape.ops.append(bwd)
    return out


def transpose_last(a):
    out = a.tape._node(np.swapaxes(a.data, -1, -2), a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(np.swapaxes(out.grad, -1, -2))
        a.tape.ops.append(bwd)
    return out


def embedding_lookup(table, indices):
    indices = np.asarray(indices, dtype=int)
    out = table.tape._node(table.data[indices], table.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            g = np.zeros_like(table.data)
            np.add.at(g, indices, out.grad)
            table._acc(g)
        table.tape.ops.append(bwd)
    return out


def sinusoidal_position_encoding(tape, positions, dim, base=10000.0):
    """Constant (len(positions), dim) table of interleaved sin/cos waves."""
    positions = np.asarray(positions, dtype=float)
    half = dim // 2
    freqs = base ** (-np.arange(half) / half)
    angles = positions[:, None] * freqs[None, :]
    pe = np.zeros((len(positions), dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : dim - half])
    return tape.constant(pe)


def segment_max(a, segment_ids, n_segments):
    """Per-segment max pool of rows; empty segments yield zero rows.

    Gradient routes to the first argmax row of each segment, making the
    pooled values invariant to within-segment permutation.
    """
    segment_ids = np.asarray(segment_ids, dtype=int)
    x = a.data
    out_data = np.zeros((n_segments,) + x.shape[1:], dtype=a.tape.dtype)
    filled = np.zeros(n_segments, dtype=bool)
    members = [np.where(segment_ids == s)[0] for s in range(n_segments)]
    for s, rows in enumerate(members):
        if len(rows):
            out_data[s] = x[rows].max(axis=0)
            filled[s] = True
    out = a.tape._node(out_data, a.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            g = np.zeros_like(x)
            for s, rows in enumerate(members):
                if not len(rows):
                    continue
                am = rows[x[rows].argmax(axis=0)]
                np.add.at(g, (am, np.arange(x.shape[1])), out.grad[s])
            a._acc(g)
        a.tape.ops.append(bwd)
    return out


# ---------------------------------------------------------------------------
# reductions and scalar math


def sum_(a, axis=None):
    out = a.tape._node(a.data.sum(axis=axis, dtype=np.float64), a.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            a._acc(np.broadcast_to(g, a.data.shape).astype(a.tape.dtype))
        a.tape.ops.append(bwd)
    return out


def mean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.tape._node(a.data.mean(axis=axis, dtype=np.float64), a.requires)
    if out.requires:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            a._acc((np.broadcast_to(g, a.data.shape) / n).astype(a.tape.dtype))
        a.tape.ops.append(bwd)
    return out


def square(a):
    out = a.tape._node(a.data * a.data, a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(out.grad * 2.0 * a.data)
        a.tape.ops.append(bwd)
    return out


def sqrt(a):
    y = np.sqrt(a.data)
    out = a.tape._node(y, a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(out.grad / (2.0 * np.maximum(y, 1e-30)))
        a.tape.ops.append(bwd)
    return out


def exp(a):
    y = np.exp(a.data)
    out = a.tape._node(y, a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(out.grad * y)
        a.tape.ops.append(bwd)
    return out


def sin(a):
    out = a.tape._node(np.sin(a.data), a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(out.grad * np.cos(a.data))
        a.tape.ops.append(bwd)
    return out


def cos(a):
    out = a.tape._node(np.cos(a.data), a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(-out.grad * np.sin(a.data))
        a.tape.ops.append(bwd)
    return out


def blackbox(a, forward_fn, vjp_fn):
    """External differentiable function: forward_fn(x) -> y and
    vjp_fn(x, dL/dy) -> dL/dx, both plain-array callables."""
    out = a.tape._node(forward_fn(a.data), a.requires)
    if out.requires:
        def bwd():
            if out.grad is not None:
                a._acc(np.asarray(vjp_fn(a.data, out.grad), dtype=a.tape.dtype))
        a.tape.ops.append(bwd)
    return out


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    def __init__(self):
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, state, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place on the params dict."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
    return params, state


# ---------------------------------------------------------------------------
# weights persistence

WEIGHTS_MAGIC = b"NMWT"
WEIGHTS_VERSION = 1


def save_weights(filename, weights):
    """weights: ordered dict name -> f32 array; bit-exact round trip."""
    with open(filename, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<II", WEIGHTS_VERSION, len(weights)))
        for name, arr in weights.items():
            blob = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_weights(filename):
    out = {}
    with open(filename, "rb") as f:
        magic = f.read(4)
        if magic != WEIGHTS_MAGIC:
            raise ValueError(f"bad weights magic {magic!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weights version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            arr = np.frombuffer(f.read(4 * int(np.prod(shape))), dtype="<f4").reshape(shape)
            out[name] = arr.copy()
    return out
