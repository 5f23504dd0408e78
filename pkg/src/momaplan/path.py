"""Fixed-length whole-body paths: resampling, pruning, distances, records.

A path is N_tau states, each [x, y, cos t, sin t, q_1..q_Nm], tagged with the
frame it lives in. Ground-truth paths are produced by equal-interval
resampling, which makes all 63 inter-state base distances identical; the
uniformity training loss is zero on them by construction.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import robot
from .rngs import seeded_rng

RECORD_MAGIC = b"NMPT"
RECORD_VERSION = 1
DEFAULT_N_STATES = 64

WORLD = "world"
TASK = "task"


@dataclass(eq=False)
class Path:
    states: np.ndarray   # (N_tau, 4 + N_m)
    frame: str = WORLD

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] < 5:
            raise ValueError(f"path states must be (N, 4+N_m), got {self.states.shape}")
        if self.frame not in (WORLD, TASK):
            raise ValueError(f"unknown frame tag {self.frame!r}")

    @property
    def n_states(self):
        return self.states.shape[0]

    @property
    def n_joints(self):
        return self.states.shape[1] - 4

    def positions(self):
        return self.states[:, :2]

    def headings(self):
        return np.arctan2(self.states[:, 3], self.states[:, 2])

    def joints(self):
        return self.states[:, 4:]

    def projected(self):
        """Copy with the (cos, sin) pairs renormalized to unit length."""
        out = self.states.copy()
        norm = np.hypot(out[:, 2], out[:, 3])
        if np.any(norm < 1e-12):
            raise ValueError("degenerate heading pair; cannot project")
        out[:, 2] /= norm
        out[:, 3] /= norm
        return Path(out, self.frame)

    def robot_states(self):
        return [robot.state_from_path_state(row) for row in self.states]


@dataclass(eq=False)
class WaypointPath:
    """Variable-length state sequence from the sampling planner."""

    states: list   # of RobotState

    def __post_init__(self):
        if len(self.states) < 2:
            raise ValueError("waypoint path needs at least 2 states")

    def __len__(self):
        return len(self.states)

    def vectors(self):
        return np.stack([s.as_vector() for s in self.states])

    def base_arc_length(self):
        p = self.vectors()[:, :2]
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())

    def variation_totals(self):
        """(base arc, chordal heading total, L1 joint total), as in the smoothness terms."""
        v = self.vectors()
        dp = np.linalg.norm(np.diff(v[:, :2], axis=0), axis=1).sum()
        c, s = np.cos(v[:, 2]), np.sin(v[:, 2])
        dth = np.hypot(np.diff(c), np.diff(s)).sum()
        dq = np.abs(np.diff(v[:, 3:], axis=0)).sum()
        return float(dp), float(dth), float(dq)


# ---------------------------------------------------------------------------
# state interpolation and edge checking (shared by prune and the planner)


def interpolate_state_vectors(a, b, n):
    """n states from a to b: linear base/joints, shortest-arc heading."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    u = np.linspace(0.0, 1.0, n)[:, None]
    out = a + u * (b - a)
    dth = robot.wrap_angle(b[2] - a[2])
    out[:, 2] = a[2] + u[:, 0] * dth
    return out


def edge_resolution(a, b, base_step=0.02, ang_step=0.05):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    n = max(
        math.ceil(np.linalg.norm(b[:2] - a[:2]) / base_step),
        math.ceil(abs(robot.wrap_angle(b[2] - a[2])) / ang_step),
        math.ceil(np.abs(b[3:] - a[3:]).max(initial=0.0) / ang_step),
        1,
    )
    return n + 1


def edge_clear(scene, model, a, b, margin=0.0, base_step=0.02, ang_step=0.05):
    """True when every interpolated collision sphere keeps sdf > radius + margin."""
    states = interpolate_state_vectors(a, b, edge_resolution(a, b, base_step, ang_step))
    centers, radii = robot.collision_points_batch(model, states)
    d = scene.sdf_batch(centers.reshape(-1, 3)).reshape(centers.shape[:2])
    return bool(np.all(d > radii[None, :] + margin))


def state_clear(scene, model, state_vec, margin=0.0):
    centers, radii = robot.collision_points_batch(model, np.asarray(state_vec, dtype=float)[None])
    d = scene.sdf_batch(centers[0])
    return bool(np.all(d > radii + margin))


# ---------------------------------------------------------------------------
# equal-interval resampling


def resample_uniform(waypoints, n_states=DEFAULT_N_STATES, frame=WORLD):
    """Resample onto n_states rows whose base segments all have equal length.

    Sampling is parameterized by arc length along the input polyline; the
    parameters are chosen so the 63 inter-state Euclidean distances are
    equal (bisection over a chord walk, Gauss-Newton polish as fallback).
    On the smooth trajectories and pruned paths this pipeline produces, Std
    of the distances lands at ~1e-12 of the total. A zero-length base path
    falls back to equal-parameter sampling.
    """
    if hasattr(waypoints, "to_waypoint_path"):
        waypoints = waypoints.to_waypoint_path()
    v = waypoints.vectors()
    arc_w = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(v[:, :2], axis=0), axis=1))])
    total = float(arc_w[-1])
    theta_w = np.unwrap(v[:, 2])

    if total < 1e-12:
        u = np.linspace(0.0, len(v) - 1.0, n_states)
        idx = np.clip(np.floor(u).astype(int), 0, len(v) - 2)
        t = (u - idx)[:, None]
        pos = v[idx, :2] + t * (v[idx + 1, :2] - v[idx, :2])
        th = theta_w[idx] + t[:, 0] * (theta_w[idx + 1] - theta_w[idx])
        joints = v[idx, 3:] + t * (v[idx + 1, 3:] - v[idx, 3:])
        rows = np.concatenate([pos, np.cos(th)[:, None], np.sin(th)[:, None], joints], axis=1)
        return Path(rows, frame)

    # positions keyed by arc; drop zero-length segments for the chord solve
    keep = np.concatenate([[True], np.diff(arc_w) > 1e-15])
    pts = v[keep, :2]
    arc_p = arc_w[keep]
    s_params = _equal_chord_params(pts, arc_p, n_states)

    pos = np.column_stack([np.interp(s_params, arc_p, pts[:, 0]),
                           np.interp(s_params, arc_p, pts[:, 1])])
    th = np.interp(s_params, arc_w, theta_w)
    joints = np.column_stack([np.interp(s_params, arc_w, v[:, 3 + j])
                              for j in range(v.shape[1] - 3)])
    rows = np.concatenate([pos, np.cos(th)[:, None], np.sin(th)[:, None], joints], axis=1)
    rows[0] = np.concatenate([v[0, :2], [math.cos(theta_w[0]), math.sin(theta_w[0])], v[0, 3:]])
    rows[-1] = np.concatenate([v[-1, :2], [math.cos(theta_w[-1]), math.sin(theta_w[-1])], v[-1, 3:]])
    return Path(rows, frame)


def _equal_chord_params(pts, arc, n_states):
    """Arc parameters of n_states points on the polyline with equal chords."""
    total = float(arc[-1])
    n_seg = n_states - 1
    # bisection over the common chord; exact when the distance-to-previous
    # function has no local maxima below the chord (true for smooth curves)
    lo, hi = 0.0, total / n_seg
    best = None
    for _ in range(80):
        c = 0.5 * (lo + hi)
        cand, leftover = _chord_walk(pts, arc, c, n_seg)
        if cand is None:
            hi = c
        else:
            best = cand
            lo = c
            if leftover <= 1e-13 * total:
                return np.concatenate([[0.0], cand])
    u = np.concatenate([[0.0], best]) if best is not None else np.linspace(0.0, total, n_states)
    return _polish_chords(pts, arc, u)


def _chord_walk(pts, arc, c, n_steps):
    """First-crossing walk placing n_steps points at chord distance c.

    Returns (arc parameters, leftover arc), or (None, -1) when the polyline
    ends before all points are placed.
    """
    params = np.empty(n_steps)
    y = pts[0]
    j, t = 0, 0.0
    n_seg_in = len(pts) - 1
    for k in range(n_steps):
        placed = False
        while j < n_seg_in:
            a = pts[j] + t * (pts[j + 1] - pts[j])
            d = pts[j + 1] - pts[j]
            rem = 1.0 - t
            f = a - y
            A = d @ d
            B = 2.0 * (f @ d)
            C = f @ f - c * c
            disc = B * B - 4.0 * A * C
            s = None
            if disc >= 0.0 and A > 0.0:
                r = math.sqrt(disc)
                for cand in ((-B - r) / (2 * A), (-B + r) / (2 * A)):
                    if 1e-15 < cand <= rem + 1e-15:
                        s = min(cand, rem)
                        break
            if s is not None:
                t += s
                y = pts[j] + t * (pts[j + 1] - pts[j])
                params[k] = arc[j] + t * (arc[j + 1] - arc[j])
                placed = True
                break
            j += 1
            t = 0.0
        if not placed:
            return None, -1.0
    return params, float(arc[-1] - params[-1])


def _polish_chords(pts, arc, u, iters=200):
    """Damped Gauss-Newton on chord-length residuals for jagged inputs."""
    total = float(arc[-1])

    def chords(uq):
        p = np.column_stack([np.interp(uq, arc, pts[:, 0]), np.interp(uq, arc, pts[:, 1])])
        return np.linalg.norm(np.diff(p, axis=0), axis=1)

    # cumulative-chord fixed point warm-up
    for _ in range(60):
        L = chords(u)
        cum = np.concatenate([[0.0], np.cumsum(L)])
        u = np.interp(np.linspace(0.0, cum[-1], len(u)), cum, u)
        u[0], u[-1] = 0.0, total
    n = len(u)
    lam = 1e-8
    L = chords(u)
    best_u, best_std = u.copy(), L.std()
    h = max(1e-9 * total, 1e-12)
    for _ in range(iters):
        r = L - L.mean()
        J = np.zeros((n - 1, n - 2))
        for k in range(1, n - 1):
            du = np.zeros(n)
            du[k] = h
            J[:, k - 1] = (chords(np.clip(u + du, 0, total)) - chords(np.clip(u - du, 0, total))) / (2 * h)
        J -= J.mean(axis=0, keepdims=True)
        try:
            step = np.linalg.solve(J.T @ J + lam * np.eye(n - 2), J.T @ r)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        u_new = u.copy()
        u_new[1:-1] = np.clip(u_new[1:-1] - step, 0.0, total)
        u_new = np.maximum.accumulate(u_new)
        L_new = chords(u_new)
        if L_new.std() < L.std():
            u, L = u_new, L_new
            lam = max(lam * 0.3, 1e-12)
            if L.std() < best_std:
                best_u, best_std = u.copy(), L.std()
            if best_std <= 1e-12 * total:
                break
        else:
            lam *= 10.0
            if lam > 1e8:
                break
    return best_u


# ---------------------------------------------------------------------------
# pruning


def prune(waypoints, scene, model, seed, max_attempts=300, max_consecutive_failures=50,
          margin=0.0, base_step=0.02):
    """Randomized shortcutting: endpoints fixed, every accepted shortcut is
    collision-checked along the straight state-space interpolation."""
    states = [s.as_vector() for s in waypoints.states]
    rng = seeded_rng(seed, 303)
    failures = 0
    attempts = 0
    while attempts < max_attempts and failures < max_consecutive_failures and len(states) > 2:
        attempts += 1
        i = int(rng.integers(0, len(states) - 2))
        j = int(rng.integers(i + 2, len(states)))
        if edge_clear(scene, model, states[i], states[j], margin=margin, base_step=base_step):
            states = states[: i + 1] + states[j:]
            failures = 0
        else:
            failures += 1
    return WaypointPath([robot.RobotState.from_vector(s) for s in states])


# ---------------------------------------------------------------------------
# distances and frame transforms


def path_distance(a, b):
    """Frobenius distance between two same-shape, same-frame paths."""
    if a.frame != b.frame:
        raise ValueError(f"frame mismatch: {a.frame} vs {b.frame}")
    if a.states.shape != b.states.shape:
        raise ValueError(f"shape mismatch: {a.states.shape} vs {b.states.shape}")
    return float(np.linalg.norm(a.states - b.states))


def to_task_frame(p, frame):
    if p.frame != WORLD:
        raise ValueError("path is already in the task frame")
    return Path(_transform_rows(p.states, frame, inverse=False), TASK)


def from_task_frame(p, frame):
    if p.frame != TASK:
        raise ValueError("path is already in the world frame")
    return Path(_transform_rows(p.states, frame, inverse=True), WORLD)


def _transform_rows(rows, frame, inverse):
    out = rows.copy()
    c, s = math.cos(frame.theta_d), math.sin(frame.theta_d)
    x, y = rows[:, 0], rows[:, 1]
    ch, sh = rows[:, 2], rows[:, 3]
    if not inverse:
        dx, dy = x - frame.origin[0], y - frame.origin[1]
        out[:, 0] = dx * c + dy * s
        out[:, 1] = -dx * s + dy * c
        out[:, 2] = ch * c + sh * s
        out[:, 3] = -ch * s + sh * c
    else:
        out[:, 0] = x * c - y * s + frame.origin[0]
        out[:, 1] = x * s + y * c + frame.origin[1]
        out[:, 2] = ch * c - sh * s
        out[:, 3] = ch * s + sh * c
    return out


# ---------------------------------------------------------------------------
# dataset records


def write_record(fp, path_task, start, goal, scene_ref, label=-1):
    """One training sample: header, f32 task-frame path, f32 world boundary
    states, scene-file reference, truth-primitive label (-1 = unlabeled)."""
    if path_task.frame != TASK:
        raise ValueError("records store task-frame paths")
    arr = path_task.states.astype("<f4")
    boundary = np.stack([start.as_vector(), goal.as_vector()]).astype("<f4")
    ref = scene_ref.encode("utf-8")
    fp.write(RECORD_MAGIC)
    fp.write(struct.pack("<III", RECORD_VERSION, arr.shape[0], arr.shape[1] - 4))
    fp.write(arr.tobytes())
    fp.write(boundary.tobytes())
    fp.write(struct.pack("<I", len(ref)))
    fp.write(ref)
    fp.write(struct.pack("<i", int(label)))


def read_record(fp):
    magic = fp.read(4)
    if magic != RECORD_MAGIC:
        raise ValueError(f"bad record magic {magic!r}")
    version, n_states, n_joints = struct.unpack("<III", fp.read(12))
    if version != RECORD_VERSION:
        raise ValueError(f"unsupported record version {version}")
    arr = np.frombuffer(fp.read(4 * n_states * (4 + n_joints)), dtype="<f4")
    arr = arr.reshape(n_states, 4 + n_joints)
    boundary = np.frombuffer(fp.read(4 * 2 * (3 + n_joints)), dtype="<f4").reshape(2, 3 + n_joints)
    (ref_len,) = struct.unpack("<I", fp.read(4))
    scene_ref = fp.read(ref_len).decode("utf-8")
    (label,) = struct.unpack("<i", fp.read(4))
    return {
        "path_f32": arr,
        "boundary_f32": boundary,
        "path": Path(arr.astype(float), TASK).projected(),
        "start": robot.RobotState.from_vector(boundary[0].astype(float)),
        "goal": robot.RobotState.from_vector(boundary[1].astype(float)),
        "scene_ref": scene_ref,
        "label": label,
    }


def save_record(filename, path_task, start, goal, scene_ref, label=-1):
    with open(filename, "wb") as f:
        write_record(f, path_task, start, goal, scene_ref, label)


def load_record(filename):
    with open(filename, "rb") as f:
        return read_record(f)
