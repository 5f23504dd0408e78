"""Kinematics of the differential-drive mobile manipulator.

The robot is a diff-drive base at (x, y, theta) on SE(2) carrying an
N_m-joint serial arm. Keypoints are the base center, the arm mount, and the
joint positions, each tagged with a scalar feature (cos theta, sin theta,
then normalized joint angles). All placement maps are differentiable; the
Jacobians here are analytic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class RobotModel:
    n_joints: int
    link_vectors: np.ndarray          # (n_joints+1, 3) l_1..l_{N_m+1}, parent frames
    joint_axes: tuple                 # per joint, "z" or "y"
    joint_limits: np.ndarray          # (n_joints, 2) [min, max] rad
    base_radius: float = 0.30
    base_height: float = 0.40
    collision_points: tuple = ()      # ((link_index, offset(3,), radius), ...)
    v_max: float = 1.0                # base speed limit, m/s
    omega_max: float = 1.5            # base yaw rate limit, rad/s
    acc_max: float = 1.0
    omega_dot_max: float = 2.0
    joint_vel_max: float = 1.5
    joint_acc_max: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "link_vectors", np.asarray(self.link_vectors, dtype=float))
        object.__setattr__(self, "joint_limits", np.asarray(self.joint_limits, dtype=float))
        if self.n_joints < 1:
            raise ValueError("need at least one joint")
        if self.link_vectors.shape != (self.n_joints + 1, 3):
            raise ValueError(f"link_vectors must be ({self.n_joints + 1}, 3)")
        if len(self.joint_axes) != self.n_joints or any(a not in ("z", "y") for a in self.joint_axes):
            raise ValueError("joint_axes must name 'z' or 'y' per joint")
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ValueError("joint limits must satisfy min < max")
        cp = tuple((int(l), np.asarray(o, dtype=float), float(r)) for l, o, r in self.collision_points)
        if any(r <= 0 for _, _, r in cp):
            raise ValueError("collision radii must be positive")
        object.__setattr__(self, "collision_points", cp)

    @property
    def n_collision_points(self):
        return len(self.collision_points)

    def mid_joints(self):
        return self.joint_limits.mean(axis=1)


@dataclass
class RobotState:
    x: float
    y: float
    theta: float
    q: np.ndarray

    def __post_init__(self):
        self.x, self.y = float(self.x), float(self.y)
        self.theta = wrap_angle(self.theta)
        self.q = np.asarray(self.q, dtype=float)

    def as_vector(self):
        """[x, y, theta, q...]"""
        return np.concatenate([[self.x, self.y, self.theta], self.q])

    def as_path_state(self):
        """[x, y, cos theta, sin theta, q...]"""
        return np.concatenate([[self.x, self.y, math.cos(self.theta), math.sin(self.theta)], self.q])

    @classmethod
    def from_vector(cls, v):
        return cls(v[0], v[1], v[2], np.asarray(v[3:], dtype=float))


def wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def state_from_path_state(ps):
    """Invert the [x, y, c, s, q...] encoding; (c, s) need not be unit norm."""
    ps = np.asarray(ps, dtype=float)
    c, s = ps[2], ps[3]
    if c == 0.0 and s == 0.0:
        raise ValueError("degenerate heading: (cos, sin) = (0, 0)")
    return RobotState(ps[0], ps[1], math.atan2(s, c), ps[4:])


def default_model():
    """7-DoF arm on a diff-drive base; all numbers are config-file overridable."""
    links = np.array([
        [0.16, 0.00, 0.35],   # arm mount relative to base center
        [0.00, 0.00, 0.11],
        [0.00, 0.00, 0.32],
        [0.09, 0.00, 0.00],
        [0.00, 0.00, 0.32],
        [0.09, 0.00, 0.00],
        [0.00, 0.00, 0.16],
        [0.12, 0.00, 0.00],
    ])
    axes = ("z", "y", "z", "y", "z", "y", "z")
    limits = np.array([[-2.8, 2.8] if a == "z" else [-1.7, 1.7] for a in axes])
    collision = [(0, (0.0, 0.0, 0.36), 0.32), (0, (0.0, 0.0, 0.55), 0.32)]
    for j in range(2, 9):
        for frac in (0.5, 1.0):
            collision.append((j, tuple(frac * links[j - 1]), 0.06))
    return RobotModel(
        n_joints=7, link_vectors=links, joint_axes=axes, joint_limits=limits,
        collision_points=tuple(collision))


# ---------------------------------------------------------------------------
# joint normalization


def normalize_joint(model, i, q_i):
    lo, hi = model.joint_limits[i]
    return (2.0 * q_i - hi - lo) / (hi - lo)


def denormalize_joint(model, i, qn):
    lo, hi = model.joint_limits[i]
    return (qn * (hi - lo) + hi + lo) / 2.0


def normalize_joints(model, q):
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    return (2.0 * np.asarray(q, dtype=float) - hi - lo) / (hi - lo)


def denormalize_joints(model, qn):
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    return (np.asarray(qn, dtype=float) * (hi - lo) + hi + lo) / 2.0


# ---------------------------------------------------------------------------
# batched forward kinematics

_AXIS = {"z": np.array([0.0, 0.0, 1.0]), "y": np.array([0.0, 1.0, 0.0])}


def _cross(a, b):
    """Cross product over the last axis without np.cross's axis plumbing."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _rot_batch(axis, angles):
    """(B,3,3) rotations about a principal axis."""
    c, s = np.cos(angles), np.sin(angles)
    B = angles.shape[0]
    R = np.zeros((B, 3, 3))
    if axis == "z":
        R[:, 0, 0], R[:, 0, 1] = c, -s
        R[:, 1, 0], R[:, 1, 1] = s, c
        R[:, 2, 2] = 1.0
    else:
        R[:, 0, 0], R[:, 0, 2] = c, s
        R[:, 1, 1] = 1.0
        R[:, 2, 0], R[:, 2, 2] = -s, c
    return R


def _fk_chain(model, xy, theta, q):
    """Keypoint positions, per-link frames, and joint axis lines, batched.

    Returns (t, R, axes_world) with t (B, N_m+2, 3) keypoint positions,
    R (B, N_m+2, 3, 3) where R[:, j] rotates link j+1's frame (R_cum(j+1)),
    and axes_world (B, N_m, 3) world directions of each joint axis.
    """
    B = theta.shape[0]
    nm = model.n_joints
    t = np.zeros((B, nm + 2, 3))
    t[:, 0, :2] = xy
    R = np.zeros((B, nm + 1, 3, 3))
    R[:, 0] = _rot_batch("z", theta)
    t[:, 1] = t[:, 0] + R[:, 0] @ model.link_vectors[0]
    axes_world = np.zeros((B, nm, 3))
    cur = R[:, 0]
    for j in range(2, nm + 2):
        if j >= 3:
            i = j - 3   # joint index applied between link j-1 and j
            axes_world[:, i] = cur @ _AXIS[model.joint_axes[i]]
            cur = cur @ _rot_batch(model.joint_axes[i], q[:, i])
        R[:, j - 1] = cur
        t[:, j] = t[:, j - 1] + cur @ model.link_vectors[j - 1]
    # the final joint rotates nothing in the modeled chain; record its axis anyway
    axes_world[:, nm - 1] = cur @ _AXIS[model.joint_axes[nm - 1]]
    return t, R, axes_world


def keypoints_batch(model, states):
    """states (B, 3+N_m) rows [x, y, theta, q...] -> (B, N_m+2, 4) keypoints."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    xy, theta, q = states[:, :2], states[:, 2], states[:, 3:]
    t, _, _ = _fk_chain(model, xy, theta, q)
    feats = np.concatenate(
        [np.cos(theta)[:, None], np.sin(theta)[:, None], normalize_joints(model, q)], axis=1)
    return np.concatenate([t, feats[:, :, None]], axis=2)


def keypoints(model, state):
    return keypoints_batch(model, state.as_vector()[None, :])[0]


def keypoints_jacobian_batch(model, states):
    """d(keypoint positions)/d(x, y, theta, q): (B, N_m+2, 3, 3+N_m)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    B = states.shape[0]
    nm = model.n_joints
    xy, theta, q = states[:, :2], states[:, 2], states[:, 3:]
    t, _, axes_world = _fk_chain(model, xy, theta, q)
    J = np.zeros((B, nm + 2, 3, 3 + nm))
    J[:, :, 0, 0] = 1.0
    J[:, :, 1, 1] = 1.0
    zhat = np.array([0.0, 0.0, 1.0])
    rel = t - t[:, :1]
    J[:, :, :, 2] = _cross(zhat, rel)
    for i in range(nm - 1):
        # joint i pivots at keypoint i+2 and moves keypoints i+3 onward
        rel_i = t[:, i + 3:] - t[:, i + 2][:, None, :]
        J[:, i + 3:, :, 3 + i] = _cross(axes_world[:, i][:, None, :], rel_i)
    return J


def keypoints_jacobian(model, state):
    return keypoints_jacobian_batch(model, state.as_vector()[None, :])[0]


# ---------------------------------------------------------------------------
# collision points


def collision_points_batch(model, states, jacobian=False):
    """Sphere centers of the collision model for state rows [x, y, theta, q...].

    Returns centers (B, N_c, 3) and radii (N_c,); with jacobian=True also
    d(centers)/d(x, y, theta, q) of shape (B, N_c, 3, 3+N_m).
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    B = states.shape[0]
    nm = model.n_joints
    xy, theta, q = states[:, :2], states[:, 2], states[:, 3:]
    t, R, axes_world = _fk_chain(model, xy, theta, q)
    nc = model.n_collision_points
    centers = np.zeros((B, nc, 3))
    radii = np.array([r for _, _, r in model.collision_points])
    for k, (link, offset, _) in enumerate(model.collision_points):
        if link == 0:
            centers[:, k] = t[:, 0] + R[:, 0] @ offset
        else:
            centers[:, k] = t[:, link - 1] + R[:, link - 1] @ offset
    if not jacobian:
        return centers, radii
    J = np.zeros((B, nc, 3, 3 + nm))
    J[:, :, 0, 0] = 1.0
    J[:, :, 1, 1] = 1.0
    zhat = np.array([0.0, 0.0, 1.0])
    J[:, :, :, 2] = _cross(zhat, centers - t[:, :1])
    links = np.array([l for l, _, _ in model.collision_points])
    for i in range(nm - 1):
        # joint i moves every sphere on links >= i+3, pivoting at t_{i+2}
        moved = np.where(links >= i + 3)[0]
        if not len(moved):
            continue
        rel = centers[:, moved] - t[:, i + 2][:, None, :]
        # advanced indexing puts the point axis first
        J[:, moved, :, 3 + i] = _cross(axes_world[:, i][:, None, :], rel).swapaxes(0, 1)
    return centers, radii, J


def collision_points(model, state):
    """Sphere (center, radius) pairs in model order for one state."""
    centers, radii = collision_points_batch(model, state.as_vector()[None, :])
    return centers[0], radii


def collision_points_pathstate_batch(model, path_states, jacobian=False):
    """Collision spheres for path rows [x, y, c, s, q...]; heading via atan2.

    The Jacobian (when requested) is taken with respect to the raw path-state
    coordinates, chaining theta = atan2(s, c) through the placement map.
    """
    ps = np.atleast_2d(np.asarray(path_states, dtype=float))
    c, s = ps[:, 2], ps[:, 3]
    theta = np.arctan2(s, c)
    states = np.concatenate([ps[:, :2], theta[:, None], ps[:, 4:]], axis=1)
    if not jacobian:
        return collision_points_batch(model, states)
    centers, radii, J = collision_points_batch(model, states, jacobian=True)
    B, nc = centers.shape[:2]
    nm = model.n_joints
    Jp = np.zeros((B, nc, 3, 4 + nm))
    Jp[:, :, :, :2] = J[:, :, :, :2]
    norm2 = c * c + s * s
    dth_dc = (-s / norm2)[:, None, None]
    dth_ds = (c / norm2)[:, None, None]
    Jp[:, :, :, 2] = J[:, :, :, 2] * dth_dc
    Jp[:, :, :, 3] = J[:, :, :, 2] * dth_ds
    Jp[:, :, :, 4:] = J[:, :, :, 3:]
    return centers, radii, Jp


# ---------------------------------------------------------------------------
# task-canonical frame


@dataclass(frozen=True)
class TaskFrame:
    origin: np.ndarray    # (2,) start base position
    theta_d: float        # rotation of the +x axis onto the start->goal ray

    @property
    def rotation(self):
        c, s = math.cos(self.theta_d), math.sin(self.theta_d)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def apply_points(self, pts):
        """World -> task frame; accepts (3,) or (N, 3)."""
        pts = np.asarray(pts, dtype=float)
        shift = pts - np.array([self.origin[0], self.origin[1], 0.0])
        return shift @ self.rotation   # row-vector right-multiplication

    def invert_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + np.array([self.origin[0], self.origin[1], 0.0])

    def apply_state(self, state):
        p = self.apply_points(np.array([state.x, state.y, 0.0]))
        return RobotState(p[0], p[1], wrap_angle(state.theta - self.theta_d), state.q)

    def invert_state(self, state):
        p = self.invert_points(np.array([state.x, state.y, 0.0]))
        return RobotState(p[0], p[1], wrap_angle(state.theta + self.theta_d), state.q)


def task_frame(start, goal):
    """Canonical frame: start base at the origin, goal base on the +x axis.

    When start and goal base positions coincide, theta_d falls back to the
    start heading.
    """
    dx, dy = goal.x - start.x, goal.y - start.y
    if abs(dx) < 1e-12 and abs(dy) < 1e-12:
        theta_d = start.theta
    else:
        theta_d = math.atan2(dy, dx)
    return TaskFrame(origin=np.array([start.x, start.y]), theta_d=theta_d)


# ---------------------------------------------------------------------------
# persistence


def model_to_dict(model):
    return {
        "version": MODEL_FORMAT_VERSION,
        "n_joints": model.n_joints,
        "links": model.link_vectors.tolist(),
        "axes": list(model.joint_axes),
        "limits": model.joint_limits.tolist(),
        "base": {"radius": model.base_radius, "height": model.base_height},
        "collision_points": [[l, list(o), r] for l, o, r in model.collision_points],
        "kinodynamic": {
            "v_max": model.v_max, "omega_max": model.omega_max,
            "acc_max": model.acc_max, "omega_dot_max": model.omega_dot_max,
            "joint_vel_max": model.joint_vel_max, "joint_acc_max": model.joint_acc_max,
        },
    }


def model_from_dict(data):
    if data.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported robot model version {data.get('version')}")
    kd = data["kinodynamic"]
    return RobotModel(
        n_joints=data["n_joints"],
        link_vectors=np.asarray(data["links"]),
        joint_axes=tuple(data["axes"]),
        joint_limits=np.asarray(data["limits"]),
        base_radius=data["base"]["radius"],
        base_height=data["base"]["height"],
        collision_points=tuple((l, tuple(o), r) for l, o, r in data["collision_points"]),
        v_max=kd["v_max"], omega_max=kd["omega_max"], acc_max=kd["acc_max"],
        omega_dot_max=kd["omega_dot_max"], joint_vel_max=kd["joint_vel_max"],
        joint_acc_max=kd["joint_acc_max"])


def save_model(model, path):
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path):
    with open(path) as f:
        return model_from_dict(json.load(f))
