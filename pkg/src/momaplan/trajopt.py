"""Optimization-based post-processing under arc-length/yaw parameterization.

The base trajectory is a(t) (signed arc length) and theta(t) (yaw), each a
C2 piecewise quintic; base positions are recovered by integrating
adot * (cos theta, sin theta), so the goal position enters as an integral
constraint rather than a polynomial endpoint. The free goal variables of
the base are [a_f, theta_f]. Joints are quintics with hard endpoint values.

The objective is unconstrained: time + jerk + quadrature penalties for
clearance and rate limits + an escalated quadratic penalty on the boundary
residual. Gradients are exact (reverse-mode tape in f64); the inner solver
is limited-memory BFGS.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import robot
from . import tensor as T
from .path import Path, WaypointPath
from .rngs import seeded_rng

# quintic Hermite: [u3, u4, u5] = M3INV @ [dy, dv*T, da*T^2], c_k = u_k / T^k
_M3 = np.array([[1.0, 1.0, 1.0], [3.0, 4.0, 5.0], [6.0, 12.0, 20.0]])
_M3INV = np.linalg.inv(_M3)

_GL4 = np.polynomial.legendre.leggauss(4)
_GL16 = np.polynomial.legendre.leggauss(16)


def _coeffs_from_knots(knots, durations):
    """(C, M, 6) local-time quintic coefficients from (C, M+1, 3) knots."""
    v, w, a = knots[:, :, 0], knots[:, :, 1], knots[:, :, 2]
    t = durations[None, :]
    y0, y1 = v[:, :-1], v[:, 1:]
    w0, w1 = w[:, :-1], w[:, 1:]
    a0, a1 = a[:, :-1], a[:, 1:]
    dy = y1 - y0 - w0 * t - 0.5 * a0 * t * t
    rhs = np.stack([dy, (w1 - w0 - a0 * t) * t, (a1 - a0) * t * t], axis=-1)
    u = rhs @ _M3INV.T
    c = np.empty(v.shape[:1] + (durations.size, 6))
    c[:, :, 0] = y0
    c[:, :, 1] = w0
    c[:, :, 2] = 0.5 * a0
    c[:, :, 3] = u[:, :, 0] / t**3
    c[:, :, 4] = u[:, :, 1] / t**4
    c[:, :, 5] = u[:, :, 2] / t**5
    return c


def _poly_eval(coeffs, t_local, order=0):
    """Evaluate (..., 6) coefficients (or their derivatives) at local times."""
    powers = np.arange(6)
    out = np.zeros(np.broadcast_shapes(coeffs.shape[:-1], t_local.shape))
    for k in range(order, 6):
        fac = math.factorial(k) / math.factorial(k - order)
        out = out + fac * coeffs[..., k] * t_local ** (k - order)
    return out


@dataclass(eq=False)
class Trajectory:
    """Channels: index 0 = arc length a, 1 = yaw theta, 2.. = joints."""

    knots: np.ndarray        # (C, M+1, 3): value, velocity, acceleration
    durations: np.ndarray    # (M,)
    start_xy: np.ndarray     # (2,)

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.durations = np.asarray(self.durations, dtype=float)
        self.start_xy = np.asarray(self.start_xy, dtype=float)
        if np.any(self.durations <= 0):
            raise ValueError("piece durations must be positive")
        self._coeffs = _coeffs_from_knots(self.knots, self.durations)
        self._knot_times = np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def t_f(self):
        return float(self._knot_times[-1])

    @property
    def n_pieces(self):
        return self.durations.size

    @property
    def n_joints(self):
        return self.knots.shape[0] - 2

    def _locate(self, ts):
        ts = np.asarray(ts, dtype=float)
        idx = np.clip(np.searchsorted(self._knot_times, ts, side="right") - 1, 0,
                      self.n_pieces - 1)
        return idx, ts - self._knot_times[idx]

    def channel_values(self, ts, order=0):
        """{'a', 'theta', 'q'} arrays of the requested time derivative."""
        idx, local = self._locate(ts)
        c = self._coeffs[:, idx, :]                     # (C, T, 6)
        vals = _poly_eval(c, local, order)
        return {"a": vals[0], "theta": vals[1], "q": vals[2:].T}

    def positions(self, ts):
        """Base positions by per-piece Gauss-Legendre prefix integration."""
        prefix = self._piece_prefix()
        idx, local = self._locate(ts)
        out = np.empty((len(np.atleast_1d(ts)), 2))
        x, w = _GL16
        for i in np.unique(idx):
            m = idx == i
            tl = local[m]
            nodes = 0.5 * tl[:, None] * (x[None, :] + 1.0)
            adot = _poly_eval(self._coeffs[0, i], nodes, 1)
            theta = _poly_eval(self._coeffs[1, i], nodes, 0)
            ix = 0.5 * tl * (w[None, :] * adot * np.cos(theta)).sum(axis=1)
            iy = 0.5 * tl * (w[None, :] * adot * np.sin(theta)).sum(axis=1)
            out[m, 0] = self.start_xy[0] + prefix[i, 0] + ix
            out[m, 1] = self.start_xy[1] + prefix[i, 1] + iy
        return out

    def _piece_prefix(self):
        x, w = _GL16
        T_i = self.durations
        nodes = 0.5 * T_i[:, None] * (x[None, :] + 1.0)
        adot = _poly_eval(self._coeffs[0][:, None, :], nodes, 1)
        theta = _poly_eval(self._coeffs[1][:, None, :], nodes, 0)
        ix = 0.5 * T_i * (w[None, :] * adot * np.cos(theta)).sum(axis=1)
        iy = 0.5 * T_i * (w[None, :] * adot * np.sin(theta)).sum(axis=1)
        prefix = np.zeros((self.n_pieces + 1, 2))
        prefix[1:, 0] = np.cumsum(ix)
        prefix[1:, 1] = np.cumsum(iy)
        return prefix

    def state_at(self, t):
        ch = self.channel_values(np.array([t]))
        pos = self.positions(np.array([t]))[0]
        return robot.RobotState(pos[0], pos[1], float(ch["theta"][0]), ch["q"][0])

    def to_waypoint_path(self, n=320):
        ts = np.linspace(0.0, self.t_f, n)
        ch = self.channel_values(ts)
        pos = self.positions(ts)
        states = [robot.RobotState(pos[i, 0], pos[i, 1], ch["theta"][i], ch["q"][i])
                  for i in range(n)]
        return WaypointPath(states)


# ---------------------------------------------------------------------------
# initialization


def _trapezoid_profile(total, v_max, a_max):
    """(t_f, time_at_arc, vel_at_arc) for a rest-to-rest trapezoid."""
    v = min(v_max, math.sqrt(a_max * max(total, 1e-12)))
    t_acc = v / a_max
    s_acc = 0.5 * v * t_acc
    if 2 * s_acc >= total:
        v = math.sqrt(a_max * total)
        t_acc = v / a_max
        s_acc = total / 2.0
        t_f = 2 * t_acc
    else:
        t_f = 2 * t_acc + (total - 2 * s_acc) / v

    def time_at(s):
        s = min(max(s, 0.0), total)
        if s <= s_acc:
            return math.sqrt(2 * s / a_max)
        if s >= total - s_acc:
            return t_f - math.sqrt(2 * max(total - s, 0.0) / a_max)
        return t_acc + (s - s_acc) / v

    def vel_at(s):
        s = min(max(s, 0.0), total)
        if s <= s_acc:
            return math.sqrt(2 * a_max * s)
        if s >= total - s_acc:
            return math.sqrt(2 * a_max * max(total - s, 0.0))
        return v

    return t_f, time_at, vel_at


def init_from_path(p, model, pieces=8, goal_heading=None, time_margin=1.3):
    """Initial trajectory from a path: trapezoid timing along base arc,
    tangent-aligned yaw when the path's headings disagree with its motion
    direction, joints interpolated at the knot arc positions."""
    if isinstance(p, Path):
        vecs = np.stack([s.as_vector() for s in p.robot_states()])
    else:
        vecs = p.vectors()
    nm = vecs.shape[1] - 3
    seg0 = np.linalg.norm(np.diff(vecs[:, :2], axis=0), axis=1)
    total = float(seg0.sum())
    goal_th = float(goal_heading) if goal_heading is not None else float(vecs[-1, 2])
    if total >= 1e-9:
        # duplicate base positions break arc-keyed slopes; drop them
        vecs = vecs[np.concatenate([[True], seg0 > 1e-12])]
    pos = vecs[:, :2]
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    theta_path = np.unwrap(vecs[:, 2])

    C = 2 + nm
    M = pieces
    knots = np.zeros((C, M + 1, 3))

    if total < 1e-9:
        # stationary base: yaw and joints move, arc stays zero
        sweep = max(np.abs(theta_path[-1] - theta_path[0]),
                    np.abs(vecs[-1, 3:] - vecs[0, 3:]).max(initial=0.0), 0.1)
        t_f = time_margin * max(2.0 * math.sqrt(sweep / model.joint_acc_max),
                                sweep / model.joint_vel_max) * 2.0
        u = np.linspace(0.0, 1.0, M + 1)
        knots[1, :, 0] = theta_path[0] + u * (_unwrapped_goal(theta_path[0], goal_th) - theta_path[0])
        for j in range(nm):
            knots[2 + j, :, 0] = vecs[0, 3 + j] + u * (vecs[-1, 3 + j] - vecs[0, 3 + j])
        durations = np.full(M, t_f / M)
        return Trajectory(knots=knots, durations=durations, start_xy=pos[0])

    t_total, time_at, vel_at = _trapezoid_profile(total, 0.8 * model.v_max, 0.8 * model.acc_max)
    arc_knots = np.linspace(0.0, total, M + 1)
    times = np.array([time_at(s) for s in arc_knots]) * time_margin
    times[0] = 0.0
    durations = np.maximum(np.diff(times), 1e-3)
    times = np.concatenate([[0.0], np.cumsum(durations)])

    # tangent headings per segment, unwrapped; fall back to path headings
    # when they already follow the motion direction
    seg_dir = np.arctan2(np.diff(pos[:, 1]), np.diff(pos[:, 0]))
    seg_dir = np.unwrap(seg_dir)
    seg_mid_arc = 0.5 * (arc[:-1] + arc[1:])
    path_th_at = np.interp(arc_knots, arc, theta_path)
    tangent_at = np.interp(arc_knots, seg_mid_arc, seg_dir)
    mismatch = np.abs(np.arctan2(np.sin(path_th_at - tangent_at),
                                 np.cos(path_th_at - tangent_at))).mean()
    if mismatch < 0.3:
        theta_knots = path_th_at
        theta_fine, theta_fine_arc = theta_path, arc
    else:
        theta_knots = tangent_at.copy()
        # boundary headings stay exact; yaw blends in over the first piece
        theta_knots[0] = tangent_at[0] + robot.wrap_angle(theta_path[0] - tangent_at[0])
        theta_fine, theta_fine_arc = seg_dir, seg_mid_arc
    knot_speed = np.array([vel_at(s) for s in arc_knots]) / time_margin

    knots[0, :, 0] = arc_knots
    knots[0, 1:-1, 1] = knot_speed[1:-1]
    knots[1, :, 0] = theta_knots
    knots[1, -1, 0] = _unwrapped_goal(theta_knots[-2], goal_th)
    # chain rule d/dt = (d/ds) * adot with local slopes from the fine path
    if len(theta_fine) >= 2:
        dth_ds = np.gradient(theta_fine, theta_fine_arc, edge_order=1)
        knots[1, 1:-1, 1] = np.interp(arc_knots[1:-1], theta_fine_arc, dth_ds) * knot_speed[1:-1]
    for j in range(nm):
        knots[2 + j, :, 0] = np.interp(arc_knots, arc, vecs[:, 3 + j])
        knots[2 + j, 0, 0] = vecs[0, 3 + j]
        knots[2 + j, -1, 0] = vecs[-1, 3 + j]
        dq_ds = np.gradient(vecs[:, 3 + j], arc, edge_order=1)
        knots[2 + j, 1:-1, 1] = np.interp(arc_knots[1:-1], arc, dq_ds) * knot_speed[1:-1]
    return Trajectory(knots=knots, durations=durations, start_xy=pos[0])


def _unwrapped_goal(ref, goal):
    return ref + robot.wrap_angle(goal - ref)


# ---------------------------------------------------------------------------
# boundary residual (public contract)


def boundary_residual(traj, start, goal, nodes_per_piece=16):
    """Gauss-Legendre residual of the integral position constraint."""
    x, w = np.polynomial.legendre.leggauss(nodes_per_piece)
    T_i = traj.durations
    nodes = 0.5 * T_i[:, None] * (x[None, :] + 1.0)
    adot = _poly_eval(traj._coeffs[0][:, None, :], nodes, 1)
    theta = _poly_eval(traj._coeffs[1][:, None, :], nodes, 0)
    ix = (0.5 * T_i * (w[None, :] * adot * np.cos(theta)).sum(axis=1)).sum()
    iy = (0.5 * T_i * (w[None, :] * adot * np.sin(theta)).sum(axis=1)).sum()
    return np.array([start.x + ix - goal.x, start.y + iy - goal.y])


# ---------------------------------------------------------------------------
# the optimization problem


@dataclass
class OptProblem:
    scene: object
    model: object
    w_time: float = 2.0
    w_jerk: float = 0.02
    w_clear: float = 400.0
    w_limit: float = 250.0
    w_boundary: float = 3e5          # init satisfies the constraint, so stiff is cheap
    clear_margin: float = 0.03
    limit_fraction: float = 0.88     # stay inside this fraction of each limit
    boundary_tol: float = 1e-4       # m
    heading_tol: float = 1e-3        # rad
    sub_intervals: int = 5
    max_rounds: int = 4
    max_evals: int = 110             # L-BFGS function evaluations per round

    def __post_init__(self):
        if min(self.w_time, self.w_jerk, self.w_clear, self.w_limit, self.w_boundary) <= 0:
            raise ValueError("objective weights must be positive")


class _Cancelled(Exception):
    pass


def _pack_vars(traj):
    C, M = traj.knots.shape[0], traj.n_pieces
    inter = traj.knots[:, 1:M, :]
    return np.concatenate([
        inter[:, :, 0].ravel(), inter[:, :, 1].ravel(), inter[:, :, 2].ravel(),
        [traj.knots[0, M, 0], traj.knots[1, M, 0]],
        np.log(traj.durations),
    ])


def _fixed_parts(traj):
    C, M = traj.knots.shape[0], traj.n_pieces
    return {
        "start_col": traj.knots[:, 0, 0].copy(),
        "q_goal": traj.knots[2:, M, 0].copy(),
        "C": C, "M": M,
        "start_xy": traj.start_xy.copy(),
    }


def _unpack_to_trajectory(x, fixed):
    C, M = fixed["C"], fixed["M"]
    n_int = C * (M - 1)
    V = x[:n_int].reshape(C, M - 1)
    W = x[n_int:2 * n_int].reshape(C, M - 1)
    A = x[2 * n_int:3 * n_int].reshape(C, M - 1)
    a_f, th_f = x[3 * n_int], x[3 * n_int + 1]
    u = x[3 * n_int + 2:]
    knots = np.zeros((C, M + 1, 3))
    knots[:, 0, 0] = fixed["start_col"]
    knots[:, 1:M, 0] = V
    knots[:, 1:M, 1] = W
    knots[:, 1:M, 2] = A
    knots[0, M, 0] = a_f
    knots[1, M, 0] = th_f
    knots[2:, M, 0] = fixed["q_goal"]
    return Trajectory(knots=knots, durations=np.exp(u), start_xy=fixed["start_xy"])


def _objective_tape(x, fixed, problem, goal, w_boundary):
    """Build the full objective on an f64 tape; returns (value, gradient)."""
    model, scene = problem.model, problem.scene
    C, M = fixed["C"], fixed["M"]
    nm = C - 2
    S = problem.sub_intervals
    tape = T.Tape(dtype=np.float64)
    xs = tape.leaf(x)
    n_int = C * (M - 1)

    V = T.reshape(T.slice_(xs, (slice(0, n_int),)), (C, M - 1))
    W = T.reshape(T.slice_(xs, (slice(n_int, 2 * n_int),)), (C, M - 1))
    A = T.reshape(T.slice_(xs, (slice(2 * n_int, 3 * n_int),)), (C, M - 1))
    a_f = T.reshape(T.slice_(xs, (slice(3 * n_int, 3 * n_int + 1),)), (1, 1))
    th_f = T.reshape(T.slice_(xs, (slice(3 * n_int + 1, 3 * n_int + 2),)), (1, 1))
    u = T.slice_(xs, (slice(3 * n_int + 2, 3 * n_int + 2 + M),))
    Td = T.exp(u)                                      # (M,)

    start_col = tape.constant(fixed["start_col"].reshape(C, 1))
    zero_col = tape.constant(np.zeros((C, 1)))
    final_col = T.concat([a_f, th_f, tape.constant(fixed["q_goal"].reshape(nm, 1))], axis=0)
    Vfull = T.concat([start_col, V, final_col], axis=1)    # (C, M+1)
    Wfull = T.concat([zero_col, W, zero_col], axis=1)
    Afull = T.concat([zero_col, A, zero_col], axis=1)

    def cols(t, lo, hi):
        return T.slice_(t, (slice(None), slice(lo, hi)))

    y0, y1 = cols(Vfull, 0, M), cols(Vfull, 1, M + 1)
    w0, w1 = cols(Wfull, 0, M), cols(Wfull, 1, M + 1)
    a0, a1 = cols(Afull, 0, M), cols(Afull, 1, M + 1)
    T2 = T.square(Td)
    dy = T.sub(T.sub(T.sub(y1, y0), T.mul(w0, Td)), T.scale(T.mul(a0, T2), 0.5))
    dv = T.mul(T.sub(T.sub(w1, w0), T.mul(a0, Td)), Td)
    da = T.mul(T.sub(a1, a0), T2)

    def expand(t):
        return T.reshape(t, (C, M, 1))

    rhs = T.concat([expand(dy), expand(dv), expand(da)], axis=-1)      # (C, M, 3)
    uu = T.matmul(rhs, tape.constant(_M3INV.T))                        # (C, M, 3)
    T3 = T.mul(T2, Td)
    T4 = T.mul(T3, Td)
    T5 = T.mul(T4, Td)
    c0, c1 = y0, w0
    c2 = T.scale(a0, 0.5)
    c3 = T.div(T.slice_(uu, (Ellipsis, 0)), T3)
    c4 = T.div(T.slice_(uu, (Ellipsis, 1)), T4)
    c5 = T.div(T.slice_(uu, (Ellipsis, 2)), T5)

    # --- jerk: closed-form integral of (6 c3 + 24 c4 t + 60 c5 t^2)^2
    Aj, Bj, Cj = T.scale(c3, 6.0), T.scale(c4, 24.0), T.scale(c5, 60.0)
    jerk = T.mul(T.square(Aj), Td)
    jerk = T.add(jerk, T.mul(T.mul(Aj, Bj), T2))
    jerk = T.add(jerk, T.mul(T.add(T.scale(T.square(Bj), 1.0 / 3.0),
                                   T.scale(T.mul(Aj, Cj), 2.0 / 3.0)), T3))
    jerk = T.add(jerk, T.mul(T.scale(T.mul(Bj, Cj), 0.5), T4))
    jerk = T.add(jerk, T.mul(T.scale(T.square(Cj), 0.2), T5))
    jerk_total = T.sum_(jerk)

    # --- node grid: S sub-intervals x GL4 nodes per piece
    glx, glw = _GL4
    fractions = ((np.arange(S)[:, None] + 0.5 * (glx[None, :] + 1.0)) / S).ravel()   # (S*4,)
    wts = np.tile(glw, S) / (2.0 * S)                                                # (S*4,)
    t_nodes = T.mul(T.reshape(Td, (M, 1)), tape.constant(fractions))                 # (M, n)

    def e(c):
        return T.reshape(c, (C, M, 1))

    def powers_of(tn):
        t2 = T.mul(tn, tn)
        t3 = T.mul(t2, tn)
        t4 = T.mul(t3, tn)
        t5 = T.mul(t4, tn)
        return tn, t2, t3, t4, t5

    def eval_at(powers, order):
        t1, t2, t3, t4, t5 = powers
        if order == 0:
            out = T.add(e(c0), T.mul(e(c1), t1))
            out = T.add(out, T.mul(e(c2), t2))
            out = T.add(out, T.mul(e(c3), t3))
            out = T.add(out, T.mul(e(c4), t4))
            out = T.add(out, T.mul(e(c5), t5))
        elif order == 1:
            out = T.add(e(c1), T.scale(T.mul(e(c2), t1), 2.0))
            out = T.add(out, T.scale(T.mul(e(c3), t2), 3.0))
            out = T.add(out, T.scale(T.mul(e(c4), t3), 4.0))
            out = T.add(out, T.scale(T.mul(e(c5), t4), 5.0))
        else:
            out = T.scale(e(c2), 2.0)
            out = T.add(out, T.scale(T.mul(e(c3), t1), 6.0))
            out = T.add(out, T.scale(T.mul(e(c4), t2), 12.0))
            out = T.add(out, T.scale(T.mul(e(c5), t3), 20.0))
        return out   # (C, M, n)

    node_powers = powers_of(t_nodes)
    vals = eval_at(node_powers, 0)
    rate = eval_at(node_powers, 1)
    accel = eval_at(node_powers, 2)

    adot = T.reshape(T.slice_(rate, (slice(0, 1),)), (M, fractions.size))
    theta_n = T.reshape(T.slice_(vals, (slice(1, 2),)), (M, fractions.size))
    gx = T.mul(adot, T.cos(theta_n))
    gy = T.mul(adot, T.sin(theta_n))

    wset = tape.constant(wts)
    piece_T = T.reshape(Td, (M, 1))

    def sub_integrals(g):
        weighted = T.mul(T.mul(g, wset), piece_T)                  # (M, n)
        return T.reshape(T.sum_(T.reshape(weighted, (M, S, len(glx))), axis=-1), (M * S,))

    ix = sub_integrals(gx)
    iy = sub_integrals(gy)
    Ltri = tape.constant(np.tril(np.ones((M * S, M * S))))
    px = T.add_scalar(T.matmul(Ltri, ix), fixed["start_xy"][0])
    py = T.add_scalar(T.matmul(Ltri, iy), fixed["start_xy"][1])

    # --- collision states at sub-interval ends
    end_fracs = (np.arange(1, S + 1)) / S
    t_ends = T.mul(T.reshape(Td, (M, 1)), tape.constant(end_fracs))
    vals_end = eval_at(powers_of(t_ends), 0)
    theta_e = T.reshape(T.slice_(vals_end, (slice(1, 2),)), (M * S, 1))
    q_e = T.transpose_last(T.reshape(T.slice_(vals_end, (slice(2, C),)), (nm, M * S)))
    states = T.concat([T.reshape(px, (M * S, 1)), T.reshape(py, (M * S, 1)), theta_e, q_e],
                      axis=-1)

    margin = problem.clear_margin
    cache = {}

    def clear_fwd(st):
        centers, radii = robot.collision_points_batch(model, st)
        flat = centers.reshape(-1, 3)
        d = scene.sdf_batch(flat).reshape(centers.shape[:2])
        viol = np.maximum(radii[None, :] + margin - d, 0.0)
        cache["st"], cache["viol"], cache["flat"] = st, viol, flat
        return np.asarray((viol * viol).sum())

    def clear_vjp(st, g):
        if cache.get("st") is st:
            viol, flat = cache["viol"], cache["flat"]
            _, _, J = robot.collision_points_batch(model, st, jacobian=True)
        else:
            centers, radii, J = robot.collision_points_batch(model, st, jacobian=True)
            flat = centers.reshape(-1, 3)
            d = scene.sdf_batch(flat).reshape(centers.shape[:2])
            viol = np.maximum(radii[None, :] + margin - d, 0.0)
        gsdf = scene.sdf_gradient_batch(flat).reshape(viol.shape[0], -1, 3)
        dstates = -2.0 * np.einsum("bc,bci,bcij->bj", viol, gsdf, J)
        return float(g) * dstates

    clearance = T.blackbox(states, clear_fwd, clear_vjp)

    # --- rate limits (quadrature-weighted squared hinges)
    lim_v = problem.limit_fraction * np.concatenate(
        [[model.v_max, model.omega_max], np.full(nm, model.joint_vel_max)])
    lim_a = problem.limit_fraction * np.concatenate(
        [[model.acc_max, model.omega_dot_max], np.full(nm, model.joint_acc_max)])

    def hinge_sq(x_t, limits):
        lim = tape.constant(limits.reshape(C, 1, 1))
        over = T.add(T.relu(T.sub(x_t, lim)), T.relu(T.sub(T.neg(x_t), lim)))
        per_node = T.square(over)
        weighted = T.mul(T.mul(per_node, wset), T.reshape(piece_T, (1, M, 1)))
        return T.sum_(weighted)

    limits_pen = T.add(hinge_sq(rate, lim_v), hinge_sq(accel, lim_a))
    # joint position limits (the a and theta channels are unbounded)
    big = 1e9
    jl = model.joint_limits
    half = 0.5 * (jl[:, 1] - jl[:, 0]) * problem.limit_fraction
    mid = 0.5 * (jl[:, 1] + jl[:, 0])
    centered = T.sub(vals, tape.constant(np.concatenate([[0.0, 0.0], mid]).reshape(C, 1, 1)))
    limits_pen = T.add(limits_pen, hinge_sq(
        centered, np.concatenate([[big, big], half])))

    # --- boundary residual penalty
    rx = T.add_scalar(T.sum_(ix), fixed["start_xy"][0] - goal.x)
    ry = T.add_scalar(T.sum_(iy), fixed["start_xy"][1] - goal.y)
    th_goal = _unwrapped_goal(float(x[3 * n_int + 1]), goal.theta)
    rth = T.add_scalar(T.reshape(th_f, (1,)), -th_goal)
    boundary = T.add(T.add(T.square(rx), T.square(ry)), T.square(T.reshape(rth, ())))

    total = T.scale(T.sum_(Td), problem.w_time)
    total = T.add(total, T.scale(jerk_total, problem.w_jerk))
    total = T.add(total, T.scale(clearance, problem.w_clear))
    total = T.add(total, T.scale(limits_pen, problem.w_limit))
    total = T.add(total, T.scale(boundary, w_boundary))
    total.backward()
    return float(total.data), xs.grad.copy()


def optimize(problem, traj0, max_iters=None, goal=None, cancel_check=None):
    """Escalated penalty rounds around an L-BFGS core.

    The goal (a RobotState) pins the integral boundary constraint and the
    final heading; when omitted it defaults to the initial trajectory's own
    endpoint. Returns (best trajectory, status dict). Status 'converged'
    requires the boundary residual below tolerance; 'diverged' flags a
    non-finite objective; cooperative cancellation raises via cancel_check.
    """
    fixed = _fixed_parts(traj0)
    x = _pack_vars(traj0)
    w_b = problem.w_boundary
    evals = [0]
    status = {"status": "max_rounds", "rounds": 0, "evals": 0, "objective": float("inf")}
    best = traj0
    if goal is None:
        goal = traj0.state_at(traj0.t_f)
    max_evals = max_iters if max_iters is not None else problem.max_evals

    for rnd in range(problem.max_rounds):
        def fun(xv):
            if cancel_check and cancel_check():
                raise _Cancelled()
            evals[0] += 1
            val, grad = _objective_tape(xv, fixed, problem, goal, w_b)
            if not np.isfinite(val):
                raise _Cancelled("diverged")
            return val, grad

        try:
            res = minimize(fun, x, jac=True, method="L-BFGS-B",
                           options={"maxfun": max_evals, "maxiter": max_evals,
                                    "ftol": 1e-10, "gtol": 1e-6, "maxcor": 20})
        except _Cancelled as exc:
            status["status"] = "diverged" if exc.args else "cancelled"
            status["evals"] = evals[0]
            return best, status
        x = res.x
        traj = _unpack_to_trajectory(x, fixed)
        best = traj
        resid = boundary_residual(traj, traj.state_at(0.0), goal)
        th_err = abs(robot.wrap_angle(traj.knots[1, -1, 0] - goal.theta))
        status.update(rounds=rnd + 1, evals=evals[0], objective=float(res.fun),
                      residual=float(np.linalg.norm(resid)), heading_error=float(th_err))
        if np.linalg.norm(resid) < problem.boundary_tol and th_err < problem.heading_tol:
            status["status"] = "converged"
            return traj, status
        w_b *= 10.0
    return best, status


# ---------------------------------------------------------------------------
# parallel multi-seed optimization with early termination


def _opt_worker(args):
    from .parallel import limit_worker_threads
    limit_worker_threads()
    problem, traj0, goal, index, cancel = args
    def check():
        return cancel is not None and cancel.is_set()
    try:
        traj, status = optimize(problem, traj0, goal=goal, cancel_check=check)
    except Exception as exc:   # workers must not take down the pool
        return index, None, {"status": f"error:{exc}"}
    return index, traj, status


def optimize_parallel(problem, inits, goal, validate_fn, workers=None, mode="sequential"):
    """Run candidate optimizations until one validates; cancel the rest.

    Sequential mode walks candidates in order (deterministic); parallel mode
    runs them concurrently with a shared cancellation event. Returns a dict
    with the winning trajectory (or None), per-candidate statuses, and
    timing.
    """
    t0 = time.perf_counter()
    statuses = [None] * len(inits)
    winner, win_idx = None, -1
    if mode == "sequential" or len(inits) == 1:
        for i, tr0 in enumerate(inits):
            traj, status = optimize(problem, tr0, goal=goal)
            statuses[i] = status
            if status["status"] == "converged" and validate_fn(traj):
                winner, win_idx = traj, i
                for j in range(i + 1, len(inits)):
                    statuses[j] = {"status": "cancelled"}
                break
    else:
        import concurrent.futures as cf
        import multiprocessing as mp
        ctx = mp.get_context("fork") if hasattr(os, "fork") else mp.get_context()
        with ctx.Manager() as manager:
            cancel = manager.Event()
            with cf.ProcessPoolExecutor(max_workers=workers or len(inits),
                                        mp_context=ctx) as pool:
                futs = [pool.submit(_opt_worker, (problem, tr0, goal, i, cancel))
                        for i, tr0 in enumerate(inits)]
                for fut in cf.as_completed(futs):
                    index, traj, status = fut.result()
                    statuses[index] = status
                    if winner is None and traj is not None \
                            and status["status"] == "converged" and validate_fn(traj):
                        winner, win_idx = traj, index
                        cancel.set()
        for i, s in enumerate(statuses):
            if s is None:
                statuses[i] = {"status": "cancelled"}
    return {
        "trajectory": winner,
        "index": win_idx,
        "statuses": statuses,
        "elapsed": time.perf_counter() - t0,
    }


# ---------------------------------------------------------------------------
# persistence


def save_trajectory(traj, filename):
    data = {
        "version": 1,
        "knots": traj.knots.tolist(),
        "durations": traj.durations.tolist(),
        "start_xy": traj.start_xy.tolist(),
        "t_f": traj.t_f,
        "pieces": traj.n_pieces,
        "coefficients": traj._coeffs.tolist(),
    }
    with open(filename, "w") as f:
        json.dump(data, f)
        f.write("\n")


def load_trajectory(filename):
    with open(filename) as f:
        data = json.load(f)
    if data.get("version") != 1:
        raise ValueError(f"unsupported trajectory version {data.get('version')}")
    return Trajectory(knots=np.asarray(data["knots"]),
                      durations=np.asarray(data["durations"]),
                      start_xy=np.asarray(data["start_xy"]))
