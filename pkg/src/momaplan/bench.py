"""End-to-end planner assembly, evaluation metrics, and benchmark sweeps.

A pipeline bundles the sampler kind (learned truncated sampler, the vanilla
full-schedule baseline, or the classical planner) with its artifacts. Every
reported success is re-checked by the independent validator, and planning
time splits into frontend (through path sampling) and backend (pruning and
optimization).
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import classical, diffusion, net, path as mpath, primitive, robot, scene as mscene, trajopt
from .parallel import limit_worker_threads, resolve_workers, single_thread_blas
from .rngs import seeded_rng

PTDM = "ptdm"
VANILLA = "vanilla"
CLASSICAL = "classical"


@dataclass(eq=False)
class PlannerPipeline:
    model: object
    sampler: str = PTDM
    weights: dict | None = None
    enc_cfg: object = None
    den_cfg: object = None
    library: object = None
    schedule: object = None
    n_samples: int = 4
    ddim_steps: int = 2
    n_points: int = 512
    opt_params: dict = field(default_factory=dict)
    exec_mode: str = "sequential"     # optimize_parallel mode
    plan_budget: float = 20.0         # classical frontend budget (s)
    plan_iters: int | None = None

    def __post_init__(self):
        if self.sampler not in (PTDM, VANILLA, CLASSICAL):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.sampler != CLASSICAL:
            missing = [k for k in ("weights", "enc_cfg", "den_cfg", "library", "schedule")
                       if getattr(self, k) is None]
            if missing:
                raise ValueError(f"{self.sampler} pipeline missing {missing}")


@dataclass
class PlanOutcome:
    success: bool
    trajectory: object = None
    sampled_paths: list = field(default_factory=list)   # world frame
    frontend_s: float = 0.0
    backend_s: float = 0.0
    sampler_calls: int = 0
    stage: str = ""                # failure stage when success is False
    opt_index: int = -1

    @property
    def tp_s(self):
        return self.frontend_s + self.backend_s

    @property
    def td_s(self):
        return self.trajectory.t_f if self.trajectory is not None else float("nan")


def encode_scene_task(pipeline, sc, start, goal):
    """Task-frame cloud + encoder forward; the cloud seed is the scene seed."""
    frame = robot.task_frame(start, goal)
    cloud = mscene.sample_surface(sc, pipeline.n_points, seed=sc.seed).points
    enc = net.encode_task(pipeline.weights, pipeline.enc_cfg, pipeline.model,
                          frame.apply_points(cloud), frame.apply_state(start),
                          frame.apply_state(goal))
    return frame, enc


def sample_paths(pipeline, sc, start, goal, seed=0):
    """Sampler frontend: world-frame candidate paths + denoiser call count."""
    frame, enc = encode_scene_task(pipeline, sc, start, goal)
    if pipeline.sampler == PTDM:
        paths_task, _, calls = diffusion.sample_ptdm(
            enc, pipeline.library, pipeline.schedule, pipeline.weights, pipeline.den_cfg,
            pipeline.n_samples, ddim_steps=pipeline.ddim_steps, seed=seed)
    else:
        shape = (pipeline.library.n_states, 4 + pipeline.library.n_joints)
        paths_task, calls = diffusion.sample_vanilla_ddpm(
            enc, pipeline.schedule, pipeline.weights, pipeline.den_cfg,
            pipeline.n_samples, path_shape=shape, seed=seed)
    world = [mpath.from_task_frame(p, frame) for p in paths_task]
    return world, calls


def _clamp_joints(p, model, fraction=0.98):
    lo = model.joint_limits[:, 0] * fraction
    hi = model.joint_limits[:, 1] * fraction
    out = p.states.copy()
    out[:, 4:] = np.clip(out[:, 4:], lo[None, :], hi[None, :])
    return mpath.Path(out, p.frame)


def plan(pipeline, sc, start, goal, seed=0):
    """Full pipeline on one task; timings split frontend/backend."""
    model = pipeline.model
    problem = trajopt.OptProblem(scene=sc, model=model, **pipeline.opt_params)
    validate_fn = lambda t: classical.validate(t, sc, model).ok

    t0 = time.perf_counter()
    if pipeline.sampler == CLASSICAL:
        res = classical.rrt_connect(classical.PlanQuery(
            sc, model, start, goal, time_budget=pipeline.plan_budget, seed=seed,
            max_iters=pipeline.plan_iters))
        t1 = time.perf_counter()
        if not res.success:
            return PlanOutcome(False, frontend_s=t1 - t0, stage=f"planning:{res.reason}")
        candidates = [res.path]
        sampled = []
        calls = 0
    else:
        try:
            sampled, calls = sample_paths(pipeline, sc, start, goal, seed=seed)
        except Exception as exc:
            return PlanOutcome(False, frontend_s=time.perf_counter() - t0,
                               stage=f"sampling:{exc}")
        t1 = time.perf_counter()
        candidates = [mpath.WaypointPath(_clamp_joints(p, model).robot_states())
                      for p in sampled]

    inits = []
    for i, cand in enumerate(candidates):
        pruned = cand if isinstance(cand, mpath.WaypointPath) else cand
        pruned = mpath.prune(pruned, sc, model, seed=seed * 1000 + i,
                             margin=classical.PLANNER_MARGIN)
        inits.append(trajopt.init_from_path(pruned, model, goal_heading=goal.theta))
    out = trajopt.optimize_parallel(problem, inits, goal, validate_fn,
                                    mode=pipeline.exec_mode)
    t2 = time.perf_counter()
    if out["trajectory"] is None:
        return PlanOutcome(False, sampled_paths=sampled, frontend_s=t1 - t0,
                           backend_s=t2 - t1, sampler_calls=calls, stage="optimization")
    return PlanOutcome(True, trajectory=out["trajectory"], sampled_paths=sampled,
                       frontend_s=t1 - t0, backend_s=t2 - t1, sampler_calls=calls,
                       opt_index=out["index"])


# ---------------------------------------------------------------------------
# diversity score


def _densify_for_sweep(p, model, max_step):
    """Path states interpolated so every collision sphere moves <= max_step."""
    vecs = np.stack([s.as_vector() for s in p.robot_states()])
    arm_reach = np.abs(model.link_vectors).sum() + 0.3
    out = [vecs[0]]
    for a, b in zip(vecs[:-1], vecs[1:]):
        bound = (np.linalg.norm(b[:2] - a[:2])
                 + abs(robot.wrap_angle(b[2] - a[2])) * arm_reach
                 + np.abs(b[3:] - a[3:]).sum() * arm_reach)
        n = max(int(math.ceil(bound / max_step)), 1)
        seg = mpath.interpolate_state_vectors(a, b, n + 1)
        out.extend(seg[1:])
    return np.stack(out)


def swept_spheres(p, model, resolution):
    """Deduplicated collision spheres along the densified path."""
    states = _densify_for_sweep(p, model, max_step=resolution / 2.0)
    centers, radii = robot.collision_points_batch(model, states)
    flat = centers.reshape(-1, 3)
    rr = np.tile(radii, states.shape[0])
    key = np.round(flat / (resolution / 4.0)).astype(np.int64)
    _, keep = np.unique(np.column_stack([key, np.round(rr * 1e6).astype(np.int64)]),
                        axis=0, return_index=True)
    return flat[keep], rr[keep]


def diversity_score(paths, model, resolution=0.05):
    """One minus the mean intersection-over-union of each swept body against
    the union of all swept bodies, on a shared voxel grid."""
    if len(paths) < 1:
        raise ValueError("need at least one path")
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    sets = [swept_spheres(p, model, resolution) for p in paths]
    lows = np.stack([(c - r[:, None]).min(axis=0) for c, r in sets])
    highs = np.stack([(c + r[:, None]).max(axis=0) for c, r in sets])
    bounds = (lows.min(axis=0) - resolution, highs.max(axis=0) + resolution)
    grids = [mscene.voxelize_spheres(c, r, resolution, bounds=bounds) for c, r in sets]
    union = np.zeros_like(grids[0].occupancy)
    for g in grids:
        union |= g.occupancy
    ratios = []
    for g in grids:
        inter = float(np.logical_and(g.occupancy, union).sum())
        uni = float(np.logical_or(g.occupancy, union).sum())
        ratios.append(inter / uni if uni > 0 else 1.0)
    return 1.0 - float(np.mean(ratios))


# ---------------------------------------------------------------------------
# evaluation suites


@dataclass
class EvalSuite:
    preset: str = "cuboids"
    density: float = 0.2
    n_tasks: int = 50
    seed: int = 0

    def tasks(self, model):
        for i in range(self.n_tasks):
            sc = mscene.generate_scene(self.preset, self.seed + i, self.density)
            start, goal = classical.task_states(sc, model, self.seed + i)
            yield i, sc, start, goal


@dataclass
class EvalReport:
    name: str
    rows: list = field(default_factory=list)

    @property
    def success_rate(self):
        return float(np.mean([r["success"] for r in self.rows])) if self.rows else 0.0

    def mean(self, key, only_success=False):
        vals = [r[key] for r in self.rows
                if (r["success"] or not only_success) and np.isfinite(r[key])]
        return float(np.mean(vals)) if vals else float("nan")

    def aggregates(self):
        return {
            "sr": self.success_rate,
            "mean_tp_s": self.mean("tp_s", only_success=True),
            "mean_td_s": self.mean("td_s", only_success=True),
            "mean_ds": self.mean("ds"),
        }


def _eval_one(args):
    limit_worker_threads()
    pipeline, suite, index, ds_resolution = args
    sc = mscene.generate_scene(suite.preset, suite.seed + index, suite.density)
    start, goal = classical.task_states(sc, pipeline.model, suite.seed + index)
    outcome = plan(pipeline, sc, start, goal, seed=suite.seed + index)
    ds = float("nan")
    if len(outcome.sampled_paths) >= 1:
        ds = diversity_score(outcome.sampled_paths, pipeline.model, resolution=ds_resolution)
    row = {
        "task": index,
        "scene_seed": suite.seed + index,
        "success": bool(outcome.success),
        "stage": outcome.stage,
        "frontend_s": outcome.frontend_s,
        "backend_s": outcome.backend_s,
        "tp_s": outcome.tp_s,
        "td_s": outcome.td_s,
        "ds": ds,
        "sampler_calls": outcome.sampler_calls,
        "opt_index": outcome.opt_index,
    }
    return index, row


def evaluate(suite, pipelines, workers=None, ds_resolution=0.08, log_fn=None):
    """Per-pipeline reports over the suite; paired path ratio vs 'classical'.

    Tasks are independent seeded units, so results do not depend on the
    worker count (wall-clock columns aside).
    """
    reports = {}
    workers = resolve_workers(workers)
    for name, pipeline in pipelines.items():
        jobs = [(pipeline, suite, i, ds_resolution) for i in range(suite.n_tasks)]
        rows = [None] * suite.n_tasks
        if workers > 1 and suite.n_tasks > 1:
            import concurrent.futures as cf
            with cf.ProcessPoolExecutor(max_workers=workers) as pool:
                for index, row in pool.map(_eval_one, jobs, chunksize=2):
                    rows[index] = row
                    if log_fn:
                        log_fn(name, row)
        else:
            with single_thread_blas():
                for job in jobs:
                    index, row = _eval_one(job)
                    rows[index] = row
                    if log_fn:
                        log_fn(name, row)
        reports[name] = EvalReport(name=name, rows=rows)

    if CLASSICAL in reports:
        base = reports[CLASSICAL]
        for name, rep in reports.items():
            if name == CLASSICAL:
                continue
            ratios = [r["td_s"] / b["td_s"]
                      for r, b in zip(rep.rows, base.rows)
                      if r["success"] and b["success"] and b["td_s"] > 0]
            for row in rep.rows:
                row["pr"] = float("nan")
            rep.path_ratio = float(np.mean(ratios)) if ratios else float("nan")
    return reports


def _sweep_one(args):
    limit_worker_threads()
    pipeline, suite, index, n, ds_resolution = args
    sc = mscene.generate_scene(suite.preset, suite.seed + index, suite.density)
    start, goal = classical.task_states(sc, pipeline.model, suite.seed + index)
    pip = PlannerPipeline(
        model=pipeline.model, sampler=pipeline.sampler, weights=pipeline.weights,
        enc_cfg=pipeline.enc_cfg, den_cfg=pipeline.den_cfg, library=pipeline.library,
        schedule=pipeline.schedule, n_samples=n, ddim_steps=pipeline.ddim_steps,
        n_points=pipeline.n_points)
    t0 = time.perf_counter()
    paths, calls = sample_paths(pip, sc, start, goal, seed=suite.seed + index)
    dt = time.perf_counter() - t0
    ds = diversity_score(paths, pipeline.model, resolution=ds_resolution)
    return ds, dt, calls


def sampling_sweep(suite, pipeline, sample_counts=(2, 4, 8), ds_resolution=0.08,
                   workers=None, log_fn=None):
    """Diversity and sampling wall-clock versus sample count (no optimization)."""
    workers = resolve_workers(workers)
    rows = []
    for n in sample_counts:
        jobs = [(pipeline, suite, i, n, ds_resolution) for i in range(suite.n_tasks)]
        if workers > 1 and suite.n_tasks > 1:
            import concurrent.futures as cf
            with cf.ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_sweep_one, jobs, chunksize=2))
        else:
            with single_thread_blas():
                results = [_sweep_one(j) for j in jobs]
        ds_vals = [r[0] for r in results]
        times = [r[1] for r in results]
        calls = sum(r[2] for r in results)
        row = {"sampler": pipeline.sampler, "n": n, "mean_ds": float(np.mean(ds_vals)),
               "mean_sample_s": float(np.mean(times)), "denoiser_calls": calls}
        rows.append(row)
        if log_fn:
            log_fn(row)
    return rows


# ---------------------------------------------------------------------------
# reporting


_DETERMINISTIC_COLS = ["task", "scene_seed", "success", "stage", "td_s", "ds",
                       "sampler_calls", "opt_index"]
_WALLTIME_COLS = ["frontend_s", "backend_s", "tp_s"]


def write_report_csv(report, filename, include_walltime=True):
    cols = _DETERMINISTIC_COLS + (_WALLTIME_COLS if include_walltime else [])
    with open(filename, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        for row in report.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                             for k, v in row.items() if k in cols})


def write_sweep_csv(rows, filename, include_walltime=True):
    cols = ["sampler", "n", "mean_ds", "denoiser_calls"] + (
        ["mean_sample_s"] if include_walltime else [])
    with open(filename, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                             for k, v in row.items() if k in cols})


def plot_sweeps(sweep_rows, out_dir):
    """SVG line charts of diversity and sampling time versus sample count."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    samplers = sorted({r["sampler"] for r in sweep_rows})
    for key, fname, ylabel in (("mean_ds", "ds_vs_n.svg", "diversity score"),
                               ("mean_sample_s", "tp_vs_n.svg", "sampling time [s]")):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for s in samplers:
            pts = sorted((r["n"], r[key]) for r in sweep_rows if r["sampler"] == s)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=s)
        ax.set_xlabel("sampled paths")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, fname))
        plt.close(fig)
