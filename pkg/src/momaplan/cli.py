"""Command-line entry points: scene/data generation, training, planning, eval."""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import (bench, classical, diffusion, net, path as mpath, primitive, robot,
               scene as mscene, tensor, training, trajopt)


@click.group()
def main():
    """Whole-body motion planning for a differential-drive mobile manipulator."""
    from .parallel import limit_worker_threads
    limit_worker_threads()


def _load_model(path):
    return robot.load_model(path) if path else robot.default_model()


# --- scene -------------------------------------------------------------------

@main.group()
def scene():
    """Procedural scene generation."""


@scene.command("gen")
@click.option("--preset", type=click.Choice(["cuboids", "mixed"]), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--density", type=float, default=1.0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def scene_gen(preset, seed, density, out):
    sc = mscene.generate_scene(preset, seed, density)
    mscene.save_scene(sc, out)
    click.echo(f"wrote {out}: {len(sc.obstacles)} obstacles + {len(sc.walls)} walls")


# --- robot --------------------------------------------------------------------

@main.group(name="robot")
def robot_grp():
    """Robot model files."""


@robot_grp.command("default")
@click.option("--out", type=click.Path(), required=True)
def robot_default(out):
    robot.save_model(robot.default_model(), out)
    click.echo(f"wrote {out}")


# --- data ----------------------------------------------------------------------

@main.group()
def data():
    """Ground-truth dataset collection."""


@data.command("collect")
@click.option("--preset", type=click.Choice(["cuboids", "mixed"]), default="cuboids",
              show_default=True)
@click.option("--tasks", type=int, required=True)
@click.option("--budget", type=float, default=5.0, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--density", type=float, default=0.2, show_default=True)
@click.option("--robot", "robot_file", type=click.Path(exists=True), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--out", type=click.Path(), required=True)
def data_collect(preset, tasks, budget, seed, density, robot_file, workers, out):
    model = _load_model(robot_file)
    done = [0]

    def log(index, status):
        done[0] += 1
        click.echo(f"[{done[0]}/{tasks}] task {index}: {status}")

    records = classical.collect_dataset(out, preset, tasks, seed, model, density=density,
                                        budget=budget, workers=workers, log_fn=log)
    click.echo(f"recorded {len(records)} samples in {out}")


# --- primitives -------------------------------------------------------------------

@main.group()
def primitives():
    """Motion-primitive library construction."""


@primitives.command("build")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--k", type=int, default=32, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--max-iters", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def primitives_build(data_dir, k, seed, max_iters, out):
    import glob
    paths = []
    for fname in sorted(glob.glob(os.path.join(data_dir, "sample_*.nmpt"))):
        paths.append(mpath.load_record(fname)["path"])
    if not paths:
        raise click.ClickException(f"no records found in {data_dir}")
    lib = primitive.build_library(paths, k=k, seed=seed, max_iters=max_iters)
    primitive.save_library(lib, out)
    labeled = training.label_records(data_dir, lib)
    click.echo(f"built {lib.k} primitives from {len(paths)} paths "
               f"({lib.iterations} iterations, inertia {lib.inertia:.3f}); "
               f"labeled {labeled} records; wrote {out}")


# --- training ------------------------------------------------------------------------

@main.command("train")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--lib", "lib_file", type=click.Path(exists=True), required=True)
@click.option("--robot", "robot_file", type=click.Path(exists=True), default=None)
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--batch", type=int, default=16, show_default=True)
@click.option("--d-model", type=int, default=128, show_default=True)
@click.option("--heads", type=int, default=4, show_default=True)
@click.option("--g-tokens", type=int, default=64, show_default=True)
@click.option("--points", type=int, default=512, show_default=True)
@click.option("--ffw", type=int, default=256, show_default=True)
@click.option("--point-hidden", type=int, default=64, show_default=True)
@click.option("--boundary-dim", type=int, default=64, show_default=True)
@click.option("--head-hidden", type=int, default=128, show_default=True)
@click.option("--t-max", type=int, default=1200, show_default=True)
@click.option("--t-trunc", type=int, default=50, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--curves", type=click.Path(), default=None)
def train_cmd(data_dir, lib_file, robot_file, epochs, seed, lr, batch, d_model, heads,
              g_tokens, points, ffw, point_hidden, boundary_dim, head_hidden,
              t_max, t_trunc, out, curves):
    model = _load_model(robot_file)
    lib = primitive.load_library(lib_file)
    enc_cfg = net.EncoderConfig(d_model=d_model, n_heads=heads, point_hidden=point_hidden,
                                g_tokens=g_tokens, boundary_dim=boundary_dim)
    den_cfg = net.DenoiserConfig(d_model=d_model, n_heads=heads, ffw=ffw,
                                 k_primitives=lib.k, head_hidden=head_hidden)
    schedule = diffusion.build_schedule(t_max=t_max, t_trunc=t_trunc)
    samples = training.load_training_samples(data_dir, model, n_points=points)
    click.echo(f"training on {len(samples)} samples, {epochs} epochs")

    def log(row):
        click.echo(f"epoch {row['epoch']:3d}  loss {row['loss']:.4f}  "
                   f"mse {row['mse']:.4f}  geo {row['geo']:.4f}  focal {row['focal']:.4f}")

    weights, curve_rows = training.train(samples, lib, enc_cfg, den_cfg, model, schedule,
                                         epochs=epochs, seed=seed, lr=lr, batch_size=batch,
                                         log_fn=log)
    tensor.save_weights(out, weights)
    net.save_configs(str(out) + ".cfg.json", enc_cfg, den_cfg, n_points=points)
    if curves:
        training.write_curves(curves, curve_rows)
    click.echo(f"wrote {out}")


# --- planning ----------------------------------------------------------------------------

def _build_pipeline(sampler, model, weights_file, lib_file, samples, t_max, t_trunc,
                    ddim_steps, exec_mode):
    if sampler == bench.CLASSICAL:
        return bench.PlannerPipeline(model=model, sampler=sampler, n_samples=samples,
                                     exec_mode=exec_mode)
    weights = tensor.load_weights(weights_file)
    enc_cfg, den_cfg, n_points = net.load_configs(str(weights_file) + ".cfg.json")
    lib = primitive.load_library(lib_file)
    schedule = diffusion.build_schedule(t_max=t_max, t_trunc=t_trunc)
    return bench.PlannerPipeline(model=model, sampler=sampler, weights=weights,
                                 enc_cfg=enc_cfg, den_cfg=den_cfg, library=lib,
                                 schedule=schedule, n_samples=samples,
                                 ddim_steps=ddim_steps, n_points=n_points,
                                 exec_mode=exec_mode)


@main.command("plan")
@click.option("--scene", "scene_file", type=click.Path(exists=True), required=True)
@click.option("--robot", "robot_file", type=click.Path(exists=True), default=None)
@click.option("--pipeline", type=click.Choice([bench.PTDM, bench.VANILLA, bench.CLASSICAL]),
              default=bench.PTDM, show_default=True)
@click.option("--weights", "weights_file", type=click.Path(exists=True), default=None)
@click.option("--lib", "lib_file", type=click.Path(exists=True), default=None)
@click.option("--samples", type=int, default=4, show_default=True)
@click.option("--ddim-steps", type=int, default=2, show_default=True)
@click.option("--t-max", type=int, default=1200, show_default=True)
@click.option("--t-trunc", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--parallel/--sequential", default=False, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def plan_cmd(scene_file, robot_file, pipeline, weights_file, lib_file, samples,
             ddim_steps, t_max, t_trunc, seed, parallel, out):
    model = _load_model(robot_file)
    sc = mscene.load_scene(scene_file)
    if sc.start_xy is None:
        raise click.ClickException("scene has no designated start/goal positions")
    start, goal = classical.task_states(sc, model, sc.seed)
    pipe = _build_pipeline(pipeline, model, weights_file, lib_file, samples, t_max,
                           t_trunc, ddim_steps, "parallel" if parallel else "sequential")
    outcome = bench.plan(pipe, sc, start, goal, seed=seed)
    if not outcome.success:
        raise click.ClickException(f"planning failed at stage {outcome.stage}")
    trajopt.save_trajectory(outcome.trajectory, out)
    click.echo(f"wrote {out}: duration {outcome.td_s:.2f} s, "
               f"frontend {outcome.frontend_s * 1e3:.0f} ms, "
               f"backend {outcome.backend_s * 1e3:.0f} ms")


@main.command("eval")
@click.option("--suite", "suite_file", type=click.Path(exists=True), required=True)
@click.option("--pipeline", "pipelines", multiple=True,
              type=click.Choice([bench.PTDM, bench.VANILLA, bench.CLASSICAL]), required=True)
@click.option("--robot", "robot_file", type=click.Path(exists=True), default=None)
@click.option("--weights", "weights_file", type=click.Path(exists=True), default=None)
@click.option("--lib", "lib_file", type=click.Path(exists=True), default=None)
@click.option("--samples", type=int, default=4, show_default=True)
@click.option("--ddim-steps", type=int, default=2, show_default=True)
@click.option("--t-max", type=int, default=1200, show_default=True)
@click.option("--t-trunc", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=None, help="override the suite seed")
@click.option("--sweep/--no-sweep", default=False, show_default=True,
              help="also run diversity/time sweeps over sample counts")
@click.option("--walltime/--no-walltime", default=True, show_default=True,
              help="include wall-clock columns in the CSVs")
@click.option("--workers", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def eval_cmd(suite_file, pipelines, robot_file, weights_file, lib_file, samples,
             ddim_steps, t_max, t_trunc, seed, sweep, walltime, workers, out_dir):
    model = _load_model(robot_file)
    with open(suite_file) as f:
        spec = json.load(f)
    suite = bench.EvalSuite(preset=spec["preset"], density=spec.get("density", 0.2),
                            n_tasks=spec["n_tasks"],
                            seed=spec["seed"] if seed is None else seed)
    pipes = {name: _build_pipeline(name, model, weights_file, lib_file, samples, t_max,
                                   t_trunc, ddim_steps, "sequential")
             for name in pipelines}
    os.makedirs(out_dir, exist_ok=True)

    def log(name, row):
        click.echo(f"[{name}] task {row['task']}: "
                   f"{'ok' if row['success'] else 'fail:' + row['stage']}")

    reports = bench.evaluate(suite, pipes, workers=workers, log_fn=log)
    for name, rep in reports.items():
        bench.write_report_csv(rep, os.path.join(out_dir, f"report_{name}.csv"),
                               include_walltime=walltime)
        agg = rep.aggregates()
        line = (f"{name}: S.R. {100 * agg['sr']:.0f}%  T.P. {agg['mean_tp_s'] * 1e3:.0f} ms  "
                f"T.D. {agg['mean_td_s']:.2f} s  D.S. {agg['mean_ds']:.3f}")
        if hasattr(rep, "path_ratio"):
            line += f"  P.R. {rep.path_ratio:.3f}"
        click.echo(line)

    if sweep:
        sweep_rows = []
        for name in pipelines:
            if name == bench.CLASSICAL:
                continue
            sweep_rows.extend(bench.sampling_sweep(
                suite, pipes[name], log_fn=lambda r: click.echo(f"sweep {r}")))
        bench.write_sweep_csv(sweep_rows, os.path.join(out_dir, "ds_vs_n.csv"),
                              include_walltime=walltime)
        bench.write_sweep_csv(sweep_rows, os.path.join(out_dir, "tp_vs_n.csv"),
                              include_walltime=walltime)
        bench.plot_sweeps(sweep_rows, os.path.join(out_dir, "plots"))
    click.echo(f"reports in {out_dir}")


if __name__ == "__main__":
    main()
