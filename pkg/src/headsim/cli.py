"""Command-line surface tying the pipeline and the evaluation harness together."""
from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from .config import SimConfig
from .engine import run_multi, simulate
from .evaluation import (
    ABLATION_TOGGLES,
    BenchmarkRow,
    ablation_suite,
    confidence_interval_95,
    dtw,
    plot_rows,
    responsiveness_matrix,
    rows_to_table,
)
from .reasoning import OracleBackend, RemoteBackend
from .sceneio import (
    SceneFormatError,
    ingest_ucy,
    load_scene,
    read_trace,
    save_scene,
    write_memory_log,
    write_trace,
)


def _fail(field: str, message: str, code: int = 2) -> None:
    click.echo(json.dumps({"error": {"field": field, "message": message}}), err=True)
    sys.exit(code)


def _load_scene_or_fail(path: str):
    try:
        return load_scene(path)
    except FileNotFoundError:
        _fail("scene", f"no such file: {path}")
    except SceneFormatError as exc:
        _fail(exc.field, str(exc))


def _load_config(path: str | None) -> SimConfig:
    if path is None:
        return SimConfig()
    try:
        return SimConfig.load(path)
    except FileNotFoundError:
        _fail("config", f"no such file: {path}")
    except (ValueError, TypeError) as exc:
        _fail("config", str(exc))


def _make_backend(kind: str, endpoint: str | None, config: SimConfig):
    oracle = OracleBackend(config.oracle)
    if kind == "oracle":
        return oracle
    try:
        return RemoteBackend(endpoint=endpoint, oracle=oracle)
    except (ValueError, FileNotFoundError) as exc:
        _fail("backend", str(exc))


def _collect_traces(paths) -> list:
    traces = []
    for path in paths:
        if os.path.isdir(path):
            names = sorted(
                os.path.join(path, n) for n in os.listdir(path) if n.endswith(".txt")
            )
        else:
            names = [path]
        for name in names:
            try:
                traces.append((os.path.basename(name), read_trace(name)))
            except FileNotFoundError:
                _fail("trace", f"no such file: {name}")
            except SceneFormatError as exc:
                _fail(exc.field, str(exc))
    return traces


backend_option = click.option(
    "--backend", type=click.Choice(["oracle", "remote"]), default="oracle", show_default=True
)
endpoint_option = click.option(
    "--endpoint", default=None, help="Remote backend URL (or HEADSIM_BACKEND_URL)."
)


@click.group()
def main() -> None:
    """Head-rotation synthesis pipeline and evaluation harness."""


@main.command("simulate")
@click.option("--scene", "scene_path", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@backend_option
@endpoint_option
def simulate_cmd(scene_path, config_path, seed, out_dir, backend, endpoint):
    """Run the full pipeline on a scene and write trace + memory logs."""
    scene, trajectories = _load_scene_or_fail(scene_path)
    if not trajectories:
        _fail("trajectories", "scene file defines no trajectories")
    config = _load_config(config_path)
    be = _make_backend(backend, endpoint, config)
    os.makedirs(out_dir, exist_ok=True)
    scenario = os.path.splitext(os.path.basename(scene_path))[0]
    if len(trajectories) == 1:
        agent_id, traj = next(iter(trajectories.items()))
        plan, trace = simulate(
            scene, traj, be, config, seed=seed, agent_id=agent_id, scenario=scenario
        )
        results = {agent_id: (plan, trace)}
    else:
        results = run_multi(scene, trajectories, be, config, seed=seed, scenario=scenario)
    for agent_id, (plan, trace) in sorted(results.items()):
        write_trace(trace, os.path.join(out_dir, f"trace_{agent_id}.txt"))
        write_memory_log(plan.memory_log, os.path.join(out_dir, f"memory_{agent_id}.jsonl"))
    click.echo(f"wrote {len(results)} trace(s) to {out_dir}")


@main.command()
@click.option("--reference", "references", multiple=True, required=True, type=click.Path())
@click.option("--candidate", "candidates", multiple=True, required=True, type=click.Path())
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--plot", "plot_path", default=None, type=click.Path())
def evaluate(references, candidates, out_path, plot_path):
    """Score candidate traces against reference traces with normalized DTW."""
    refs = _collect_traces(references)
    cands = _collect_traces(candidates)
    if not refs or not cands:
        _fail("traces", "need at least one reference and one candidate trace")
    ref_by_name = dict(refs)
    rows = []
    for name, trace in cands:
        if name in ref_by_name:
            scores = [dtw(trace, ref_by_name[name]).normalized_cost]
        else:
            scores = [dtw(trace, ref).normalized_cost for _, ref in refs]
        if len(scores) >= 2:
            mean, half = confidence_interval_95(scores)
        else:
            mean, half = scores[0], 0.0
        rows.append(
            BenchmarkRow(
                scenario=trace.scenario or name,
                method=name,
                condition=trace.condition,
                mean=mean,
                ci95=half,
                n=len(scores),
                seeds=[trace.seed],
            )
        )
    table = rows_to_table(rows)
    click.echo(table, nl=False)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(table)
    if plot_path:
        plot_rows(rows, plot_path)


@main.command()
@click.option("--mdc", "mdc_path", required=True, type=click.Path())
@click.option("--apc", "apc_path", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--runs", default=5, show_default=True, type=int)
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--plot", "plot_path", default=None, type=click.Path())
@backend_option
@endpoint_option
def responsiveness(mdc_path, apc_path, config_path, seed, runs, out_path, plot_path, backend, endpoint):
    """Plan/execute across MDC-MDC, MDC-APC, APC-APC and score vs APC output."""
    mdc_scene, mdc_trajs = _load_scene_or_fail(mdc_path)
    apc_scene, _ = _load_scene_or_fail(apc_path)
    if not mdc_trajs:
        _fail("trajectories", "MDC scene file defines no trajectories")
    traj = next(iter(mdc_trajs.values()))
    config = _load_config(config_path)
    be = _make_backend(backend, endpoint, config)
    scenario = os.path.splitext(os.path.basename(mdc_path))[0].removesuffix("_mdc")
    seeds = [seed + i for i in range(runs)]
    try:
        rows = responsiveness_matrix(
            mdc_scene, apc_scene, traj, be, config, seeds, scenario=scenario
        )
    except ValueError as exc:
        _fail("scenes", str(exc))
    table = rows_to_table(rows)
    click.echo(table, nl=False)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(table)
    if plot_path:
        plot_rows(rows, plot_path)


@main.command()
@click.option("--scene", "scene_path", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--runs", default=5, show_default=True, type=int)
@click.option(
    "--toggle",
    "toggles",
    multiple=True,
    help="Ablation toggle name (repeatable); default: all toggles.",
)
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--plot", "plot_path", default=None, type=click.Path())
@backend_option
@endpoint_option
def ablate(scene_path, config_path, seed, runs, toggles, out_path, plot_path, backend, endpoint):
    """Run ablation toggles and score each against the full model's output."""
    scene, trajectories = _load_scene_or_fail(scene_path)
    if not trajectories:
        _fail("trajectories", "scene file defines no trajectories")
    traj = next(iter(trajectories.values()))
    config = _load_config(config_path)
    be = _make_backend(backend, endpoint, config)
    names = list(toggles) if toggles else list(ABLATION_TOGGLES)
    alias = {"no-safety": "w/o Safety driver", "no-interest": "w/o Interest driver",
             "no-information-seeking": "w/o Information-seeking driver",
             "no-social-schema": "w/o Social Schema driver", "no-habit": "w/o Habit driver",
             "no-llm": "w/o LLM", "no-res": "w/o RES",
             "no-drivers": "w/o all Motivational Drivers"}
    names = [alias.get(n, n) for n in names]
    unknown = [n for n in names if n not in ABLATION_TOGGLES]
    if unknown:
        _fail("toggle", f"unknown toggles {unknown}; valid: {list(ABLATION_TOGGLES)}")
    scenario = os.path.splitext(os.path.basename(scene_path))[0]
    seeds = [seed + i for i in range(runs)]
    rows = ablation_suite(scene, traj, be, config, seeds, toggles=names, scenario=scenario)
    table = rows_to_table(rows)
    click.echo(table, nl=False)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(table)
    if plot_path:
        plot_rows(rows, plot_path)


@main.command("ingest-ucy")
@click.option("--annotation", "annotation_path", required=True, type=click.Path())
@click.option("--template", "template_path", default=None, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def ingest_ucy_cmd(annotation_path, template_path, out_dir):
    """Convert a pedestrian annotation file into a scene plus ground-truth traces."""
    template = None
    if template_path:
        try:
            with open(template_path, "r", encoding="utf-8") as fh:
                template = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            _fail("template", str(exc))
    if not os.path.exists(annotation_path):
        _fail("annotation", f"no such file: {annotation_path}")
    try:
        scene, trajectories, head_traces, report = ingest_ucy(annotation_path, template)
    except SceneFormatError as exc:
        _fail(exc.field, str(exc))
    os.makedirs(out_dir, exist_ok=True)
    save_scene(scene, trajectories, os.path.join(out_dir, "scene.json"))
    from .engine import ExecutedTrace

    for agent_id, head in sorted(head_traces.items()):
        trace = ExecutedTrace(
            tick=head.tick,
            t0=trajectories[agent_id].t_start,
            samples=list(head.samples),
            phases=[""] * len(head.samples),
            drivers=[""] * len(head.samples),
            agent_id=agent_id,
            scenario=os.path.splitext(os.path.basename(annotation_path))[0],
            condition="external",
        )
        write_trace(trace, os.path.join(out_dir, f"groundtruth_{agent_id}.txt"))
    for line in report:
        click.echo(f"warning: {line}", err=True)
    click.echo(f"ingested {len(trajectories)} pedestrian(s) into {out_dir}")


@main.command("validate-scene")
@click.option("--scene", "scene_path", required=True, type=click.Path())
def validate_scene(scene_path):
    """Parse a scene file and check its invariants; exit 0 when valid."""
    scene, trajectories = _load_scene_or_fail(scene_path)
    n_ent = len(scene.entities) + len(scene.agents)
    click.echo(
        f"ok: condition={scene.condition} entities={n_ent} trajectories={len(trajectories)}"
    )


if __name__ == "__main__":
    main()
