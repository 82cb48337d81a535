"""File formats: scene files, trace files, memory logs, and UCY ingestion.

All formats are plain text with explicit version tags so fixtures diff
cleanly and golden tests stay stable.
"""
from __future__ import annotations

import json
import math
import os
from importlib import resources

import numpy as np

from .engine import ExecutedTrace
from .evaluation import HeadTrace
from .geom import UnitQuaternion, slerp
from .memory import ActionReason, Driver, EntitySnapshot, MemoryEntry
from .world import BodyTrajectory, Entity, Goal, Scene

SCENE_VERSION = 1
TRACE_VERSION = 1
UCY_FPS = 25.0
TARGET_TICK = 0.2


class SceneFormatError(ValueError):
    """A scene/trace file violated its schema; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(message)


# -- scene files -------------------------------------------------------------


def _entity_from_dict(data: dict, where: str) -> Entity:
    try:
        waypoints = None
        if data.get("waypoints"):
            waypoints = [(w["t"], w["position"]) for w in data["waypoints"]]
        return Entity(
            id=data["id"],
            class_label=data["class_label"],
            position=data.get("position", [0.0, 0.0, 0.0]),
            extents=data.get("extents", [0.5, 0.5, 0.5]),
            velocity=data.get("velocity", [0.0, 0.0, 0.0]),
            tags=frozenset(data.get("tags", [])),
            waypoints=waypoints,
            description_hint=data.get("description_hint", ""),
        )
    except KeyError as exc:
        raise SceneFormatError(f"{where}.{exc.args[0]}", f"{where}: missing field {exc.args[0]!r}")
    except ValueError as exc:
        raise SceneFormatError(where, f"{where}: {exc}")


def _entity_to_dict(e: Entity) -> dict:
    out = {
        "id": e.id,
        "class_label": e.class_label,
        "position": [float(v) for v in e.position],
        "extents": [float(v) for v in e.extents],
        "velocity": [float(v) for v in e.velocity],
        "tags": sorted(e.tags),
        "description_hint": e.description_hint,
    }
    if e.waypoints:
        out["waypoints"] = [
            {"t": float(t), "position": [float(v) for v in p]} for t, p in e.waypoints
        ]
    return out


def scene_from_dict(data: dict):
    """Parse a scene document into (Scene, {agent_id: BodyTrajectory})."""
    if data.get("version") != SCENE_VERSION:
        raise SceneFormatError("version", f"unsupported scene version {data.get('version')!r}")
    for key in ("goal", "condition"):
        if key not in data:
            raise SceneFormatError(key, f"missing top-level field {key!r}")
    goal_data = data["goal"]
    try:
        goal = Goal(text=goal_data["text"], position=goal_data["position"])
    except (KeyError, ValueError, TypeError) as exc:
        raise SceneFormatError("goal", f"goal: {exc}")
    entities = [
        _entity_from_dict(d, f"entities[{i}]") for i, d in enumerate(data.get("entities", []))
    ]
    agents = [_entity_from_dict(d, f"agents[{i}]") for i, d in enumerate(data.get("agents", []))]
    try:
        scene = Scene(entities=entities, agents=agents, goal=goal, condition=data["condition"])
    except ValueError as exc:
        raise SceneFormatError("condition", str(exc))
    trajectories = {}
    for i, tr in enumerate(data.get("trajectories", [])):
        where = f"trajectories[{i}]"
        try:
            samples = [
                (
                    s["t"],
                    s["position"],
                    UnitQuaternion.from_yaw(math.radians(s["yaw_deg"])),
                )
                for s in tr["samples"]
            ]
            trajectories[tr["agent_id"]] = BodyTrajectory(samples)
        except (KeyError, TypeError) as exc:
            raise SceneFormatError(where, f"{where}: malformed sample ({exc})")
        except ValueError as exc:
            raise SceneFormatError(where, f"{where}: {exc}")
    return scene, trajectories


def scene_to_dict(scene: Scene, trajectories: dict) -> dict:
    return {
        "version": SCENE_VERSION,
        "goal": {
            "text": scene.goal.text,
            "position": [float(v) for v in scene.goal.position],
        },
        "condition": scene.condition,
        "entities": [_entity_to_dict(e) for e in scene.entities],
        "agents": [_entity_to_dict(a) for a in scene.agents],
        "trajectories": [
            {
                "agent_id": agent_id,
                "samples": [
                    {
                        "t": float(t),
                        "position": [float(v) for v in p],
                        "yaw_deg": math.degrees(q.yaw()),
                    }
                    for t, p, q in traj.samples
                ],
            }
            for agent_id, traj in sorted(trajectories.items())
        ],
    }


def load_scene(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SceneFormatError("document", f"not valid JSON: {exc}")
    return scene_from_dict(data)


def save_scene(scene: Scene, trajectories: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene, trajectories), fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- trace files -------------------------------------------------------------


def write_trace(trace: ExecutedTrace, path: str) -> None:
    lines = [f"# headsim-trace v{TRACE_VERSION}"]
    for key, value in (
        ("agent", trace.agent_id),
        ("scenario", trace.scenario),
        ("condition", trace.condition),
        ("tick", trace.tick),
        ("seed", trace.seed),
    ):
        lines.append(f"# {key}={value}")
    lines.append("t,qw,qx,qy,qz,phase,driver")
    for k, q in enumerate(trace.samples):
        t = trace.t0 + k * trace.tick
        lines.append(
            f"{t:.4f},{q.w:.9f},{q.x:.9f},{q.y:.9f},{q.z:.9f},"
            f"{trace.phases[k]},{trace.drivers[k]}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path: str) -> ExecutedTrace:
    header: dict = {}
    samples: list = []
    phases: list = []
    drivers: list = []
    times: list = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(f"# headsim-trace v{TRACE_VERSION}"):
        raise SceneFormatError("version", f"{path}: not a headsim trace file")
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("# ") and "=" in line:
            key, _, value = line[2:].partition("=")
            header[key.strip()] = value.strip()
        elif line.startswith("t,"):
            body_start = i + 1
            break
    if body_start is None:
        raise SceneFormatError("header", f"{path}: missing column header")
    last_t = None
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise SceneFormatError("row", f"{path}:{lineno}: expected 7 columns")
        t, qw, qx, qy, qz = (float(v) for v in parts[:5])
        if last_t is not None and t <= last_t:
            raise SceneFormatError("t", f"{path}:{lineno}: timestamps must strictly increase")
        norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if abs(norm - 1.0) > 1e-6:
            raise SceneFormatError("quaternion", f"{path}:{lineno}: non-unit quaternion")
        last_t = t
        times.append(t)
        samples.append(UnitQuaternion(qw, qx, qy, qz))
        phases.append(parts[5])
        drivers.append(parts[6])
    tick = float(header.get("tick", TARGET_TICK))
    return ExecutedTrace(
        tick=tick,
        t0=times[0] if times else 0.0,
        samples=samples,
        phases=phases,
        drivers=drivers,
        agent_id=header.get("agent", "ego"),
        scenario=header.get("scenario", ""),
        condition=header.get("condition", ""),
        seed=int(header.get("seed", 0)),
    )


# -- memory logs -------------------------------------------------------------


def _action_to_dict(action: ActionReason) -> dict:
    out = {
        "driver": action.driver.value,
        "rationale": action.rationale,
        "issued_at": action.issued_at,
    }
    if action.target_entity is not None:
        out["target_entity"] = action.target_entity
    else:
        q = action.target_orientation
        out["target_orientation"] = [q.w, q.x, q.y, q.z]
    return out


def _action_from_dict(data: dict) -> ActionReason:
    target_orientation = None
    if "target_orientation" in data:
        target_orientation = UnitQuaternion(*data["target_orientation"])
    return ActionReason(
        driver=Driver(data["driver"]),
        rationale=data["rationale"],
        issued_at=data["issued_at"],
        target_entity=data.get("target_entity"),
        target_orientation=target_orientation,
    )


def _snapshot_to_dict(s: EntitySnapshot) -> dict:
    return {
        "id": s.id,
        "class_label": s.class_label,
        "tags": list(s.tags),
        "position": list(s.position),
        "range_m": s.range_m,
        "bearing": s.bearing,
        "description": s.description,
    }


def _snapshot_from_dict(d: dict) -> EntitySnapshot:
    return EntitySnapshot(
        id=d["id"],
        class_label=d["class_label"],
        tags=tuple(d["tags"]),
        position=tuple(d["position"]),
        range_m=d["range_m"],
        bearing=d["bearing"],
        description=d.get("description", ""),
    )


def entry_to_dict(entry: MemoryEntry) -> dict:
    out = {
        "t": entry.t,
        "objects": [_snapshot_to_dict(s) for s in entry.objects],
        "agents": [_snapshot_to_dict(s) for s in entry.agents],
        "relevance": entry.relevance,
        "executed": entry.executed,
        "goal_in_view": entry.goal_in_view,
        "flags": list(entry.flags),
    }
    if entry.action_reason is not None:
        out["action_reason"] = _action_to_dict(entry.action_reason)
    return out


def entry_from_dict(data: dict) -> MemoryEntry:
    return MemoryEntry(
        t=data["t"],
        objects=[_snapshot_from_dict(d) for d in data.get("objects", [])],
        agents=[_snapshot_from_dict(d) for d in data.get("agents", [])],
        action_reason=_action_from_dict(data["action_reason"])
        if "action_reason" in data
        else None,
        relevance=data.get("relevance"),
        executed=data.get("executed", False),
        goal_in_view=data.get("goal_in_view", False),
        flags=list(data.get("flags", [])),
    )


def write_memory_log(entries, path: str) -> None:
    """One JSON object per line, in insertion order."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry_to_dict(entry), sort_keys=True) + "\n")


def read_memory_log(path: str) -> list:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(entry_from_dict(json.loads(line)))
    return entries


# -- UCY-style annotations ---------------------------------------------------


def parse_ucy_annotation(path: str):
    """Parse a spline-style pedestrian annotation file.

    Expected grammar (whitespace-separated, comments after values allowed):

        <number of pedestrians>
        <number of control points>        (per pedestrian)
        x  y  frame  gaze_deg             (one line per control point)

    Returns (pedestrians, report): pedestrians is a list of lists of
    (t_seconds, x, y, gaze_deg); malformed pedestrians are skipped and the
    report lists the offending line numbers.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    report: list = []
    idx = 0

    def next_content_line():
        nonlocal idx
        while idx < len(lines):
            stripped = lines[idx].strip()
            idx += 1
            if stripped and not stripped.startswith("#"):
                return idx, stripped
        return None, None

    lineno, first = next_content_line()
    if first is None:
        report.append("empty annotation file")
        return [], report
    try:
        count = int(first.split()[0])
    except ValueError:
        report.append(f"line {lineno}: expected pedestrian count")
        return [], report
    pedestrians = []
    for p in range(count):
        lineno, header = next_content_line()
        if header is None:
            report.append(f"pedestrian {p}: missing control-point count at end of file")
            break
        try:
            n_points = int(header.split()[0])
        except ValueError:
            report.append(f"line {lineno}: expected control-point count")
            break
        points = []
        ok = True
        for _ in range(n_points):
            lineno, row = next_content_line()
            if row is None:
                report.append(f"pedestrian {p}: truncated control points")
                ok = False
                break
            parts = row.split()
            try:
                x, y, frame, gaze = (float(v) for v in parts[:4])
            except (ValueError, IndexError):
                report.append(f"line {lineno}: malformed control point; pedestrian {p} skipped")
                ok = False
                break
            points.append((frame / UCY_FPS, x, y, gaze))
        if not ok:
            continue
        if any(b[0] <= a[0] for a, b in zip(points, points[1:])):
            report.append(f"pedestrian {p}: non-increasing frames; skipped")
            continue
        pedestrians.append(points)
    return pedestrians, report


def _resample_pedestrian(points, tick: float = TARGET_TICK):
    """Lift one annotation track to 3D and resample onto the tick grid.

    Positions interpolate linearly, gaze yaw by shortest arc; body heading
    comes from the motion tangent. Returns (BodyTrajectory, HeadTrace)
    or None when the track is too short.
    """
    if len(points) < 2:
        return None
    t0 = points[0][0]
    t_end = points[-1][0]
    n = int(math.floor((t_end - t0) / tick + 1e-9)) + 1
    ts = [points[i][0] for i in range(len(points))]
    xs = [p[1] for p in points]
    ys = [p[2] for p in points]
    gaze_quats = [UnitQuaternion.from_yaw(math.radians(p[3])) for p in points]

    def locate(t):
        j = 0
        while j + 2 < len(ts) and ts[j + 1] <= t:
            j += 1
        f = (t - ts[j]) / (ts[j + 1] - ts[j])
        return j, min(max(f, 0.0), 1.0)

    body_samples = []
    head_samples = []
    positions = []
    for k in range(n):
        t = t0 + k * tick
        j, f = locate(t)
        pos = np.array(
            [xs[j] + f * (xs[j + 1] - xs[j]), ys[j] + f * (ys[j + 1] - ys[j]), 0.0]
        )
        positions.append(pos)
        head_samples.append(slerp(gaze_quats[j], gaze_quats[j + 1], f))
    if n < 2:
        return None
    heading = UnitQuaternion.identity()
    for k in range(n):
        t = t0 + k * tick
        nxt = positions[min(k + 1, n - 1)]
        prev = positions[max(k - 1, 0)]
        d = nxt - prev
        if float(np.linalg.norm(d[:2])) > 1e-6:
            heading = UnitQuaternion.from_yaw(math.atan2(d[1], d[0]))
        body_samples.append((t, positions[k], heading))
    traj = BodyTrajectory(body_samples)
    head = HeadTrace(samples=head_samples, tick=tick)
    return traj, head


def ingest_ucy(annotation_path: str, template: dict | None = None, tick: float = TARGET_TICK):
    """Build a multi-agent scene from a pedestrian annotation file.

    ``template`` optionally carries goal/condition/static entities (the
    scene-file schema without trajectories). Ground-truth gaze becomes a
    per-agent HeadTrace. Returns (scene, trajectories, head_traces, report).
    """
    pedestrians, report = parse_ucy_annotation(annotation_path)
    if template is not None:
        tpl = dict(template)
        tpl.setdefault("version", SCENE_VERSION)
        tpl.setdefault("trajectories", [])
        scene, _ = scene_from_dict(tpl)
    else:
        scene = Scene(
            entities=[],
            agents=[],
            goal=Goal(text="walk to your destination", position=[0.0, 0.0, 0.0]),
            condition="MDC",
        )
    trajectories: dict = {}
    head_traces: dict = {}
    for i, points in enumerate(pedestrians):
        agent_id = f"ped_{i:03d}"
        resampled = _resample_pedestrian(points, tick)
        if resampled is None:
            report.append(f"pedestrian {i}: fewer than 2 usable points; skipped")
            continue
        traj, head = resampled
        head.agent_id = agent_id
        trajectories[agent_id] = traj
        head_traces[agent_id] = head
    if not trajectories:
        report.append("no usable pedestrians; scene has no agents")
    return scene, trajectories, head_traces, report


# -- fixtures ----------------------------------------------------------------


def fixture_names() -> list:
    base = resources.files("headsim").joinpath("fixtures")
    return sorted(p.name[: -len(".json")] for p in base.iterdir() if p.name.endswith(".json"))


def fixture_path(name: str) -> str:
    path = resources.files("headsim").joinpath("fixtures", f"{name}.json")
    if not os.path.exists(str(path)):
        raise FileNotFoundError(f"no such fixture {name!r}; available: {fixture_names()}")
    return str(path)


def load_fixture(name: str):
    """(Scene, {agent_id: BodyTrajectory}) for a shipped fixture."""
    return load_scene(fixture_path(name))
