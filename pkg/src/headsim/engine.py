"""Two-stage pipeline orchestration.

``run_dps`` walks the trajectory once offline: it captures novelty-gated
views at a fixed cadence, asks a backend to describe and plan, charges the
backend's sampled inference latency to the simulated clock, and simulates
the resulting head kinematics into a time-stamped plan.

``run_res`` re-executes a plan on a (possibly different) scene while a
lightweight validator reviews pending actions against a view predicted two
seconds ahead, substituting alternatives when the world has changed.
"""
from __future__ import annotations

import hashlib
import math
from bisect import insort
from dataclasses import dataclass, field, replace as dc_replace
from enum import Enum

import numpy as np

from .config import SimConfig
from .geom import AngularRate, UnitQuaternion, angular_distance, step_toward
from .memory import ActionReason, Driver, EntitySnapshot, Fmm, MemoryEntry
from .perception import NoveltyState, Observation, capture, pause, schedule_resume
from .reasoning import LookaheadBundle, PlanContext, Verdict
from .world import BodyTrajectory, Goal, Pose, Scene, SceneView, pose_at

EPS = 1e-9


def derive_seed(seed: int, label: str) -> int:
    """Deterministic child seed for an independent random stream."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def sample_hold(rng, params=None) -> float:
    """Hold duration: normal(mean, sd) clamped into [minimum, maximum]."""
    from .config import HoldParams

    p = params or HoldParams()
    value = float(rng.normal(p.mean, p.sd))
    return min(max(value, p.minimum), p.maximum)


class HeadPhase(str, Enum):
    ALIGNED = "ALIGNED"
    TURNING = "TURNING"
    HOLDING = "HOLDING"
    RETURNING = "RETURNING"


@dataclass
class PlannedAction:
    """A scheduled head-turn: either a reasoned action or a fallback sweep."""

    scheduled_t: float
    action: ActionReason | None = None
    fallback_target: UnitQuaternion | None = None
    validated: bool = False

    def __post_init__(self) -> None:
        if self.action is None and self.fallback_target is None:
            raise ValueError("a planned item needs an action or a fallback target")

    def driver_label(self) -> str:
        return self.action.driver.value if self.action is not None else ""

    def sort_key(self):
        return self.scheduled_t


@dataclass
class HeadState:
    orientation: UnitQuaternion
    phase: HeadPhase = HeadPhase.ALIGNED
    hold_deadline: float | None = None
    active: PlannedAction | None = None


def step_head(
    state: HeadState,
    body_heading: UnitQuaternion,
    clock: float,
    dt: float = 0.2,
    rng=None,
    rate: AngularRate | None = None,
    hold_params=None,
    target_of=None,
):
    """Advance the head one tick; returns (new_state, events).

    Turning and returning rotate along the shortest arc at the configured
    rate. Reaching the target starts a hold whose duration is drawn from
    ``rng``; once the hold deadline passes, the head returns to the body
    heading and realigns. Idle (no active action) tracks the body heading
    at the same rate cap. Events report hold starts, action completions,
    and realignment.
    """
    rate = rate or AngularRate()
    events: list = []
    if state.active is None:
        new_o = step_toward(state.orientation, body_heading, rate, dt)
        return HeadState(new_o, HeadPhase.ALIGNED, None, None), events

    if state.phase == HeadPhase.TURNING:
        if target_of is not None:
            target = target_of(state.active, clock)
        elif state.active.action is not None and state.active.action.target_orientation is not None:
            target = state.active.action.target_orientation
        else:
            target = state.active.fallback_target
        if target is None:
            raise ValueError("turning with an unresolvable target")
        new_o = step_toward(state.orientation, target, rate, dt)
        if angular_distance(new_o, target) <= EPS:
            hold_s = sample_hold(rng, hold_params) if rng is not None else (
                hold_params.mean if hold_params else 1.5
            )
            events.append(("hold_started", clock, hold_s))
            return HeadState(new_o, HeadPhase.HOLDING, clock + hold_s, state.active), events
        return HeadState(new_o, HeadPhase.TURNING, None, state.active), events

    if state.phase == HeadPhase.HOLDING:
        if clock >= state.hold_deadline - EPS:
            events.append(("completed", state.active))
            return HeadState(state.orientation, HeadPhase.RETURNING, None, state.active), events
        return state, events

    # RETURNING
    new_o = step_toward(state.orientation, body_heading, rate, dt)
    if angular_distance(new_o, body_heading) <= EPS:
        events.append(("aligned", clock))
        return HeadState(new_o, HeadPhase.ALIGNED, None, None), events
    return HeadState(new_o, HeadPhase.RETURNING, None, state.active), events


@dataclass
class ExecutedTrace:
    """Per-tick head orientations with phase/driver labels and an event log."""

    tick: float
    t0: float
    samples: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    drivers: list = field(default_factory=list)
    events: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    agent_id: str = "ego"
    scenario: str = ""
    condition: str = ""
    seed: int = 0

    def __len__(self) -> int:
        return len(self.samples)

    def times(self) -> list:
        return [self.t0 + k * self.tick for k in range(len(self.samples))]


@dataclass
class Plan:
    """Offline planning output: scheduled actions, the simulated head track,
    and the full (pre-eviction) memory insert log for replay."""

    actions: list
    trace: ExecutedTrace
    memory_log: list
    goal: Goal
    seed: int = 0

    def driver_labels(self) -> list:
        return [pa.driver_label() for pa in self.actions if pa.action is not None]


def body_velocity(traj: BodyTrajectory, t: float, h: float = 0.1) -> np.ndarray:
    """Finite-difference walking velocity at time t."""
    lo = max(traj.t_start, t - h)
    hi = min(traj.t_end, t + h)
    if hi - lo < 1e-9:
        return np.zeros(3)
    p0 = pose_at(traj, lo).position
    p1 = pose_at(traj, hi).position
    return (p1 - p0) / (hi - lo)


def _snap_with_descriptions(sightings, descriptions) -> list:
    desc = dict(descriptions)
    out = []
    for s in sightings:
        snap = EntitySnapshot.from_sighting(s)
        snap.description = desc.get(snap.id, "")
        out.append(snap)
    return out


def _next_tick(t: float, tick: float, t0: float) -> float:
    k = math.ceil((t - t0) / tick - 1e-9)
    return t0 + k * tick


def _drain_flags(backend, t: float, sink: list) -> None:
    pending = getattr(backend, "flags", None)
    if pending:
        for item in pending:
            sink.append({"t": t, **item})
        pending.clear()


class _Kinematics:
    """Shared per-tick execution of the head state machine over a queue."""

    def __init__(self, view: SceneView, config: SimConfig, rng_hold, trace: ExecutedTrace):
        self.view = view
        self.config = config
        self.rng_hold = rng_hold
        self.trace = trace
        self.rate = AngularRate(config.turn_rate_deg)
        start_pose = view.body_pose(view.traj.t_start)
        self.state = HeadState(start_pose.heading)
        self.queue: list = []
        self.aligned_since = view.traj.t_start
        self.on_activate = None  # callback(pa, t)
        self.on_complete = None  # callback(pa, t)

    def enqueue(self, pa: PlannedAction) -> None:
        self.queue.append(pa)
        self.queue.sort(key=PlannedAction.sort_key)

    def pending(self) -> PlannedAction | None:
        return self.queue[0] if self.queue else None

    def _resolve_target(self, pa: PlannedAction, clock: float) -> UnitQuaternion | None:
        if pa.action is not None and pa.action.target_entity is not None:
            entity = self.view.scene.find(pa.action.target_entity)
            if entity is None:
                return None
            body = self.view.body_pose(clock)
            offset = entity.position_at(clock) - body.position
            if float(np.linalg.norm(offset)) < 1e-9:
                return body.heading
            return UnitQuaternion.looking_at(offset)
        if pa.action is not None:
            return pa.action.target_orientation
        return pa.fallback_target

    def maybe_activate(self, t: float) -> PlannedAction | None:
        if self.state.active is not None or self.state.phase != HeadPhase.ALIGNED:
            return None
        if not self.queue or self.queue[0].scheduled_t > t + EPS:
            return None
        pa = self.queue.pop(0)
        if self._resolve_target(pa, t) is None:
            self.trace.flags.append({"t": t, "kind": "skipped_missing_target"})
            return self.maybe_activate(t)
        self.state = HeadState(self.state.orientation, HeadPhase.TURNING, None, pa)
        if self.on_activate:
            self.on_activate(pa, t)
        return pa

    def step_and_record(self, t: float) -> list:
        body = self.view.body_pose(t)
        # A vanished entity target freezes resolution at the current pose.
        def target_of(pa, clock):
            resolved = self._resolve_target(pa, clock)
            return resolved if resolved is not None else self.state.orientation

        self.state, events = step_head(
            self.state,
            body.heading,
            t,
            dt=self.config.tick,
            rng=self.rng_hold,
            rate=self.rate,
            hold_params=self.config.hold,
            target_of=target_of,
        )
        for ev in events:
            if ev[0] == "aligned":
                self.aligned_since = t
            elif ev[0] == "completed" and self.on_complete:
                self.on_complete(ev[1], t)
        active = self.state.active
        self.trace.samples.append(self.state.orientation)
        self.trace.phases.append(self.state.phase.value)
        self.trace.drivers.append(active.driver_label() if active is not None else "")
        return events


def _ticks(traj: BodyTrajectory, tick: float) -> list:
    n = int(math.floor(traj.duration / tick + 1e-9)) + 1
    return [traj.t_start + k * tick for k in range(n)]


def run_dps(
    scene: Scene,
    traj: BodyTrajectory,
    backend,
    config: SimConfig,
    seed: int = 0,
    agent_id: str = "ego",
    scenario: str = "",
    goal: Goal | None = None,
) -> Plan:
    """Offline perception-planning pass over the whole trajectory.

    Ticks the clock at the configured cadence; every novelty-gated view is
    described and planned through the backend, with sampled inference
    latencies delaying when the resulting action becomes schedulable. The
    head state machine runs throughout, producing the planned head track.
    """
    goal = goal or scene.goal
    view = SceneView(scene, traj, config.fov)
    trace = ExecutedTrace(
        tick=config.tick,
        t0=traj.t_start,
        agent_id=agent_id,
        scenario=scenario,
        condition=scene.condition,
        seed=seed,
    )
    rng_hold = np.random.default_rng(derive_seed(seed, "hold"))
    rng_lat = np.random.default_rng(derive_seed(seed, "dps-latency"))
    fmm = Fmm(goal.text, recent=config.fmm_recent, relevant=config.fmm_relevant)
    memory_log: list = []
    actions: list = []
    kin = _Kinematics(view, config, rng_hold, trace)
    pem = NoveltyState()
    in_flight: dict | None = None  # {"ready": t, "pa": PlannedAction|None}
    fallback_sign = 1.0
    run_start = traj.t_start

    def on_activate(pa: PlannedAction, t: float) -> None:
        nonlocal pem
        pem = pause(pem)
        trace.events.append(
            {
                "t": t,
                "kind": "activated",
                "driver": pa.driver_label(),
                "rationale": pa.action.rationale if pa.action else "fallback sweep",
            }
        )

    def on_complete(pa: PlannedAction, t: float) -> None:
        if pa.action is not None:
            fmm.mark_executed(pa.action)
        trace.events.append({"t": t, "kind": "executed", "driver": pa.driver_label()})

    kin.on_activate = on_activate
    kin.on_complete = on_complete

    def plan_from_observation(obs: Observation, t: float) -> None:
        """Describe + plan the captured view; charge latency to the clock."""
        nonlocal in_flight
        lat = config.latency.sample("describe", rng_lat)
        descriptions = backend.describe_entities(obs, goal.text)
        _drain_flags(backend, t, trace.flags)
        entry = MemoryEntry(
            t=obs.t,
            objects=_snap_with_descriptions(
                [s for s in obs.sightings if not s.is_agent], descriptions
            ),
            agents=_snap_with_descriptions(
                [s for s in obs.sightings if s.is_agent], descriptions
            ),
            goal_in_view=obs.goal_in_view,
        )
        fmm.insert(entry)
        memory_log.append(entry)
        ctx = PlanContext(
            goal=goal,
            body_pose=obs.body_pose,
            agent_velocity=body_velocity(traj, t),
            head=obs.head_pose,
            sightings=obs.sightings,
            fmm=fmm,
            now=t,
            current_entry=entry,
            run_start=run_start,
        )
        if config.use_llm:
            lat += config.latency.sample("plan", rng_lat)
            action = backend.plan(ctx, config.drivers)
        else:
            oracle = getattr(backend, "oracle", backend)
            action = oracle.direct_pick(ctx, config.drivers)
        _drain_flags(backend, t, trace.flags)
        ready = t + lat
        pa = None
        if action is not None:
            action.issued_at = ready
            entry.action_reason = action
            pa = PlannedAction(scheduled_t=_next_tick(ready, config.tick, run_start), action=action)
            trace.events.append(
                {
                    "t": t,
                    "kind": "planned",
                    "driver": action.driver.value,
                    "rationale": action.rationale,
                    "scheduled_t": pa.scheduled_t,
                }
            )
        in_flight = {"ready": ready, "pa": pa}

    for t in _ticks(traj, config.tick):
        if in_flight is not None and t >= in_flight["ready"] - EPS:
            if in_flight["pa"] is not None:
                kin.enqueue(in_flight["pa"])
                actions.append(in_flight["pa"])
            in_flight = None
        kin.maybe_activate(t)
        events = kin.step_and_record(t)
        for ev in events:
            if ev[0] == "hold_started":
                _, hold_start, hold_s = ev
                pem = schedule_resume(pem, hold_start + hold_s / 2.0)
        if in_flight is not None:
            continue  # the perception-planning pipe is busy
        obs, pem = capture(pem, t, view, kin.state.orientation, config.ssim_threshold)
        if obs is not None:
            plan_from_observation(obs, t)
            continue
        # Idle fallback: periodic scanning when nothing has fired for a while.
        idle = (
            kin.state.phase == HeadPhase.ALIGNED
            and not kin.queue
            and t - kin.aligned_since >= config.oracle.habit_period_s - EPS
            and t - run_start >= config.oracle.habit_period_s - EPS
        )
        if idle:
            if config.drivers.habit and config.use_llm:
                body = view.body_pose(t)
                forced = Observation(
                    t=t,
                    raster=view.raster(t, kin.state.orientation),
                    sightings=view.sightings(t, kin.state.orientation),
                    head_pose=kin.state.orientation,
                    body_pose=body,
                    goal_in_view=view.goal_in_view(t, kin.state.orientation),
                )
                plan_from_observation(forced, t)
            else:
                body = view.body_pose(t)
                yaw = body.heading.yaw() + fallback_sign * math.radians(config.oracle.sweep_deg)
                pa = PlannedAction(
                    scheduled_t=t, fallback_target=UnitQuaternion.from_yaw(yaw)
                )
                fallback_sign = -fallback_sign
                kin.enqueue(pa)
                actions.append(pa)
                trace.events.append({"t": t, "kind": "fallback_sweep"})
        # Keep PEM resume bookkeeping in sync with holds.
        if kin.state.phase == HeadPhase.HOLDING and pem.paused and pem.resume_time is None:
            hold_start = kin.state.hold_deadline - _active_hold(kin)
            pem = schedule_resume(pem, hold_start + _active_hold(kin) / 2.0)

    return Plan(actions=actions, trace=trace, memory_log=memory_log, goal=goal, seed=seed)


def run_res(
    scene: Scene,
    traj: BodyTrajectory,
    plan: Plan,
    backend,
    config: SimConfig,
    seed: int = 0,
    agent_id: str = "ego",
    scenario: str = "",
) -> ExecutedTrace:
    """Near-online execution of a plan with look-ahead validation.

    Each eligible tick submits a bundle built from the view predicted
    ``lookahead_s`` ahead; the verdict lands after a sampled validation
    latency and is applied to the action it reviewed: keep marks it
    validated, replace substitutes a new action (retargeting immediately if
    the turn already started). With validation disabled the plan replays
    verbatim.
    """
    view = SceneView(scene, traj, config.fov)
    trace = ExecutedTrace(
        tick=config.tick,
        t0=traj.t_start,
        agent_id=agent_id,
        scenario=scenario,
        condition=scene.condition,
        seed=seed,
    )
    rng_hold = np.random.default_rng(derive_seed(seed, "hold"))
    rng_val = np.random.default_rng(derive_seed(seed, "res-validate"))
    fmm = Fmm(plan.goal.text, recent=config.fmm_recent, relevant=config.fmm_relevant)
    kin = _Kinematics(view, config, rng_hold, trace)
    for pa in plan.actions:
        kin.enqueue(
            PlannedAction(
                scheduled_t=pa.scheduled_t,
                action=pa.action,
                fallback_target=pa.fallback_target,
            )
        )
    replay = [
        dc_replace(e, executed=False, flags=list(e.flags), objects=list(e.objects), agents=list(e.agents))
        for e in plan.memory_log
    ]
    replay_idx = 0
    in_flight: dict | None = None  # {"eff": t, "verdict": Verdict, "subject": pa|None}

    def on_activate(pa: PlannedAction, t: float) -> None:
        if config.use_res and not pa.validated:
            trace.flags.append({"t": t, "kind": "unvalidated", "driver": pa.driver_label()})
        trace.events.append(
            {
                "t": t,
                "kind": "activated",
                "driver": pa.driver_label(),
                "rationale": pa.action.rationale if pa.action else "fallback sweep",
            }
        )

    def on_complete(pa: PlannedAction, t: float) -> None:
        if pa.action is not None:
            fmm.mark_executed(pa.action)
        trace.events.append({"t": t, "kind": "executed", "driver": pa.driver_label()})

    kin.on_activate = on_activate
    kin.on_complete = on_complete

    def build_bundle(t: float, subject: PlannedAction | None) -> LookaheadBundle:
        pred_t = t + config.lookahead_s
        pred_body = view.body_pose(pred_t)
        pred_head = pred_body.heading  # nominal forward gaze for the predicted frame
        pred_sightings = view.sightings(t, pred_head, horizon=config.lookahead_s)
        pred_obs = Observation(
            t=pred_t,
            raster=view.raster(t, pred_head, horizon=config.lookahead_s),
            sightings=pred_sightings,
            head_pose=pred_head,
            body_pose=pred_body,
            goal_in_view=view.goal_in_view(pred_t, pred_head),
        )
        body = view.body_pose(t)
        return LookaheadBundle(
            tick_t=t,
            predicted_t=pred_t,
            predicted_obs=pred_obs,
            self_pose=body,
            head=kin.state.orientation,
            sightings_now=view.sightings(t, kin.state.orientation),
            goal=plan.goal,
            pending_action=subject.action if subject is not None else None,
            last_action=fmm.last_action(),
            executed_history=fmm.executed_actions(),
            fmm=fmm,
            view=view,
            predicted_velocity=body_velocity(traj, pred_t),
        )

    def apply_verdict(t: float) -> None:
        nonlocal in_flight
        subject = in_flight["subject"]
        verdict: Verdict = in_flight["verdict"]
        in_flight = None
        if verdict.decision == "keep":
            if subject is not None:
                subject.validated = True
            return
        repl = verdict.replacement
        repl.issued_at = t
        new_pa = None
        if subject is None:
            new_pa = PlannedAction(
                scheduled_t=_next_tick(t, config.tick, traj.t_start),
                action=repl,
                validated=True,
            )
            kin.enqueue(new_pa)
        elif kin.state.active is subject and kin.state.phase == HeadPhase.TURNING:
            subject.action = repl  # retarget the turn in progress
            subject.fallback_target = None
            subject.validated = True
        elif any(q is subject for q in kin.queue):
            subject.action = repl
            subject.fallback_target = None
            subject.validated = True
        else:
            trace.flags.append({"t": t, "kind": "stale_verdict", "driver": repl.driver.value})
            return
        sightings = view.sightings(t, kin.state.orientation)
        entry = MemoryEntry(
            t=t,
            objects=[EntitySnapshot.from_sighting(s) for s in sightings if not s.is_agent],
            agents=[EntitySnapshot.from_sighting(s) for s in sightings if s.is_agent],
            action_reason=repl,
            goal_in_view=view.goal_in_view(t, kin.state.orientation),
        )
        fmm.insert(entry)
        trace.events.append(
            {
                "t": t,
                "kind": "replaced",
                "driver": repl.driver.value,
                "rationale": repl.rationale,
                "previous": subject.driver_label() if subject is not None else "",
            }
        )

    for t in _ticks(traj, config.tick):
        while replay_idx < len(replay) and replay[replay_idx].t <= t + EPS:
            fmm.insert(replay[replay_idx])
            replay_idx += 1
        if in_flight is not None and t >= in_flight["eff"] - EPS:
            apply_verdict(t)
        kin.maybe_activate(t)
        kin.step_and_record(t)
        if not config.use_res:
            continue
        if in_flight is None and t + config.lookahead_s <= traj.t_end + EPS:
            subject = kin.pending()
            bundle = build_bundle(t, subject)
            verdict = backend.validate(bundle, config.drivers)
            _drain_flags(backend, t, trace.flags)
            latency = config.latency.sample("validate", rng_val)
            if latency > config.lookahead_s:
                trace.flags.append({"t": t, "kind": "late_validation", "latency": latency})
            in_flight = {"eff": t + latency, "verdict": verdict, "subject": subject}

    return trace


def simulate(
    scene: Scene,
    traj: BodyTrajectory,
    backend,
    config: SimConfig,
    seed: int = 0,
    agent_id: str = "ego",
    scenario: str = "",
    plan_scene: Scene | None = None,
):
    """Full pipeline: offline planning then (optionally validated) execution.

    ``plan_scene`` lets planning run on a different variant of the same
    layout than execution. Returns (plan, executed_trace).
    """
    plan = run_dps(
        plan_scene or scene, traj, backend, config, seed=seed, agent_id=agent_id, scenario=scenario
    )
    trace = run_res(
        scene, traj, plan, backend, config, seed=seed, agent_id=agent_id, scenario=scenario
    )
    return plan, trace


def run_multi(
    scene: Scene,
    trajectories: dict,
    backend,
    config: SimConfig,
    seed: int = 0,
    scenario: str = "",
) -> dict:
    """Independent pipeline per agent; peers appear as moving social entities.

    Each agent's goal position is the end of its own trajectory (the walk
    destination); per-agent randomness derives from the run seed and the
    agent id. Returns {agent_id: (plan, trace)}.
    """
    from .world import Entity

    results: dict = {}
    for agent_id, traj in sorted(trajectories.items()):
        peers = []
        for other_id, other in sorted(trajectories.items()):
            if other_id == agent_id:
                continue
            peers.append(
                Entity(
                    id=f"peer_{other_id}",
                    class_label="pedestrian",
                    position=other.samples[0][1],
                    extents=np.array([0.3, 0.3, 0.9]),
                    tags=frozenset({"social"}),
                    waypoints=[(t, p) for t, p, _ in other.samples],
                )
            )
        agent_scene = scene.with_extra_agents(peers)
        goal = Goal(text=scene.goal.text, position=traj.samples[-1][1])
        agent_seed = derive_seed(seed, agent_id)
        plan = run_dps(
            agent_scene,
            traj,
            backend,
            config,
            seed=agent_seed,
            agent_id=agent_id,
            scenario=scenario,
            goal=goal,
        )
        trace = run_res(
            agent_scene,
            traj,
            plan,
            backend,
            config,
            seed=agent_seed,
            agent_id=agent_id,
            scenario=scenario,
        )
        results[agent_id] = (plan, trace)
    return results
