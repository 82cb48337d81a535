"""Pluggable reasoning backends for describing, planning, and validating.

The oracle backend is a pure function of its inputs: it evaluates a fixed
priority ladder of symbolic predicates over the visible scene and the
agent's memory. The remote backend speaks a small JSON wire protocol to an
external inference service and falls back to the oracle (or to a keep
verdict) whenever the service misbehaves.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
import requests

from .geom import UnitQuaternion
from .memory import ActionReason, Driver, Fmm, MemoryEntry, tag_relevance
from .perception import Observation
from .world import Goal, Pose, SceneView

#: Lower number = takes precedence when several predicates fire.
PRIORITY = {
    Driver.SAFETY: 1,
    Driver.INFORMATION_SEEKING: 2,
    Driver.SOCIAL_SCHEMA: 3,
    Driver.INTEREST: 4,
    Driver.HABIT: 5,
}

_MIN_SPEED = 0.1  # m/s below which an entity counts as stationary


@dataclass(frozen=True)
class DriverSet:
    """Enable/disable flags for the five motivational drivers."""

    interest: bool = True
    information_seeking: bool = True
    safety: bool = True
    social_schema: bool = True
    habit: bool = True

    def enabled(self, driver: Driver) -> bool:
        return {
            Driver.INTEREST: self.interest,
            Driver.INFORMATION_SEEKING: self.information_seeking,
            Driver.SAFETY: self.safety,
            Driver.SOCIAL_SCHEMA: self.social_schema,
            Driver.HABIT: self.habit,
        }[driver]

    def enabled_names(self) -> list:
        return [d.value for d in Driver if self.enabled(d)]

    def without(self, driver: Driver) -> "DriverSet":
        key = {
            Driver.INTEREST: "interest",
            Driver.INFORMATION_SEEKING: "information_seeking",
            Driver.SAFETY: "safety",
            Driver.SOCIAL_SCHEMA: "social_schema",
            Driver.HABIT: "habit",
        }[driver]
        return replace(self, **{key: False})

    @staticmethod
    def none() -> "DriverSet":
        return DriverSet(False, False, False, False, False)


@dataclass(frozen=True)
class OracleThresholds:
    """Numeric knobs of the symbolic predicates (configuration defaults)."""

    hazard_range_m: float = 15.0
    approach_margin_m: float = 2.0
    approach_horizon_s: float = 4.0
    flow_cone_deg: float = 30.0
    flow_min_agents: int = 3
    habit_period_s: float = 4.0
    sweep_deg: float = 30.0


@dataclass
class PlanContext:
    """Everything a planning call may consult."""

    goal: Goal
    body_pose: Pose
    agent_velocity: np.ndarray
    head: UnitQuaternion
    sightings: list
    fmm: Fmm
    now: float
    current_entry: MemoryEntry | None = None
    run_start: float = 0.0


@dataclass
class Verdict:
    """Outcome of validating a pending action against a predicted view."""

    decision: str  # "keep" | "replace"
    replacement: ActionReason | None = None

    def __post_init__(self) -> None:
        if self.decision not in ("keep", "replace"):
            raise ValueError(f"decision must be keep or replace, got {self.decision!r}")
        if (self.decision == "replace") != (self.replacement is not None):
            raise ValueError("replacement must be present iff decision is replace")


@dataclass
class LookaheadBundle:
    """Predicted future view plus the planning context submitted for validation."""

    tick_t: float
    predicted_t: float
    predicted_obs: Observation
    self_pose: Pose
    head: UnitQuaternion
    sightings_now: list
    goal: Goal
    pending_action: ActionReason | None
    last_action: ActionReason | None
    executed_history: list
    fmm: Fmm
    view: SceneView
    predicted_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))


def _closest_approach(rel_p: np.ndarray, rel_v: np.ndarray, horizon: float) -> float:
    """Minimum distance between two linearly moving points within ``horizon``."""
    vv = float(np.dot(rel_v, rel_v))
    if vv < 1e-12:
        return float(np.linalg.norm(rel_p))
    t_star = -float(np.dot(rel_p, rel_v)) / vv
    t_star = min(max(t_star, 0.0), horizon)
    return float(np.linalg.norm(rel_p + rel_v * t_star))


class OracleBackend:
    """Deterministic backend: template descriptions and a predicate ladder.

    Predicates are evaluated in strict priority order; the first enabled
    one that fires wins:

    1. Safety: a visible hazard inside the hazard range, or any moving
       entity whose linear extrapolation passes within the approach margin
       of the agent's own path inside the horizon.
    2. InformationSeeking: the goal position has never been in view, or a
       goal-relevant entity is visible that memory has not recorded yet.
    3. SocialSchema: enough visible pedestrians share a motion direction
       within the flow cone; the target is the mean flow direction.
    4. Interest: a visible novelty-tagged entity with no attended record.
    5. Habit: nothing above has fired for the habit period; sweep to
       heading +/- the sweep angle, alternating sides.
    """

    def __init__(self, thresholds: OracleThresholds | None = None):
        self.thresholds = thresholds or OracleThresholds()

    # -- describe ---------------------------------------------------------

    def describe_entities(self, obs: Observation, goal_text: str) -> list:
        out = []
        for s in obs.sightings:
            text = (
                f"{s.entity.class_label} at {s.range_m:.0f} m, "
                f"bearing {math.degrees(s.bearing):+.0f} deg"
            )
            tags = sorted(s.entity.tags)
            if tags:
                text += "; tags: " + ", ".join(tags)
            if s.entity.description_hint:
                text += f" ({s.entity.description_hint})"
            out.append((s.entity.id, text))
        return out

    # -- plan -------------------------------------------------------------

    def plan(self, ctx: PlanContext, drivers: DriverSet) -> ActionReason | None:
        """Highest-priority firing predicate, or None when nothing applies."""
        return self._best_action(ctx, drivers, include_habit=True)

    def direct_pick(self, ctx: PlanContext, drivers: DriverSet) -> ActionReason | None:
        """View-only selection used when the planning stage is disabled.

        Picks the nearest visible entity in tag-priority order without
        consulting memory, goal geometry, or flow statistics.
        """
        ladder = [
            ("hazard", Driver.SAFETY),
            ("goal_relevant", Driver.INFORMATION_SEEKING),
            ("social", Driver.SOCIAL_SCHEMA),
            ("novel", Driver.INTEREST),
        ]
        for tag, driver in ladder:
            if not drivers.enabled(driver):
                continue
            hits = [s for s in ctx.sightings if tag in s.entity.tags]
            if hits:
                s = hits[0]  # sightings are range-sorted
                return ActionReason(
                    driver=driver,
                    rationale=f"view-only pick: {s.entity.class_label} tagged {tag}",
                    issued_at=ctx.now,
                    target_entity=s.entity.id,
                )
        return None

    def _best_action(
        self, ctx: PlanContext, drivers: DriverSet, include_habit: bool
    ) -> ActionReason | None:
        thr = self.thresholds
        if drivers.safety:
            action = self._safety(ctx)
            if action:
                return action
        if drivers.information_seeking:
            action = self._information_seeking(ctx)
            if action:
                return action
        if drivers.social_schema:
            action = self._social_schema(ctx)
            if action:
                return action
        if drivers.interest:
            action = self._interest(ctx)
            if action:
                return action
        if include_habit and drivers.habit:
            action = self._habit(ctx)
            if action:
                return action
        return None

    def _safety(self, ctx: PlanContext) -> ActionReason | None:
        thr = self.thresholds
        firing = []
        for s in ctx.sightings:
            if "hazard" in s.entity.tags and s.range_m < thr.hazard_range_m:
                firing.append((s, f"hazard {s.entity.class_label} at {s.range_m:.0f} m"))
                continue
            if float(np.linalg.norm(s.velocity)) > _MIN_SPEED:
                rel_p = s.position - ctx.body_pose.position
                rel_v = s.velocity - ctx.agent_velocity
                if _closest_approach(rel_p, rel_v, thr.approach_horizon_s) < thr.approach_margin_m:
                    firing.append(
                        (s, f"{s.entity.class_label} on a crossing course with the walking path")
                    )
        if not firing:
            return None
        s, why = firing[0]  # sightings are range-sorted: nearest threat wins
        return ActionReason(
            driver=Driver.SAFETY,
            rationale=why,
            issued_at=ctx.now,
            target_entity=s.entity.id,
        )

    def _information_seeking(self, ctx: PlanContext) -> ActionReason | None:
        # The current entry counts: a goal already in sight needs no search.
        if not ctx.fmm.goal_ever_in_view():
            offset = ctx.goal.position - ctx.body_pose.position
            if float(np.linalg.norm(offset)) > 1e-6:
                return ActionReason(
                    driver=Driver.INFORMATION_SEEKING,
                    rationale="locating the scenario goal",
                    issued_at=ctx.now,
                    target_orientation=UnitQuaternion.looking_at(offset),
                )
        seen = ctx.fmm.seen_entity_ids(before=ctx.current_entry)
        for s in ctx.sightings:
            if "goal_relevant" in s.entity.tags and s.entity.id not in seen:
                return ActionReason(
                    driver=Driver.INFORMATION_SEEKING,
                    rationale=f"checking goal-relevant {s.entity.class_label}",
                    issued_at=ctx.now,
                    target_entity=s.entity.id,
                )
        return None

    def _social_schema(self, ctx: PlanContext) -> ActionReason | None:
        thr = self.thresholds
        movers = [
            s
            for s in ctx.sightings
            if s.is_agent and float(np.linalg.norm(s.velocity)) > _MIN_SPEED
        ]
        if len(movers) < thr.flow_min_agents:
            return None
        dirs = {s.entity.id: s.velocity / np.linalg.norm(s.velocity) for s in movers}
        cone = math.radians(thr.flow_cone_deg)
        best_cluster: list = []
        for anchor in sorted(movers, key=lambda s: s.entity.id):
            a = dirs[anchor.entity.id]
            cluster = [
                s
                for s in movers
                if math.acos(min(1.0, max(-1.0, float(np.dot(a, dirs[s.entity.id]))))) <= cone
            ]
            if len(cluster) > len(best_cluster):
                best_cluster = cluster
        if len(best_cluster) < thr.flow_min_agents:
            return None
        mean = np.sum([dirs[s.entity.id] for s in best_cluster], axis=0)
        if float(np.linalg.norm(mean)) < 1e-9:
            return None
        return ActionReason(
            driver=Driver.SOCIAL_SCHEMA,
            rationale=f"surveying the flow of {len(best_cluster)} pedestrians",
            issued_at=ctx.now,
            target_orientation=UnitQuaternion.looking_at(mean),
        )

    def _interest(self, ctx: PlanContext) -> ActionReason | None:
        attended = ctx.fmm.attended_entity_ids()
        for s in ctx.sightings:
            if "novel" in s.entity.tags and s.entity.id not in attended:
                return ActionReason(
                    driver=Driver.INTEREST,
                    rationale=f"drawn to the {s.entity.class_label}",
                    issued_at=ctx.now,
                    target_entity=s.entity.id,
                )
        return None

    def _habit(self, ctx: PlanContext) -> ActionReason | None:
        thr = self.thresholds
        last = ctx.fmm.last_action()
        anchor = last.issued_at if last is not None else ctx.run_start
        if ctx.now - anchor < thr.habit_period_s - 1e-9:
            return None
        sign = 1.0 if ctx.fmm.habit_action_count() % 2 == 0 else -1.0
        yaw = ctx.body_pose.heading.yaw() + sign * math.radians(thr.sweep_deg)
        side = "left" if sign > 0 else "right"
        return ActionReason(
            driver=Driver.HABIT,
            rationale=f"periodic scan sweep to the {side}",
            issued_at=ctx.now,
            target_orientation=UnitQuaternion.from_yaw(yaw),
        )

    # -- validate ---------------------------------------------------------

    def validate(self, bundle: LookaheadBundle, drivers: DriverSet) -> Verdict:
        """Keep the reviewed action unless the predicted view invalidates it.

        Replace when a strictly higher-priority predicate fires on the
        predicted frame, or when an entity target is no longer reachable;
        the replacement is the current best (non-habit) action.
        """
        ctx = PlanContext(
            goal=bundle.goal,
            body_pose=bundle.predicted_obs.body_pose,
            agent_velocity=bundle.predicted_velocity,
            head=bundle.predicted_obs.head_pose,
            sightings=bundle.predicted_obs.sightings,
            fmm=bundle.fmm,
            now=bundle.tick_t,
        )
        best = self._best_action(ctx, drivers, include_habit=False)
        base = bundle.pending_action or bundle.last_action
        if base is None:
            if best is not None:
                return Verdict("replace", best)
            return Verdict("keep")
        if best is not None and PRIORITY[best.driver] < PRIORITY[base.driver]:
            return Verdict("replace", best)
        if base.target_entity is not None and not self._reachable(bundle, base.target_entity):
            if best is not None:
                return Verdict("replace", best)
        return Verdict("keep")

    def _reachable(self, bundle: LookaheadBundle, entity_id: str) -> bool:
        entity = bundle.view.scene.find(entity_id)
        if entity is None:
            return False
        horizon = bundle.predicted_t - bundle.tick_t
        predicted = entity.position_at(bundle.tick_t) + entity.velocity_at(bundle.tick_t) * horizon
        dist = float(np.linalg.norm(predicted - bundle.predicted_obs.body_pose.position))
        return dist <= bundle.view.fov.max_range


# -- remote client ---------------------------------------------------------

ROLE_TIMEOUTS = {"describe": 5.0, "plan": 10.0, "validate": 3.0, "relevance": 5.0}

TEMPLATE_IDS = {"describe": "describe-v1", "plan": "plan-v1", "validate": "validate-v1"}


class BackendError(RuntimeError):
    """Remote reply was missing, malformed, or violated the contract."""


def _pose_payload(pose: Pose, head: UnitQuaternion) -> dict:
    return {
        "t": pose.t,
        "position": [float(v) for v in pose.position],
        "body_yaw_deg": math.degrees(pose.heading.yaw()),
        "head_quaternion": [head.w, head.x, head.y, head.z],
    }


def _sighting_payload(s) -> dict:
    return {
        "id": s.entity.id,
        "class_label": s.entity.class_label,
        "tags": sorted(s.entity.tags),
        "bearing_deg": math.degrees(s.bearing),
        "range_m": s.range_m,
        "is_agent": s.is_agent,
    }


def _fmm_excerpt(fmm: Fmm, limit: int = 10) -> list:
    out = []
    for entry in fmm.entries[-limit:]:
        item = {
            "t": entry.t,
            "entity_ids": [snap.id for snap in entry.snapshots()],
            "executed": entry.executed,
        }
        if entry.action_reason is not None:
            item["driver"] = entry.action_reason.driver.value
            item["rationale"] = entry.action_reason.rationale
        out.append(item)
    return out


def default_template_dir() -> str:
    return str(resources.files("headsim").joinpath("templates"))


class RemoteBackend:
    """JSON-over-HTTP client for external describe/plan/validate services.

    Every failure path degrades gracefully: describe and plan fall back to
    the oracle backend, validate fails safe to a keep verdict. Each
    fallback is recorded in ``flags``.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        oracle: OracleBackend | None = None,
        timeouts: dict | None = None,
        template_dir: str | None = None,
        session=None,
    ):
        self.endpoint = endpoint or os.environ.get("HEADSIM_BACKEND_URL", "")
        if not self.endpoint:
            raise ValueError(
                "remote backend needs an endpoint (argument or HEADSIM_BACKEND_URL)"
            )
        self.oracle = oracle or OracleBackend()
        self.timeouts = dict(ROLE_TIMEOUTS)
        if timeouts:
            self.timeouts.update(timeouts)
        self.template_dir = template_dir or default_template_dir()
        for role in TEMPLATE_IDS:
            path = os.path.join(self.template_dir, f"{role}.txt")
            if not os.path.exists(path):
                raise FileNotFoundError(f"missing prompt template: {path}")
        self.session = session or requests.Session()
        self.flags: list = []

    def _flag(self, role: str, reason: str) -> None:
        self.flags.append({"role": role, "reason": reason})

    def _post(self, role: str, payload: dict) -> dict:
        payload = dict(payload, role=role, prompt_template_id=TEMPLATE_IDS.get(role, role))
        reply = self.session.post(self.endpoint, json=payload, timeout=self.timeouts[role])
        reply.raise_for_status()
        body = reply.json()
        if not isinstance(body, dict):
            raise BackendError(f"{role}: reply is not an object")
        return body

    # -- roles -------------------------------------------------------------

    def describe_entities(self, obs: Observation, goal_text: str) -> list:
        payload = {
            "goal": goal_text,
            "pose": _pose_payload(obs.body_pose, obs.head_pose),
            "entities": [_sighting_payload(s) for s in obs.sightings],
            "fmm_excerpt": [],
            "drivers": [],
        }
        try:
            body = self._post("describe", payload)
            descriptions = body["descriptions"]
            by_id = {d["entity_id"]: str(d["text"]) for d in descriptions}
            expected = [s.entity.id for s in obs.sightings]
            if set(by_id) != set(expected):
                raise BackendError("describe: descriptions do not cover the entity list")
            return [(eid, by_id[eid]) for eid in expected]
        except (requests.RequestException, BackendError, KeyError, TypeError, ValueError) as exc:
            self._flag("describe", str(exc))
            return self.oracle.describe_entities(obs, goal_text)

    def plan(self, ctx: PlanContext, drivers: DriverSet) -> ActionReason | None:
        payload = {
            "goal": ctx.goal.text,
            "pose": _pose_payload(ctx.body_pose, ctx.head),
            "entities": [_sighting_payload(s) for s in ctx.sightings],
            "fmm_excerpt": _fmm_excerpt(ctx.fmm),
            "drivers": drivers.enabled_names(),
        }
        try:
            body = self._post("plan", payload)
            return self._parse_action(body, ctx, drivers)
        except (requests.RequestException, BackendError, KeyError, TypeError, ValueError) as exc:
            self._flag("plan", str(exc))
            return self.oracle.plan(ctx, drivers)

    def validate(self, bundle: LookaheadBundle, drivers: DriverSet) -> Verdict:
        ctx = PlanContext(
            goal=bundle.goal,
            body_pose=bundle.predicted_obs.body_pose,
            agent_velocity=bundle.predicted_velocity,
            head=bundle.predicted_obs.head_pose,
            sightings=bundle.predicted_obs.sightings,
            fmm=bundle.fmm,
            now=bundle.tick_t,
        )
        payload = {
            "goal": bundle.goal.text,
            "pose": _pose_payload(bundle.self_pose, bundle.head),
            "entities": [_sighting_payload(s) for s in bundle.predicted_obs.sightings],
            "fmm_excerpt": _fmm_excerpt(bundle.fmm),
            "drivers": drivers.enabled_names(),
            "predicted_t": bundle.predicted_t,
            "pending": None
            if bundle.pending_action is None
            else {
                "driver": bundle.pending_action.driver.value,
                "rationale": bundle.pending_action.rationale,
            },
        }
        try:
            body = self._post("validate", payload)
            decision = body["decision"]
            if decision == "keep":
                return Verdict("keep")
            if decision != "replace":
                raise BackendError(f"validate: unknown decision {decision!r}")
            replacement = self._parse_action(body["replacement"], ctx, drivers)
            if replacement is None:
                raise BackendError("validate: replace verdict without a usable replacement")
            return Verdict("replace", replacement)
        except (requests.RequestException, BackendError, KeyError, TypeError, ValueError) as exc:
            self._flag("validate", str(exc))
            return Verdict("keep")

    def _parse_action(self, body: dict, ctx: PlanContext, drivers: DriverSet) -> ActionReason:
        try:
            driver = Driver(body["driver"])
        except ValueError as exc:
            raise BackendError(f"plan: unknown driver {body.get('driver')!r}") from exc
        if not drivers.enabled(driver):
            raise BackendError(f"plan: reply names disabled driver {driver.value}")
        kind = body["target_kind"]
        rationale = str(body.get("rationale", ""))
        if kind == "entity":
            eid = str(body["target_value"])
            if all(s.entity.id != eid for s in ctx.sightings):
                raise BackendError(f"plan: reply targets unknown entity {eid!r}")
            return ActionReason(
                driver=driver, rationale=rationale, issued_at=ctx.now, target_entity=eid
            )
        if kind == "orientation":
            w, x, y, z = (float(v) for v in body["target_value"])
            return ActionReason(
                driver=driver,
                rationale=rationale,
                issued_at=ctx.now,
                target_orientation=UnitQuaternion(w, x, y, z),
            )
        raise BackendError(f"plan: unknown target_kind {kind!r}")


class RemoteRelevanceScorer:
    """Relevance scoring through the remote backend, with deterministic fallback."""

    def __init__(self, backend: RemoteBackend, goal_text: str | None = None):
        self.backend = backend

    def __call__(self, entry: MemoryEntry, goal_text: str) -> float:
        payload = {
            "goal": goal_text,
            "pose": {},
            "entities": [
                {"id": s.id, "class_label": s.class_label, "tags": list(s.tags)}
                for s in entry.snapshots()
            ],
            "fmm_excerpt": [],
            "drivers": [],
        }
        try:
            body = self.backend._post("relevance", payload)
            score = float(body["score"])
            if score < 0 or not math.isfinite(score):
                raise BackendError(f"relevance: invalid score {score}")
            return score
        except (requests.RequestException, BackendError, KeyError, TypeError, ValueError) as exc:
            self.backend._flag("relevance", str(exc))
            entry.flags.append("relevance_fallback")
            return tag_relevance(entry, goal_text)
