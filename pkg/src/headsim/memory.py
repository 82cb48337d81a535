"""Bounded agent memory: observations and decisions under hybrid retention.

The log keeps at most ``recent + relevant`` entries: the newest ``recent``
are always kept, and the remainder are the highest goal-relevance entries
among the older ones.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum

from .geom import UnitQuaternion

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class Driver(str, Enum):
    """Motivational driver behind a head-turn decision."""

    INTEREST = "Interest"
    INFORMATION_SEEKING = "InformationSeeking"
    SAFETY = "Safety"
    SOCIAL_SCHEMA = "SocialSchema"
    HABIT = "Habit"


@dataclass
class ActionReason:
    """A target head orientation plus the driver and rationale behind it.

    Exactly one of ``target_entity`` / ``target_orientation`` is set.
    """

    driver: Driver
    rationale: str
    issued_at: float
    target_entity: str | None = None
    target_orientation: UnitQuaternion | None = None

    def __post_init__(self) -> None:
        if (self.target_entity is None) == (self.target_orientation is None):
            raise ValueError("exactly one of target_entity / target_orientation must be set")
        self.driver = Driver(self.driver)

    def same_action(self, other: "ActionReason") -> bool:
        if self.driver != other.driver or self.issued_at != other.issued_at:
            return False
        if self.target_entity is not None:
            return self.target_entity == other.target_entity
        return other.target_orientation is not None and self.target_orientation.approx_equal(
            other.target_orientation, 1e-9
        )


@dataclass
class EntitySnapshot:
    """Frozen view of one entity as it appeared in an observation."""

    id: str
    class_label: str
    tags: tuple
    position: tuple
    range_m: float
    bearing: float
    description: str = ""

    @staticmethod
    def from_sighting(s) -> "EntitySnapshot":
        return EntitySnapshot(
            id=s.entity.id,
            class_label=s.entity.class_label,
            tags=tuple(sorted(s.entity.tags)),
            position=tuple(float(v) for v in s.position),
            range_m=s.range_m,
            bearing=s.bearing,
            description=s.description,
        )


@dataclass
class MemoryEntry:
    """One remembered observation, optionally carrying the decision it led to."""

    t: float
    objects: list = field(default_factory=list)
    agents: list = field(default_factory=list)
    action_reason: ActionReason | None = None
    relevance: float | None = None
    executed: bool = False
    goal_in_view: bool = False
    flags: list = field(default_factory=list)

    def snapshots(self) -> list:
        return list(self.objects) + list(self.agents)


def _tokens(text: str) -> set:
    return set(_TOKEN_RE.findall(text.lower()))


def tag_relevance(entry: MemoryEntry, goal_text: str) -> float:
    """Deterministic goal-relevance score for an entry.

    Counts goal-token matches against each snapshot's class label and tags,
    plus 2 per snapshot tagged goal_relevant.
    """
    if not goal_text:
        raise ValueError("goal text must be non-empty")
    goal_tokens = _tokens(goal_text)
    score = 0.0
    for snap in entry.snapshots():
        entity_tokens = _tokens(snap.class_label) | set(snap.tags)
        score += len(goal_tokens & entity_tokens)
        if "goal_relevant" in snap.tags:
            score += 2.0
    return score


class Fmm:
    """Append-only decision log with a fixed-size hybrid retention policy.

    Inserts must be non-decreasing in time. When the log would exceed
    ``recent + relevant`` entries, the newest ``recent`` survive along with
    the ``relevant`` highest-relevance older ones (ties prefer newer
    entries, then later insertion).
    """

    def __init__(self, goal_text: str, scorer=None, recent: int = 10, relevant: int = 10):
        if recent <= 0 or relevant < 0:
            raise ValueError("capacities must be positive")
        self.goal_text = goal_text
        self.scorer = scorer or tag_relevance
        self.recent = recent
        self.relevant = relevant
        self.entries: list[MemoryEntry] = []
        self.warnings: list[str] = []
        self._insert_seq = 0
        self._seq: dict[int, int] = {}  # id(entry) -> insertion index

    @property
    def capacity(self) -> int:
        return self.recent + self.relevant

    def insert(self, entry: MemoryEntry) -> MemoryEntry:
        if self.entries and entry.t < self.entries[-1].t - 1e-9:
            raise ValueError(
                f"out-of-order insert: t={entry.t} precedes last entry t={self.entries[-1].t}"
            )
        if entry.relevance is None:
            entry.relevance = float(self.scorer(entry, self.goal_text))
        self._seq[id(entry)] = self._insert_seq
        self._insert_seq += 1
        self.entries.append(entry)
        if len(self.entries) > self.capacity:
            self._evict()
        return entry

    def _evict(self) -> None:
        newest = self.entries[-self.recent :]
        older = self.entries[: -self.recent]
        # Highest relevance first; ties broken by recency, then insertion order.
        ranked = sorted(
            older,
            key=lambda e: (-e.relevance, -e.t, -self._seq[id(e)]),
        )
        keep = set(id(e) for e in ranked[: self.relevant])
        survivors = [e for e in older if id(e) in keep] + newest
        dropped = [e for e in self.entries if id(e) not in set(id(s) for s in survivors)]
        for e in dropped:
            self._seq.pop(id(e), None)
        self.entries = survivors

    def mark_executed(self, action: ActionReason) -> bool:
        """Set the executed flag on the entry holding ``action``.

        Idempotent; an unknown action is a no-op that records a warning.
        """
        for entry in self.entries:
            if entry.action_reason is not None and entry.action_reason.same_action(action):
                entry.executed = True
                return True
        msg = f"mark_executed: no entry holds action issued at t={action.issued_at}"
        self.warnings.append(msg)
        logger.warning(msg)
        return False

    def last_action(self) -> ActionReason | None:
        for entry in reversed(self.entries):
            if entry.action_reason is not None:
                return entry.action_reason
        return None

    def executed_actions(self) -> list:
        return [e.action_reason for e in self.entries if e.executed and e.action_reason]

    def seen_entity_ids(self, before: MemoryEntry | None = None) -> set:
        """Ids snapshotted in entries, optionally excluding one entry."""
        ids = set()
        for entry in self.entries:
            if before is not None and entry is before:
                continue
            for snap in entry.snapshots():
                ids.add(snap.id)
        return ids

    def attended_entity_ids(self) -> set:
        return {
            e.action_reason.target_entity
            for e in self.entries
            if e.action_reason is not None and e.action_reason.target_entity is not None
        }

    def goal_ever_in_view(self, before: MemoryEntry | None = None) -> bool:
        return any(e.goal_in_view for e in self.entries if before is None or e is not before)

    def habit_action_count(self) -> int:
        return sum(
            1
            for e in self.entries
            if e.action_reason is not None and e.action_reason.driver == Driver.HABIT
        )
