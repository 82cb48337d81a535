import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headsim import ActionReason, Driver, EntitySnapshot, Fmm, MemoryEntry, UnitQuaternion, tag_relevance

from oracles import fmm_policy_bruteforce


def snap(eid="thing", label="thing", tags=()):
    return EntitySnapshot(
        id=eid, class_label=label, tags=tuple(tags), position=(0, 0, 0), range_m=5.0, bearing=0.0
    )


def entry(t, relevance=None, snaps=()):
    return MemoryEntry(t=float(t), objects=list(snaps), relevance=relevance)


def fill(fmm, pairs):
    """Insert entries for (t, relevance) pairs; returns entries in order."""
    out = []
    for t, rel in pairs:
        e = entry(t, relevance=rel)
        fmm.insert(e)
        out.append(e)
    return out


class TestInsertPolicy:
    def test_under_capacity_keeps_all(self):
        fmm = Fmm("reach the goal")
        made = fill(fmm, [(i, float(i)) for i in range(20)])
        assert fmm.entries == made

    def test_21st_insert_evicts_one_low_relevance_old_entry(self):
        fmm = Fmm("reach the goal")
        pairs = [(i, float(i % 5)) for i in range(21)]
        made = fill(fmm, pairs)
        assert len(fmm.entries) == 20
        # the ten newest always survive
        assert fmm.entries[-10:] == made[-10:]
        dropped = [e for e in made if e not in fmm.entries]
        assert len(dropped) == 1
        older = made[:-10]
        min_rel = min(e.relevance for e in older)
        assert dropped[0].relevance == min_rel

    def test_25_inserts_match_bruteforce_policy(self):
        pairs = [(i, float(i % 7)) for i in range(25)]
        fmm = Fmm("reach the goal")
        made = fill(fmm, pairs)
        expected_idx = fmm_policy_bruteforce(pairs)
        assert [made.index(e) for e in fmm.entries] == expected_idx
        # spec-level restatement: last 10 plus top-10 of the first 15
        last10 = set(range(15, 25))
        older = sorted(range(15), key=lambda i: (-(i % 7), -i))
        top10 = set(older[:10])
        assert {made.index(e) for e in fmm.entries} == last10 | top10

    def test_out_of_order_insert_rejected(self):
        fmm = Fmm("reach the goal")
        fmm.insert(entry(5.0, 1.0))
        with pytest.raises(ValueError):
            fmm.insert(entry(4.0, 1.0))

    def test_equal_timestamps_allowed(self):
        fmm = Fmm("reach the goal")
        fmm.insert(entry(5.0, 1.0))
        fmm.insert(entry(5.0, 2.0))
        assert len(fmm.entries) == 2

    @given(
        st.lists(
            st.tuples(st.integers(0, 50), st.integers(0, 9)),
            min_size=1,
            max_size=200,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_random_sequences_policy_invariants(self, raw):
        ts = sorted(t for t, _ in raw)
        pairs = [(float(t), float(r)) for t, (_, r) in zip(ts, raw)]
        fmm = Fmm("reach the goal")
        made = []
        index_of = {}
        for i, (t, rel) in enumerate(pairs):
            e = entry(t, relevance=rel)
            fmm.insert(e)
            made.append(e)
            index_of[id(e)] = i
            # capacity and recency guarantees hold on every prefix
            assert len(fmm.entries) <= 20
            held = {id(x) for x in fmm.entries}
            assert all(id(m) in held for m in made[-10:])
            held_t = [x.t for x in fmm.entries]
            assert held_t == sorted(held_t)
        expected = fmm_policy_bruteforce(pairs)
        assert [index_of[id(e)] for e in fmm.entries] == expected

    def test_deterministic_for_same_sequence(self):
        pairs = [(float(i), float((i * 7) % 11)) for i in range(60)]
        a = Fmm("reach the goal")
        b = Fmm("reach the goal")
        made_a = fill(a, pairs)
        made_b = fill(b, pairs)
        assert [made_a.index(e) for e in a.entries] == [made_b.index(e) for e in b.entries]


class TestRelevance:
    def test_no_overlap_scores_zero(self):
        e = entry(0, snaps=[snap("rock", "rock")])
        assert tag_relevance(e, "find the exit") == 0.0

    def test_goal_relevant_tag_scores_two(self):
        e = entry(0, snaps=[snap("door", "door", tags=("goal_relevant",))])
        assert tag_relevance(e, "find the exit") == 2.0

    def test_token_match(self):
        e = entry(0, snaps=[snap("seat_1", "seat")])
        assert tag_relevance(e, "find empty seat") >= 1.0

    def test_empty_goal_rejected(self):
        with pytest.raises(ValueError):
            tag_relevance(entry(0), "")

    def test_scored_at_insert(self):
        fmm = Fmm("find empty seat")
        e = entry(0, snaps=[snap("seat_1", "seat")])
        fmm.insert(e)
        assert e.relevance >= 1.0


def make_action(t=1.0, driver=Driver.SAFETY, target="crate"):
    return ActionReason(driver=driver, rationale="test", issued_at=t, target_entity=target)


class TestMarkExecuted:
    def test_marks_matching_entry(self):
        fmm = Fmm("goal")
        action = make_action()
        e = entry(0.5)
        e.action_reason = action
        fmm.insert(e)
        assert fmm.mark_executed(action)
        assert e.executed

    def test_idempotent(self):
        fmm = Fmm("goal")
        action = make_action()
        e = entry(0.5)
        e.action_reason = action
        fmm.insert(e)
        fmm.mark_executed(action)
        fmm.mark_executed(action)
        assert e.executed

    def test_unknown_action_warns(self, caplog):
        fmm = Fmm("goal")
        fmm.insert(entry(0.5))
        with caplog.at_level(logging.WARNING):
            assert not fmm.mark_executed(make_action())
        assert fmm.warnings
        assert not fmm.entries[0].executed

    def test_replacement_path(self):
        # a substituted action leaves the original unexecuted and the
        # appended substitute executed
        fmm = Fmm("goal")
        original = make_action(t=1.0, driver=Driver.HABIT, target=None)
        original.target_entity = None
        original = ActionReason(
            driver=Driver.HABIT,
            rationale="sweep",
            issued_at=1.0,
            target_orientation=UnitQuaternion.identity(),
        )
        e1 = entry(0.5)
        e1.action_reason = original
        fmm.insert(e1)
        substitute = make_action(t=2.0, driver=Driver.SAFETY)
        e2 = entry(2.0)
        e2.action_reason = substitute
        fmm.insert(e2)
        fmm.mark_executed(substitute)
        assert not e1.executed
        assert e2.executed


class TestActionReason:
    def test_requires_exactly_one_target(self):
        with pytest.raises(ValueError):
            ActionReason(driver=Driver.SAFETY, rationale="x", issued_at=0.0)
        with pytest.raises(ValueError):
            ActionReason(
                driver=Driver.SAFETY,
                rationale="x",
                issued_at=0.0,
                target_entity="a",
                target_orientation=UnitQuaternion.identity(),
            )

    def test_driver_coerced_from_string(self):
        a = ActionReason(driver="Safety", rationale="x", issued_at=0.0, target_entity="a")
        assert a.driver is Driver.SAFETY
