import math

import numpy as np
import pytest

from headsim import (
    BodyTrajectory,
    Entity,
    FovParams,
    Goal,
    NoveltyState,
    Scene,
    SceneView,
    UnitQuaternion,
    capture,
    novelty_gate,
    ssim,
)
from headsim.perception import pause, schedule_resume

from oracles import ssim_naive

IDENT = UnitQuaternion.identity()


def checkerboard(n=16, lo=0.0, hi=255.0):
    grid = np.indices((n, n)).sum(axis=0) % 2
    return np.where(grid == 0, lo, hi).astype(float)


class TestSsim:
    def test_identity(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 255, (16, 16))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_all_zeros(self):
        z = np.zeros((16, 16))
        assert ssim(z, z) == pytest.approx(1.0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))

    def test_matches_naive_windows(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a = rng.uniform(0, 255, (12, 14))
            b = rng.uniform(0, 255, (12, 14))
            assert ssim(a, b) == pytest.approx(ssim_naive(a.tolist(), b.tolist()), abs=1e-9)

    def test_inverted_checkerboard_below_threshold(self):
        a = checkerboard()
        b = 255.0 - a
        expected = ssim_naive(a.tolist(), b.tolist())
        got = ssim(a, b)
        assert got == pytest.approx(expected, abs=1e-9)
        assert got < 0.6

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            a = rng.uniform(0, 255, (16, 16))
            b = rng.uniform(0, 255, (16, 16))
            assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_range(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.uniform(0, 255, (16, 16))
            b = rng.uniform(0, 255, (16, 16))
            assert -1.0 - 1e-9 <= ssim(a, b) <= 1.0 + 1e-9


def straddle_pair():
    """A raster pair family crossing the similarity threshold.

    Progressively inverts columns of a checkerboard until the score drops
    below 0.60; returns (base, just_above, just_below) measured rasters.
    """
    base = checkerboard(24)
    prev = None
    for cols in range(1, 25):
        cand = base.copy()
        cand[:, :cols] = 255.0 - cand[:, :cols]
        score = ssim(base, cand)
        if score < 0.60:
            assert prev is not None, "first step already below threshold"
            return base, prev, cand
        prev = cand
    raise AssertionError("never crossed the threshold")


class TestNoveltyGate:
    def test_first_frame_novel(self):
        state = NoveltyState()
        novel, state2 = novelty_gate(state, np.zeros((16, 16)))
        assert novel
        assert state2.last_novel_raster is not None

    def test_identical_frame_not_novel(self):
        r = checkerboard()
        _, state = novelty_gate(NoveltyState(), r)
        novel, state2 = novelty_gate(state, r.copy())
        assert not novel
        assert state2.last_novel_raster is state.last_novel_raster

    def test_threshold_straddle(self):
        base, above, below = straddle_pair()
        assert ssim(base, above) * 100 >= 60.0
        assert ssim(base, below) * 100 < 60.0
        _, state = novelty_gate(NoveltyState(), base)
        novel_above, state_a = novelty_gate(state, above)
        assert not novel_above
        novel_below, state_b = novelty_gate(state, below)
        assert novel_below

    def test_gate_idempotent_when_not_novel(self):
        r = checkerboard()
        _, state = novelty_gate(NoveltyState(), r)
        near = r.copy()
        near[0, 0] = 128.0
        novel, state2 = novelty_gate(state, near)
        assert not novel
        assert state2.last_novel_raster is state.last_novel_raster


def single_entity_view():
    scene = Scene(
        entities=[
            Entity(
                id="crate",
                class_label="crate",
                position=[6, 0, 0],
                extents=[1.0, 1.0, 1.0],
            )
        ],
        agents=[],
        goal=Goal("walk ahead", [30, 0, 0]),
    )
    traj = BodyTrajectory([(0.0, [0, 0, 0], IDENT), (60.0, [0, 0, 0], IDENT)])
    return SceneView(scene, traj, FovParams())


class TestCapture:
    def test_first_capture_emits(self):
        view = single_entity_view()
        obs, state = capture(NoveltyState(), 0.0, view, IDENT)
        assert obs is not None
        assert obs.t == 0.0
        assert [s.entity.id for s in obs.sightings] == ["crate"]
        assert obs.goal_in_view

    def test_paused_emits_nothing(self):
        view = single_entity_view()
        _, state = capture(NoveltyState(), 0.0, view, IDENT)
        state = pause(state)
        obs, state = capture(state, 0.2, view, IDENT)
        assert obs is None
        assert state.paused

    def test_resume_halfway_through_hold(self):
        # a 1.6 s hold starting at t0 allows capture from t0 + 0.8 s
        view = single_entity_view()
        _, state = capture(NoveltyState(), 0.0, view, IDENT)
        state = pause(state)
        t0 = 1.0
        state = schedule_resume(state, t0 + 1.6 / 2)
        ticks = [round(t0 + k * 0.2, 10) for k in range(0, 8)]
        resumed_at = None
        for t in ticks:
            obs, state = capture(state, t, view, IDENT)
            if not state.paused and resumed_at is None:
                resumed_at = t
        assert resumed_at == pytest.approx(1.8)

    def test_static_scene_emits_once(self):
        view = single_entity_view()
        state = NoveltyState()
        emitted = []
        for k in range(50):
            obs, state = capture(state, k * 0.2, view, IDENT)
            if obs is not None:
                emitted.append(obs.t)
        assert emitted == [0.0]

    def test_emitted_timestamps_on_tick_grid(self):
        view = single_entity_view()
        state = NoveltyState()
        for k in range(20):
            obs, state = capture(state, k * 0.2, view, IDENT)
            if obs is not None:
                assert (obs.t / 0.2) == pytest.approx(round(obs.t / 0.2), abs=1e-6)
