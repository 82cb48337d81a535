"""Fixed-cadence view capture with structural-similarity novelty gating.

A view only reaches planning when it differs structurally from the last
view that did; similarity is measured with SSIM over 8x8 sliding windows
and the gate fires below a configurable threshold on a 0..100 scale.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geom import UnitQuaternion
from .world import Pose, SceneView

#: Intensity range of semantic rasters (label intensities live in [0, 255]).
RASTER_RANGE = 255.0

WINDOW = 8


def _window_sums(x: np.ndarray, w: int) -> np.ndarray:
    """Sums over all w x w windows (stride 1), via an integral image."""
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    s[1:, 1:] = np.cumsum(np.cumsum(x, axis=0), axis=1)
    return s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w]


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = RASTER_RANGE) -> float:
    """Mean structural similarity between two equal-size grayscale grids.

    Uniform 8x8 windows with stride 1; stabilizers C1=(0.01*L)^2 and
    C2=(0.03*L)^2 where L is the intensity range, so constant (even
    all-zero) image pairs compare as 1. Result lies in [-1, 1] and is
    symmetric in its arguments.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"raster dimensions differ: {a.shape} vs {b.shape}")
    if a.shape[0] < WINDOW or a.shape[1] < WINDOW:
        raise ValueError(f"rasters must be at least {WINDOW}x{WINDOW}")
    n = WINDOW * WINDOW
    mu_a = _window_sums(a, WINDOW) / n
    mu_b = _window_sums(b, WINDOW) / n
    e_aa = _window_sums(a * a, WINDOW) / n
    e_bb = _window_sums(b * b, WINDOW) / n
    e_ab = _window_sums(a * b, WINDOW) / n
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


@dataclass(frozen=True, eq=False)
class NoveltyState:
    """Gate state: the reference raster plus the pause/resume bookkeeping."""

    last_novel_raster: np.ndarray | None = None
    paused: bool = False
    resume_time: float | None = None


@dataclass(eq=False)
class Observation:
    """One novel view: raster, visible entities, and the poses that made it."""

    t: float
    raster: np.ndarray
    sightings: list
    head_pose: UnitQuaternion
    body_pose: Pose
    goal_in_view: bool = False


def novelty_gate(
    state: NoveltyState, current: np.ndarray, threshold: float = 60.0
) -> tuple[bool, NoveltyState]:
    """Flag ``current`` as novel iff there is no reference yet or
    ssim*100 falls below ``threshold``. Novel frames become the new
    reference; non-novel frames leave the state untouched.
    """
    if state.last_novel_raster is None:
        return True, replace(state, last_novel_raster=current)
    score = ssim(state.last_novel_raster, current) * 100.0
    if score < threshold:
        return True, replace(state, last_novel_raster=current)
    return False, state


def pause(state: NoveltyState) -> NoveltyState:
    return replace(state, paused=True, resume_time=None)


def schedule_resume(state: NoveltyState, resume_time: float) -> NoveltyState:
    return replace(state, paused=True, resume_time=resume_time)


def capture(
    state: NoveltyState,
    clock: float,
    view: SceneView,
    head: UnitQuaternion,
    threshold: float = 60.0,
) -> tuple[Observation | None, NoveltyState]:
    """Run one capture tick.

    Emits nothing while paused; resumes at the first tick at or past the
    scheduled resume time; otherwise renders the current view, applies the
    novelty gate, and emits an Observation only when the gate fires.
    """
    if state.paused:
        if state.resume_time is None or clock < state.resume_time - 1e-9:
            return None, state
        state = replace(state, paused=False, resume_time=None)
    body = view.body_pose(clock)
    raster = view.raster(clock, head)
    novel, state = novelty_gate(state, raster, threshold)
    if not novel:
        return None, state
    obs = Observation(
        t=clock,
        raster=raster,
        sightings=view.sightings(clock, head),
        head_pose=head,
        body_pose=body,
        goal_in_view=view.goal_in_view(clock, head),
    )
    return obs, state
