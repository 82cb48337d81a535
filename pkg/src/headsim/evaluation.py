"""Quantitative harness: quaternion DTW, split-half baseline, CIs, and the
responsiveness / ablation benchmark runners."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .config import SimConfig
from .engine import ExecutedTrace, derive_seed, run_dps, run_res, simulate
from .geom import UnitQuaternion
from .memory import Driver
from .world import BodyTrajectory, Scene


@dataclass
class HeadTrace:
    """A uniformly sampled orientation series: the unit of comparison."""

    samples: list
    agent_id: str = "ego"
    scenario: str = ""
    condition: str = ""
    tick: float = 0.2

    def __post_init__(self) -> None:
        if len(self.samples) < 2:
            raise ValueError("a head trace needs at least 2 samples")

    def __len__(self) -> int:
        return len(self.samples)

    @staticmethod
    def from_executed(trace: ExecutedTrace) -> "HeadTrace":
        return HeadTrace(
            samples=list(trace.samples),
            agent_id=trace.agent_id,
            scenario=trace.scenario,
            condition=trace.condition,
            tick=trace.tick,
        )

    def as_array(self) -> np.ndarray:
        return np.array([[q.w, q.x, q.y, q.z] for q in self.samples])


@dataclass
class DtwResult:
    normalized_cost: float
    accumulated_cost: float
    path: list  # [(i, j), ...] from (0,0) to (n-1, m-1)


def _samples_of(trace) -> np.ndarray:
    if isinstance(trace, np.ndarray):
        return trace
    if hasattr(trace, "as_array"):
        return trace.as_array()
    if hasattr(trace, "samples"):
        return np.array([[q.w, q.x, q.y, q.z] for q in trace.samples])
    return np.array([[q.w, q.x, q.y, q.z] for q in trace])


def pairwise_angular_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of rotation angles (sign-invariant) between two sample sets."""
    dots = np.abs(a @ b.T)
    return 2.0 * np.arccos(np.clip(dots, 0.0, 1.0))


def dtw(a, b) -> DtwResult:
    """Dynamic time warping with the angular metric as local cost.

    Step set {(1,0), (0,1), (1,1)}, no band constraint; the accumulated
    cost is normalized by the mean of the two sequence lengths.
    """
    sa = _samples_of(a)
    sb = _samples_of(b)
    n, m = len(sa), len(sb)
    if n == 0 or m == 0:
        raise ValueError("dtw requires non-empty traces")
    cost = pairwise_angular_cost(sa, sb)
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        row = acc[i]
        prev = acc[i - 1]
        crow = cost[i]
        row[0] = prev[0] + crow[0]
        for j in range(1, m):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = best + crow[j]
    # Backtrack a minimizing alignment path.
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            options = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
            _, i, j = min(options, key=lambda o: o[0])
        path.append((i, j))
    path.reverse()
    return DtwResult(
        normalized_cost=float(acc[n - 1, m - 1] / ((n + m) / 2.0)),
        accumulated_cost=float(acc[n - 1, m - 1]),
        path=path,
    )


def confidence_interval_95(values) -> tuple:
    """(mean, half-width) of the t-distribution 95% interval, n-1 dof."""
    values = np.asarray(list(values), dtype=float)
    n = len(values)
    if n < 2:
        raise ValueError("confidence interval needs at least 2 values")
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    half = float(stats.t.ppf(0.975, n - 1) * sd / math.sqrt(n))
    return mean, half


def intra_human(groups: dict, repeats: int = 10, rng=None) -> dict:
    """Split-half agreement per scenario group.

    Each repeat shuffles a group, splits it into two equal halves (dropping
    one trace at random when the group is odd, flagged), and averages DTW
    over all cross-half pairs; the result aggregates the repeat means.
    Returns {scenario: {"mean", "ci95", "n", "flags"}}.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    out = {}
    for scenario in sorted(groups):
        traces = list(groups[scenario])
        if len(traces) < 2:
            raise ValueError(f"group {scenario!r} needs at least 2 traces")
        flags = []
        repeat_means = []
        for r in range(repeats):
            pool = list(traces)
            if len(pool) % 2 == 1:
                drop = int(rng.integers(0, len(pool)))
                pool.pop(drop)
                flags.append(f"repeat {r}: dropped one trace (odd group size)")
            order = rng.permutation(len(pool))
            half = len(pool) // 2
            first = [pool[i] for i in order[:half]]
            second = [pool[i] for i in order[half:]]
            costs = [dtw(x, y).normalized_cost for x in first for y in second]
            repeat_means.append(float(np.mean(costs)))
        if repeats >= 2:
            mean, half_width = confidence_interval_95(repeat_means)
        else:
            mean, half_width = repeat_means[0], 0.0
        out[scenario] = {"mean": mean, "ci95": half_width, "n": repeats, "flags": flags}
    return out


def score_against_references(trace, references) -> float:
    """Mean normalized DTW of one trace against a reference trace set."""
    if not references:
        raise ValueError("need at least one reference trace")
    return float(np.mean([dtw(trace, ref).normalized_cost for ref in references]))


@dataclass
class BenchmarkRow:
    scenario: str
    method: str
    condition: str
    mean: float
    ci95: float
    n: int
    seeds: list = field(default_factory=list)


def _check_matched_layout(mdc: Scene, apc: Scene) -> None:
    if mdc.condition != "MDC" or apc.condition != "APC":
        raise ValueError("expected an (MDC, APC) scene pair")
    if not np.allclose(mdc.goal.position, apc.goal.position):
        raise ValueError("scene pair mismatch: goal positions differ")
    mdc_ids = {e.id for e in mdc.all_entities()}
    apc_ids = {e.id for e in apc.all_entities()}
    if not mdc_ids <= apc_ids:
        raise ValueError(
            "scene pair mismatch: MDC entities missing from APC: "
            f"{sorted(mdc_ids - apc_ids)}"
        )


def responsiveness_matrix(
    mdc_scene: Scene,
    apc_scene: Scene,
    traj: BodyTrajectory,
    backend,
    config: SimConfig,
    seeds,
    scenario: str = "",
    references: list | None = None,
) -> list:
    """Three-condition benchmark: plan/execute on (MDC,MDC), (MDC,APC), (APC,APC).

    Every run is scored against the reference traces (by default the
    APC-APC outputs across the same seeds). Returns one BenchmarkRow per
    condition.
    """
    _check_matched_layout(mdc_scene, apc_scene)
    seeds = list(seeds)
    runs: dict = {"MDC-MDC": [], "MDC-APC": [], "APC-APC": []}
    for seed in seeds:
        plan_mdc = run_dps(mdc_scene, traj, backend, config, seed=seed, scenario=scenario)
        plan_apc = run_dps(apc_scene, traj, backend, config, seed=seed, scenario=scenario)
        runs["MDC-MDC"].append(run_res(mdc_scene, traj, plan_mdc, backend, config, seed=seed))
        runs["MDC-APC"].append(run_res(apc_scene, traj, plan_mdc, backend, config, seed=seed))
        runs["APC-APC"].append(run_res(apc_scene, traj, plan_apc, backend, config, seed=seed))
    refs = references if references is not None else runs["APC-APC"]
    rows = []
    for condition in ("MDC-MDC", "MDC-APC", "APC-APC"):
        scores = [score_against_references(tr, refs) for tr in runs[condition]]
        if len(scores) >= 2:
            mean, half = confidence_interval_95(scores)
        else:
            mean, half = scores[0], 0.0
        rows.append(
            BenchmarkRow(
                scenario=scenario,
                method="pipeline",
                condition=condition,
                mean=mean,
                ci95=half,
                n=len(scores),
                seeds=seeds,
            )
        )
    return rows


ABLATION_TOGGLES = {
    "full": lambda c: c,
    "w/o all Motivational Drivers": lambda c: c.replace(drivers=c.drivers.none()),
    "w/o Interest driver": lambda c: c.replace(drivers=c.drivers.without(Driver.INTEREST)),
    "w/o Information-seeking driver": lambda c: c.replace(
        drivers=c.drivers.without(Driver.INFORMATION_SEEKING)
    ),
    "w/o Safety driver": lambda c: c.replace(drivers=c.drivers.without(Driver.SAFETY)),
    "w/o Social Schema driver": lambda c: c.replace(
        drivers=c.drivers.without(Driver.SOCIAL_SCHEMA)
    ),
    "w/o Habit driver": lambda c: c.replace(drivers=c.drivers.without(Driver.HABIT)),
    "w/o LLM": lambda c: c.replace(use_llm=False),
    "w/o RES": lambda c: c.replace(use_res=False),
}


def apply_toggle(config: SimConfig, toggle: str) -> SimConfig:
    if toggle not in ABLATION_TOGGLES:
        raise ValueError(f"unknown ablation toggle {toggle!r}")
    return ABLATION_TOGGLES[toggle](config)


def ablation_suite(
    scene: Scene,
    traj: BodyTrajectory,
    backend,
    config: SimConfig,
    seeds,
    toggles=None,
    scenario: str = "",
    references: list | None = None,
) -> list:
    """One row per toggle: normalized DTW against the full-model references.

    References default to the full configuration's own outputs over the
    same seeds.
    """
    seeds = list(seeds)
    toggles = list(toggles) if toggles is not None else list(ABLATION_TOGGLES)
    if references is None:
        references = [
            simulate(scene, traj, backend, config, seed=s, scenario=scenario)[1] for s in seeds
        ]
    rows = []
    for toggle in toggles:
        cfg = apply_toggle(config, toggle)
        scores = []
        for seed in seeds:
            _, trace = simulate(scene, traj, backend, cfg, seed=seed, scenario=scenario)
            scores.append(score_against_references(trace, references))
        if len(scores) >= 2:
            mean, half = confidence_interval_95(scores)
        else:
            mean, half = scores[0], 0.0
        rows.append(
            BenchmarkRow(
                scenario=scenario,
                method=toggle,
                condition=scene.condition,
                mean=mean,
                ci95=half,
                n=len(scores),
                seeds=seeds,
            )
        )
    return rows


def rows_to_table(rows) -> str:
    """Delimiter-separated table (CSV) for benchmark rows."""
    lines = ["scenario,method,condition,mean,ci95,n,seeds"]
    for r in rows:
        seeds = ";".join(str(s) for s in r.seeds)
        lines.append(
            f"{r.scenario},{r.method},{r.condition},{r.mean:.6f},{r.ci95:.6f},{r.n},{seeds}"
        )
    return "\n".join(lines) + "\n"


def plot_rows(rows, path: str) -> None:
    """Optional bar chart of a benchmark table (vector output)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [f"{r.method}\n{r.condition}" for r in rows]
    means = [r.mean for r in rows]
    errs = [r.ci95 for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.1 * len(rows)), 3.5))
    ax.bar(range(len(rows)), means, yerr=errs, capsize=3)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7, rotation=30, ha="right")
    ax.set_ylabel("normalized DTW")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
