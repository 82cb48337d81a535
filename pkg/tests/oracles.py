"""Independent reference implementations used to pin expected test values.

Everything here is deliberately naive (enumeration, direct formulas,
scalar loops) and shares no code with the library paths it checks.
"""
from __future__ import annotations

import math
import random


def quat_angle(a, b) -> float:
    """Rotation angle between two unit quaternions, sign-invariant."""
    dot = abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3])
    return 2.0 * math.acos(min(1.0, dot))


def dtw_bruteforce(seq_a, seq_b) -> float:
    """Minimum accumulated angular cost over all monotone alignment paths.

    Recursively enumerates every path using steps {(1,0),(0,1),(1,1)};
    exponential, intended for sequences of length <= 6. Returns the cost
    normalized by the mean sequence length.
    """
    n, m = len(seq_a), len(seq_b)
    cost = [[quat_angle(a, b) for b in seq_b] for a in seq_a]

    def best_from(i: int, j: int) -> float:
        if i == n - 1 and j == m - 1:
            return 0.0
        candidates = []
        if i + 1 < n:
            candidates.append(cost[i + 1][j] + best_from(i + 1, j))
        if j + 1 < m:
            candidates.append(cost[i][j + 1] + best_from(i, j + 1))
        if i + 1 < n and j + 1 < m:
            candidates.append(cost[i + 1][j + 1] + best_from(i + 1, j + 1))
        return min(candidates)

    total = cost[0][0] + best_from(0, 0)
    return total / ((n + m) / 2.0)


def ssim_naive(a, b, data_range: float = 255.0, window: int = 8) -> float:
    """Direct per-window SSIM with uniform 8x8 windows, stride 1."""
    h = len(a)
    w = len(a[0])
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    scores = []
    n = window * window
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            xs = [a[i + di][j + dj] for di in range(window) for dj in range(window)]
            ys = [b[i + di][j + dj] for di in range(window) for dj in range(window)]
            mx = sum(xs) / n
            my = sum(ys) / n
            vx = sum(v * v for v in xs) / n - mx * mx
            vy = sum(v * v for v in ys) / n - my * my
            cov = sum(x * y for x, y in zip(xs, ys)) / n - mx * my
            scores.append(
                ((2 * mx * my + c1) * (2 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return sum(scores) / len(scores)


def fmm_policy_bruteforce(log, recent: int = 10, relevant: int = 10):
    """Re-evaluate the retention policy over a full insert log.

    ``log`` is a list of (t, relevance) in insertion order. Returns the
    list of retained insertion indices, in order, after inserting the whole
    log one element at a time.
    """
    kept = []
    for idx, (t, rel) in enumerate(log):
        kept.append(idx)
        if len(kept) <= recent + relevant:
            continue
        newest = kept[-recent:]
        older = kept[:-recent]
        ranked = sorted(
            older, key=lambda i: (-log[i][1], -log[i][0], -i)
        )
        keep = set(ranked[:relevant])
        kept = [i for i in older if i in keep] + newest
    return kept


def ray_hits_box(origin, direction, center, half) -> float | None:
    """Scalar slab test: distance to entry, or None on a miss."""
    t_near = -math.inf
    t_far = math.inf
    for k in range(3):
        o, d = origin[k], direction[k]
        lo = center[k] - half[k]
        hi = center[k] + half[k]
        if d == 0.0:
            if not lo <= o <= hi:
                return None
            continue
        t1 = (lo - o) / d
        t2 = (hi - o) / d
        if t1 > t2:
            t1, t2 = t2, t1
        t_near = max(t_near, t1)
        t_far = min(t_far, t2)
    if t_far < max(t_near, 0.0):
        return None
    return t_near


def clamped_normal_stats(mean, sd, lo, hi, n=100_000, seed=123):
    """Monte Carlo mean/sd of a clamped normal, via the stdlib generator."""
    rng = random.Random(seed)
    draws = [min(max(rng.gauss(mean, sd), lo), hi) for _ in range(n)]
    m = sum(draws) / n
    var = sum((d - m) ** 2 for d in draws) / (n - 1)
    return m, math.sqrt(var)
