"""Scene model, body-trajectory replay, visibility, and view rendering.

Coordinate conventions: z is up, yaw 0 faces +x, positive yaw turns toward
+y. Positions are eye-height points; entities are axis-aligned boxes given
by a center and half-sizes.
"""
from __future__ import annotations

import hashlib
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .geom import UnitQuaternion, slerp

VALID_TAGS = frozenset({"hazard", "social", "novel", "goal_relevant", "static_background"})


@dataclass
class Entity:
    """A tagged world object or pedestrian.

    Motion is either a constant velocity from ``position`` or a piecewise
    linear path through timestamped ``waypoints`` (which take precedence).
    """

    id: str
    class_label: str
    position: np.ndarray
    extents: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.5]))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tags: frozenset = frozenset()
    waypoints: list | None = None  # [(t, position), ...] strictly increasing in t
    description_hint: str = ""

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float)
        self.extents = np.asarray(self.extents, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.tags = frozenset(self.tags)
        unknown = self.tags - VALID_TAGS
        if unknown:
            raise ValueError(f"entity {self.id!r} has unknown tags: {sorted(unknown)}")
        if np.any(self.extents < 0):
            raise ValueError(f"entity {self.id!r} has negative extents")
        if self.waypoints is not None:
            self.waypoints = [(float(t), np.asarray(p, dtype=float)) for t, p in self.waypoints]
            ts = [t for t, _ in self.waypoints]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError(f"entity {self.id!r} waypoint times must strictly increase")

    def position_at(self, t: float) -> np.ndarray:
        if not self.waypoints:
            return self.position + self.velocity * t
        pts = self.waypoints
        if t <= pts[0][0]:
            return pts[0][1]
        if t >= pts[-1][0]:
            return pts[-1][1]
        i = bisect_right([w[0] for w in pts], t) - 1
        t0, p0 = pts[i]
        t1, p1 = pts[i + 1]
        f = (t - t0) / (t1 - t0)
        return p0 + f * (p1 - p0)

    def velocity_at(self, t: float) -> np.ndarray:
        if not self.waypoints:
            return self.velocity
        pts = self.waypoints
        if t < pts[0][0] or t >= pts[-1][0]:
            return np.zeros(3)
        i = bisect_right([w[0] for w in pts], t) - 1
        t0, p0 = pts[i]
        t1, p1 = pts[i + 1]
        return (p1 - p0) / (t1 - t0)


@dataclass
class Goal:
    text: str
    position: np.ndarray

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float)
        if not np.all(np.isfinite(self.position)):
            raise ValueError("goal position must be finite")
        if not self.text:
            raise ValueError("goal text must be non-empty")


@dataclass
class Scene:
    """Immutable-after-load scene: static/dynamic objects plus pedestrians."""

    entities: list
    agents: list
    goal: Goal
    condition: str = "MDC"

    def __post_init__(self) -> None:
        if self.condition not in ("MDC", "APC"):
            raise ValueError(f"condition must be MDC or APC, got {self.condition!r}")
        ids = [e.id for e in self.entities] + [a.id for a in self.agents]
        if len(ids) != len(set(ids)):
            raise ValueError("entity ids must be unique within a scene")
        self._agent_ids = frozenset(a.id for a in self.agents)

    def all_entities(self) -> list:
        return list(self.entities) + list(self.agents)

    def is_agent(self, entity_id: str) -> bool:
        return entity_id in self._agent_ids

    def find(self, entity_id: str) -> Entity | None:
        for e in self.all_entities():
            if e.id == entity_id:
                return e
        return None

    def with_extra_agents(self, extra: list) -> "Scene":
        return Scene(
            entities=list(self.entities),
            agents=list(self.agents) + list(extra),
            goal=self.goal,
            condition=self.condition,
        )


@dataclass(frozen=True)
class Pose:
    """Position plus body heading at a trajectory time."""

    t: float
    position: np.ndarray
    heading: UnitQuaternion


class BodyTrajectory:
    """Time-ordered (t, position, heading) samples; queries interpolate."""

    def __init__(self, samples: list):
        if not samples:
            raise ValueError("trajectory needs at least one sample")
        ts = [s[0] for s in samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory timestamps must strictly increase")
        self.samples = [(float(t), np.asarray(p, dtype=float), q) for t, p, q in samples]
        self._ts = [s[0] for s in self.samples]

    @property
    def t_start(self) -> float:
        return self._ts[0]

    @property
    def t_end(self) -> float:
        return self._ts[-1]

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @staticmethod
    def straight(start, end, speed: float = 1.3, sample_spacing: float = 2.0) -> "BodyTrajectory":
        """Constant-speed straight walk from start to end."""
        p0 = np.asarray(start, dtype=float)
        p1 = np.asarray(end, dtype=float)
        length = float(np.linalg.norm(p1 - p0))
        duration = length / speed
        heading = UnitQuaternion.looking_at(p1 - p0)
        n = max(1, int(math.ceil(duration / sample_spacing)))
        samples = []
        for i in range(n + 1):
            t = min(duration, i * sample_spacing)
            f = t / duration if duration > 0 else 0.0
            samples.append((t, p0 + f * (p1 - p0), heading))
        return BodyTrajectory(samples)


def pose_at(traj: BodyTrajectory, t: float) -> Pose:
    """Interpolated pose: position linearly, heading by shortest arc."""
    if t < traj.t_start - 1e-9 or t > traj.t_end + 1e-9:
        raise ValueError(f"t={t} outside trajectory range [{traj.t_start}, {traj.t_end}]")
    t = min(max(t, traj.t_start), traj.t_end)
    ts = traj._ts
    if t >= ts[-1]:
        _, p, q = traj.samples[-1]
        return Pose(t, p.copy(), q)
    i = max(0, bisect_right(ts, t) - 1)
    t0, p0, q0 = traj.samples[i]
    t1, p1, q1 = traj.samples[i + 1]
    f = (t - t0) / (t1 - t0)
    return Pose(t, p0 + f * (p1 - p0), slerp(q0, q1, f))


@dataclass(frozen=True)
class FovParams:
    """View frustum and raster size used for visibility and rendering."""

    horizontal_fov_deg: float = 100.0
    vertical_fov_deg: float = 80.0
    max_range: float = 40.0
    raster_width: int = 64
    raster_height: int = 64

    def __post_init__(self) -> None:
        for v in (self.horizontal_fov_deg, self.vertical_fov_deg):
            if not 0.0 < v < 180.0:
                raise ValueError("fov angles must lie in (0, 180) degrees")
        if self.raster_width < 16 or self.raster_height < 16:
            raise ValueError("raster resolution must be at least 16x16")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


@dataclass
class Sighting:
    """One visible entity with its signed horizontal bearing and range."""

    entity: Entity
    bearing: float  # radians, positive = left of the view axis
    elevation: float  # radians, positive = above the view axis
    range_m: float
    position: np.ndarray  # world position used for the test (may be extrapolated)
    velocity: np.ndarray
    is_agent: bool = False
    description: str = ""


def label_intensity(class_label: str) -> float:
    """Stable raster intensity for a class label; background stays 0."""
    digest = hashlib.sha256(class_label.encode("utf-8")).digest()
    return float(32 + int.from_bytes(digest[:4], "big") % 224)


@lru_cache(maxsize=8)
def _local_ray_grid(fov: FovParams) -> np.ndarray:
    """Unit ray directions through raster cell centers, in the head frame."""
    h = math.radians(fov.horizontal_fov_deg)
    v = math.radians(fov.vertical_fov_deg)
    # Columns sweep left (+bearing) to right; rows sweep top (+elevation) down.
    az = h / 2 - (np.arange(fov.raster_width) + 0.5) * h / fov.raster_width
    el = v / 2 - (np.arange(fov.raster_height) + 0.5) * v / fov.raster_height
    azg, elg = np.meshgrid(az, el)
    dirs = np.stack(
        [np.cos(elg) * np.cos(azg), np.cos(elg) * np.sin(azg), np.sin(elg)],
        axis=-1,
    )
    return dirs.reshape(-1, 3)


def _ray_box_entry(origin: np.ndarray, dirs: np.ndarray, centers: np.ndarray, halves: np.ndarray):
    """Slab-method entry/exit distances for rays against axis-aligned boxes.

    dirs: (N, 3); centers/halves: (E, 3). Returns (t_near, t_far) of shape
    (N, E); misses have t_near > t_far.
    """
    rel_lo = centers - halves - origin
    rel_hi = centers + halves - origin
    zero = dirs == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs  # inf where a component is 0 is fine for slabs
        lo = rel_lo[None, :, :] * inv[:, None, :]
        hi = rel_hi[None, :, :] * inv[:, None, :]
        t1 = np.minimum(lo, hi)
        t2 = np.maximum(lo, hi)
        if zero.any():
            # A zero direction component misses unless the origin lies inside the slab.
            inside = np.abs(origin[None, None, :] - centers[None, :, :]) <= halves[None, :, :]
            zmask = zero[:, None, :]
            t1 = np.where(zmask & inside, -np.inf, t1)
            t2 = np.where(zmask & inside, np.inf, t2)
            t1 = np.where(zmask & ~inside, np.inf, t1)
            t2 = np.where(zmask & ~inside, -np.inf, t2)
            return np.nanmax(t1, axis=2), np.nanmin(t2, axis=2)
    return t1.max(axis=2), t2.min(axis=2)


def _bearing_elevation(head: UnitQuaternion, offsets: np.ndarray):
    """Signed azimuth/elevation of world-space offsets in the head frame."""
    local = offsets @ head.rotation_matrix()  # R^T applied row-wise
    rng = np.linalg.norm(local, axis=1)
    with np.errstate(invalid="ignore"):
        bearing = np.arctan2(local[:, 1], local[:, 0])
        elevation = np.arcsin(np.clip(local[:, 2] / np.where(rng == 0, 1.0, rng), -1.0, 1.0))
    return bearing, elevation, rng


def _sorted_snapshot(scene: Scene, t: float, horizon: float = 0.0):
    """Entities sorted by id with positions (optionally extrapolated)."""
    ents = sorted(scene.all_entities(), key=lambda e: e.id)
    if horizon:
        pos = np.array([e.position_at(t) + e.velocity_at(t) * horizon for e in ents])
    else:
        pos = np.array([e.position_at(t) for e in ents])
    return ents, pos


def visible_entities(
    scene: Scene,
    position,
    head: UnitQuaternion,
    fov: FovParams,
    t: float,
    motion_horizon: float = 0.0,
) -> list:
    """Entities whose center lies in the view cone, in range, and unoccluded.

    Occlusion is tested along each entity's center ray against every
    strictly closer entity's bounding box. Results sort by range; the
    outcome is invariant under permutation of the scene entity lists.
    ``motion_horizon`` > 0 extrapolates entity motion linearly by that many
    seconds before testing (used for look-ahead prediction).
    """
    ents, centers = _sorted_snapshot(scene, t, motion_horizon)
    if not ents:
        return []
    eye = np.asarray(position, dtype=float)
    offsets = centers - eye[None, :]
    bearing, elevation, rng = _bearing_elevation(head, offsets)
    half_h = math.radians(fov.horizontal_fov_deg) / 2
    half_v = math.radians(fov.vertical_fov_deg) / 2
    in_cone = (
        (np.abs(bearing) <= half_h)
        & (np.abs(elevation) <= half_v)
        & (rng <= fov.max_range)
        & (rng > 1e-9)
    )
    candidates = np.where(in_cone)[0]
    if candidates.size == 0:
        return []

    dirs = offsets[candidates] / rng[candidates, None]
    halves = np.array([e.extents for e in ents])
    t_near, t_far = _ray_box_entry(eye, dirs, centers, halves)
    # Occluder must be a different, strictly closer entity hit before the target.
    n_rays = candidates.size
    hit = (t_far >= np.maximum(t_near, 0.0)) & (t_near > 1e-9) & (t_near < rng[candidates, None] - 1e-9)
    closer = rng[None, :] < rng[candidates, None] - 1e-12
    same = np.zeros_like(hit, dtype=bool)
    same[np.arange(n_rays), candidates] = True
    occluded = (hit & closer & ~same).any(axis=1)

    out = []
    for k, idx in enumerate(candidates):
        if occluded[k]:
            continue
        e = ents[idx]
        out.append(
            Sighting(
                entity=e,
                bearing=float(bearing[idx]),
                elevation=float(elevation[idx]),
                range_m=float(rng[idx]),
                position=centers[idx].copy(),
                velocity=e.velocity_at(t),
                is_agent=scene.is_agent(e.id),
            )
        )
    out.sort(key=lambda s: (s.range_m, s.entity.id))
    return out


def render_semantic_raster(
    scene: Scene,
    position,
    head: UnitQuaternion,
    fov: FovParams,
    t: float,
    motion_horizon: float = 0.0,
) -> np.ndarray:
    """Grayscale view: each cell carries the nearest entity's label intensity.

    Background is 0. Deterministic for identical (scene, pose, t, fov);
    ties resolve by entity id order.
    """
    raster = np.zeros((fov.raster_height, fov.raster_width), dtype=float)
    ents, centers = _sorted_snapshot(scene, t, motion_horizon)
    if not ents:
        return raster
    eye = np.asarray(position, dtype=float)
    halves = np.array([e.extents for e in ents])
    # Boxes entirely beyond the view range cannot contribute.
    near_enough = (
        np.linalg.norm(centers - eye[None, :], axis=1) - np.linalg.norm(halves, axis=1)
        <= fov.max_range
    )
    if not near_enough.any():
        return raster
    ents = [e for e, keep in zip(ents, near_enough) if keep]
    centers = centers[near_enough]
    halves = halves[near_enough]
    dirs = _local_ray_grid(fov) @ head.rotation_matrix().T
    t_near, t_far = _ray_box_entry(eye, dirs, centers, halves)
    ok = (t_far >= np.maximum(t_near, 0.0)) & (t_near > 1e-9) & (t_near <= fov.max_range)
    depth = np.where(ok, t_near, np.inf)
    nearest = np.argmin(depth, axis=1)
    hit_any = np.isfinite(depth[np.arange(depth.shape[0]), nearest])
    intensities = np.array([label_intensity(e.class_label) for e in ents])
    flat = np.where(hit_any, intensities[nearest], 0.0)
    return flat.reshape(fov.raster_height, fov.raster_width)


def point_in_view(
    position, head: UnitQuaternion, fov: FovParams, point, limit_range: bool = False
) -> bool:
    """Whether a world point falls inside the view cone (no occlusion).

    Range is unlimited by default: facing toward a distant landmark counts
    as having observed its direction.
    """
    offset = np.asarray(point, dtype=float) - np.asarray(position, dtype=float)
    bearing, elevation, rng = _bearing_elevation(head, offset[None, :])
    if rng[0] <= 1e-9:
        return True
    return (
        abs(bearing[0]) <= math.radians(fov.horizontal_fov_deg) / 2
        and abs(elevation[0]) <= math.radians(fov.vertical_fov_deg) / 2
        and (not limit_range or rng[0] <= fov.max_range)
    )


class SceneView:
    """Read-only world handle bundling a scene, a trajectory, and a frustum."""

    def __init__(self, scene: Scene, traj: BodyTrajectory, fov: FovParams):
        self.scene = scene
        self.traj = traj
        self.fov = fov

    def body_pose(self, t: float) -> Pose:
        return pose_at(self.traj, t)

    def sightings(self, t: float, head: UnitQuaternion, horizon: float = 0.0) -> list:
        pose = self.body_pose(min(t + horizon, self.traj.t_end)) if horizon else self.body_pose(t)
        return visible_entities(self.scene, pose.position, head, self.fov, t, motion_horizon=horizon)

    def raster(self, t: float, head: UnitQuaternion, horizon: float = 0.0) -> np.ndarray:
        pose = self.body_pose(min(t + horizon, self.traj.t_end)) if horizon else self.body_pose(t)
        return render_semantic_raster(self.scene, pose.position, head, self.fov, t, motion_horizon=horizon)

    def goal_in_view(self, t: float, head: UnitQuaternion) -> bool:
        pose = self.body_pose(t)
        return point_in_view(pose.position, head, self.fov, self.scene.goal.position)
