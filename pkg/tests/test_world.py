import math

import numpy as np
import pytest

from headsim import (
    BodyTrajectory,
    Entity,
    FovParams,
    Goal,
    Scene,
    UnitQuaternion,
    angular_distance,
    pose_at,
    render_semantic_raster,
    visible_entities,
)
from headsim.world import label_intensity, point_in_view

from oracles import ray_hits_box


def make_scene(entities, agents=(), condition="MDC", goal_pos=(50, 0, 0)):
    return Scene(
        entities=list(entities),
        agents=list(agents),
        goal=Goal("reach the far end", list(goal_pos)),
        condition=condition,
    )


def box(eid, pos, ext=(0.5, 0.5, 0.5), tags=(), label=None, **kw):
    return Entity(
        id=eid,
        class_label=label or eid,
        position=list(pos),
        extents=list(ext),
        tags=frozenset(tags),
        **kw,
    )


IDENT = UnitQuaternion.identity()


class TestPoseAt:
    def traj(self):
        q = IDENT
        return BodyTrajectory([(0.0, [0, 0, 0], q), (10.0, [13, 0, 0], q)])

    def test_knot_point(self):
        traj = self.traj()
        p = pose_at(traj, 10.0)
        assert np.allclose(p.position, [13, 0, 0])

    def test_midpoint(self):
        q = IDENT
        traj = BodyTrajectory([(0.0, [0, 0, 0], q), (1.0, [1, 0, 0], q)])
        assert np.allclose(pose_at(traj, 0.5).position, [0.5, 0, 0])

    def test_constant_speed(self):
        # 13 m over 10 s = 1.3 m/s; at t=5 the walker is 6.5 m along
        assert np.allclose(pose_at(self.traj(), 5.0).position, [6.5, 0, 0])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            pose_at(self.traj(), 11.0)

    def test_heading_slerp(self):
        q0 = UnitQuaternion.identity()
        q1 = UnitQuaternion.from_yaw(math.pi / 2)
        traj = BodyTrajectory([(0.0, [0, 0, 0], q0), (2.0, [1, 0, 0], q1)])
        mid = pose_at(traj, 1.0)
        assert angular_distance(mid.heading, UnitQuaternion.from_yaw(math.pi / 4)) < 1e-9

    def test_continuity(self):
        traj = self.traj()
        a = pose_at(traj, 4.0)
        b = pose_at(traj, 4.0 + 1e-7)
        assert np.linalg.norm(a.position - b.position) < 1e-5

    def test_straight_builder(self):
        traj = BodyTrajectory.straight([0, 0, 0], [78, 0, 0], speed=1.3)
        assert traj.duration == pytest.approx(60.0)
        assert np.allclose(pose_at(traj, 30.0).position, [39, 0, 0])


class TestVisibility:
    def test_on_axis_included(self):
        scene = make_scene([box("ahead", (5, 0, 0))])
        out = visible_entities(scene, [0, 0, 0], IDENT, FovParams(), 0.0)
        assert [s.entity.id for s in out] == ["ahead"]
        assert out[0].bearing == pytest.approx(0.0, abs=1e-12)
        assert out[0].range_m == pytest.approx(5.0)

    def test_outside_cone_excluded(self):
        fov = FovParams(horizontal_fov_deg=90.0)
        ang = math.radians(100)
        scene = make_scene([box("side", (5 * math.cos(ang), 5 * math.sin(ang), 0))])
        assert visible_entities(scene, [0, 0, 0], IDENT, fov, 0.0) == []

    def test_beyond_range_excluded(self):
        scene = make_scene([box("far", (45, 0, 0))])
        assert visible_entities(scene, [0, 0, 0], IDENT, FovParams(max_range=40), 0.0) == []

    def test_occlusion_by_closer_box(self):
        # brute-force ray/box check pins the expectation
        blocker = box("blocker", (3, 0, 0), ext=(0.5, 2, 2))
        target = box("target", (8, 0, 0))
        hit = ray_hits_box([0, 0, 0], [1, 0, 0], [3, 0, 0], [0.5, 2, 2])
        assert hit is not None and hit < 8.0
        scene = make_scene([target, blocker])
        out = visible_entities(scene, [0, 0, 0], IDENT, FovParams(), 0.0)
        assert [s.entity.id for s in out] == ["blocker"]

    def test_occlusion_order_independent(self):
        rng = np.random.default_rng(7)
        ents = [
            box(f"e{i}", rng.uniform([2, -8, -1], [30, 8, 1]), ext=rng.uniform(0.2, 1.5, 3))
            for i in range(12)
        ]
        base = make_scene(ents)
        ids = [s.entity.id for s in visible_entities(base, [0, 0, 0], IDENT, FovParams(), 0.0)]
        for seed in range(5):
            perm = list(ents)
            np.random.default_rng(seed).shuffle(perm)
            got = [
                s.entity.id
                for s in visible_entities(make_scene(perm), [0, 0, 0], IDENT, FovParams(), 0.0)
            ]
            assert got == ids

    def test_occlusion_matches_bruteforce(self):
        rng = np.random.default_rng(42)
        for trial in range(20):
            ents = [
                box(f"e{i}", rng.uniform([1, -10, -2], [35, 10, 2]), ext=rng.uniform(0.2, 2.0, 3))
                for i in range(8)
            ]
            scene = make_scene(ents)
            fov = FovParams()
            got = {s.entity.id for s in visible_entities(scene, [0, 0, 0], IDENT, fov, 0.0)}
            expected = set()
            half_h = math.radians(fov.horizontal_fov_deg) / 2
            half_v = math.radians(fov.vertical_fov_deg) / 2
            for e in ents:
                off = e.position
                rng_m = float(np.linalg.norm(off))
                bearing = math.atan2(off[1], off[0])
                elev = math.asin(off[2] / rng_m)
                if abs(bearing) > half_h or abs(elev) > half_v or rng_m > fov.max_range:
                    continue
                d = off / rng_m
                occluded = False
                for o in ents:
                    if o.id == e.id or float(np.linalg.norm(o.position)) >= rng_m - 1e-12:
                        continue
                    hit = ray_hits_box([0, 0, 0], d, o.position, o.extents)
                    if hit is not None and 1e-9 < hit < rng_m - 1e-9:
                        occluded = True
                        break
                if not occluded:
                    expected.add(e.id)
            assert got == expected, f"trial {trial}"

    def test_monotone_in_fov(self):
        rng = np.random.default_rng(3)
        ents = [
            box(f"e{i}", rng.uniform([1, -15, -3], [38, 15, 3])) for i in range(15)
        ]
        scene = make_scene(ents)
        narrow = {
            s.entity.id
            for s in visible_entities(
                scene, [0, 0, 0], IDENT, FovParams(horizontal_fov_deg=60, vertical_fov_deg=40), 0.0
            )
        }
        wide = {
            s.entity.id
            for s in visible_entities(
                scene, [0, 0, 0], IDENT, FovParams(horizontal_fov_deg=140, vertical_fov_deg=100), 0.0
            )
        }
        assert narrow <= wide

    def test_sorted_by_range(self):
        scene = make_scene([box("b", (9, 1, 0)), box("a", (4, -1, 0)), box("c", (20, 0, 0))])
        out = visible_entities(scene, [0, 0, 0], IDENT, FovParams(), 0.0)
        ranges = [s.range_m for s in out]
        assert ranges == sorted(ranges)

    def test_moving_entity_positions(self):
        e = box("walker", (10, 0, 0))
        e.waypoints = [(0.0, np.array([10.0, 0, 0])), (10.0, np.array([20.0, 0, 0]))]
        scene = make_scene([e])
        out = visible_entities(scene, [0, 0, 0], IDENT, FovParams(), 5.0)
        assert out[0].range_m == pytest.approx(15.0)


class TestRaster:
    def test_empty_scene_all_zero(self):
        scene = make_scene([])
        r = render_semantic_raster(scene, [0, 0, 0], IDENT, FovParams(), 0.0)
        assert not r.any()

    def test_deterministic(self):
        scene = make_scene([box("a", (6, 1, 0)), box("b", (10, -2, 0))])
        r1 = render_semantic_raster(scene, [0, 0, 0], IDENT, FovParams(), 0.0)
        r2 = render_semantic_raster(scene, [0, 0, 0], IDENT, FovParams(), 0.0)
        assert (r1 == r2).all()

    def test_turned_away_is_empty(self):
        scene = make_scene([box("only", (6, 0, 0))])
        r = render_semantic_raster(
            scene, [0, 0, 0], UnitQuaternion.from_yaw(math.pi), FovParams(), 0.0
        )
        assert not r.any()

    def test_cells_carry_label_intensity(self):
        scene = make_scene([box("thing", (5, 0, 0), label="signpost")])
        r = render_semantic_raster(scene, [0, 0, 0], IDENT, FovParams(), 0.0)
        values = set(np.unique(r)) - {0.0}
        assert values == {label_intensity("signpost")}

    def test_label_intensity_stable_and_nonzero(self):
        assert label_intensity("car") == label_intensity("car")
        assert 32 <= label_intensity("car") <= 255
        assert label_intensity("car") != label_intensity("tree")


class TestPointInView:
    def test_ahead(self):
        assert point_in_view([0, 0, 0], IDENT, FovParams(), [100, 0, 0])

    def test_behind(self):
        assert not point_in_view([0, 0, 0], IDENT, FovParams(), [-5, 0, 0])

    def test_range_limit_optional(self):
        fov = FovParams(max_range=40)
        assert point_in_view([0, 0, 0], IDENT, fov, [100, 0, 0])
        assert not point_in_view([0, 0, 0], IDENT, fov, [100, 0, 0], limit_range=True)


class TestSceneValidation:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            make_scene([box("x", (1, 0, 0)), box("x", (2, 0, 0))])

    def test_bad_condition_rejected(self):
        with pytest.raises(ValueError):
            make_scene([], condition="XYZ")

    def test_unknown_tag_rejected(self):
        with pytest.raises(ValueError):
            box("x", (1, 0, 0), tags=("shiny",))

    def test_negative_extents_rejected(self):
        with pytest.raises(ValueError):
            box("x", (1, 0, 0), ext=(-1, 1, 1))
