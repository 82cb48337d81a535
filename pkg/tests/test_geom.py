import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headsim import AngularRate, UnitQuaternion, angular_distance, slerp, step_toward

from conftest import random_unit_quaternion


def quats(seed):
    rng = np.random.default_rng(seed)
    return random_unit_quaternion(rng)


unit_quats = st.integers(min_value=0, max_value=10_000).map(quats)


class TestAngularDistance:
    def test_identity_case(self):
        q = UnitQuaternion.from_axis_angle([0.3, -0.2, 0.9], 1.1)
        assert angular_distance(q, q) == pytest.approx(0.0, abs=1e-7)

    def test_double_cover(self):
        qi = UnitQuaternion.identity()
        q_neg = UnitQuaternion(-1.0, 0.0, 0.0, 0.0)
        assert angular_distance(qi, q_neg) == 0.0

    def test_quarter_turn(self):
        # axis-angle closed form: dot(identity, yaw90) = cos(45 deg)
        assert angular_distance(
            UnitQuaternion.identity(), UnitQuaternion.from_yaw(math.pi / 2)
        ) == pytest.approx(math.pi / 2, abs=1e-12)

    @pytest.mark.parametrize("theta", [0.0, math.pi / 4, math.pi / 2, math.pi])
    def test_yaw_angles(self, theta):
        d = angular_distance(UnitQuaternion.identity(), UnitQuaternion.from_yaw(theta))
        assert d == pytest.approx(theta, abs=1e-9)

    def test_non_unit_input_rejected(self):
        q = UnitQuaternion.identity()
        bad = UnitQuaternion.identity()
        object.__setattr__(bad, "w", 1.1)
        with pytest.raises(ValueError):
            angular_distance(q, bad)

    @given(unit_quats, unit_quats)
    @settings(max_examples=100, deadline=None)
    def test_symmetry_and_range(self, q1, q2):
        d12 = angular_distance(q1, q2)
        d21 = angular_distance(q2, q1)
        assert d12 == pytest.approx(d21, abs=1e-12)
        assert 0.0 <= d12 <= math.pi + 1e-12

    @given(unit_quats, unit_quats, unit_quats)
    @settings(max_examples=100, deadline=None)
    def test_left_composition_invariance(self, q1, q2, r):
        d = angular_distance(q1, q2)
        d_rot = angular_distance(r * q1, r * q2)
        assert d_rot == pytest.approx(d, abs=1e-7)

    @given(unit_quats)
    @settings(max_examples=50, deadline=None)
    def test_zero_iff_same_up_to_sign(self, q):
        neg = UnitQuaternion(-q.w, -q.x, -q.y, -q.z)
        assert angular_distance(q, neg) == pytest.approx(0.0, abs=1e-7)


class TestSlerp:
    def test_same_rotation(self):
        q = UnitQuaternion.from_yaw(0.7)
        out = slerp(q, q, 0.5)
        assert angular_distance(out, q) < 1e-9

    def test_halfway_yaw(self):
        # axis-angle halving
        out = slerp(UnitQuaternion.identity(), UnitQuaternion.from_yaw(math.pi / 2), 0.5)
        assert angular_distance(out, UnitQuaternion.from_yaw(math.pi / 4)) < 1e-9

    def test_endpoints(self):
        q1 = UnitQuaternion.from_axis_angle([1, 2, 3], 0.9)
        q2 = UnitQuaternion.from_axis_angle([-1, 0.5, 2], 2.1)
        assert angular_distance(slerp(q1, q2, 0.0), q1) < 1e-9
        assert angular_distance(slerp(q1, q2, 1.0), q2) < 1e-9

    def test_rejects_out_of_range_fraction(self):
        q = UnitQuaternion.identity()
        with pytest.raises(ValueError):
            slerp(q, q, 1.5)

    @given(unit_quats, unit_quats, st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=100, deadline=None)
    def test_output_norm(self, q1, q2, t):
        out = slerp(q1, q2, t)
        norm = math.sqrt(out.w**2 + out.x**2 + out.y**2 + out.z**2)
        assert abs(norm - 1.0) <= 1e-9


class TestStepToward:
    def test_already_at_target(self):
        q = UnitQuaternion.from_yaw(1.0)
        assert step_toward(q, q, AngularRate(36.0), 5.0) is q

    def test_single_step_angle(self):
        # rate*dt arithmetic: 36 deg/s * 0.2 s = 7.2 deg
        out = step_toward(
            UnitQuaternion.identity(),
            UnitQuaternion.from_yaw(math.pi / 2),
            AngularRate(36.0),
            0.2,
        )
        assert math.degrees(out.yaw()) == pytest.approx(7.2, abs=1e-9)

    def test_converges_in_13_ticks(self):
        # 90 deg at 36 deg/s and 5 Hz: ceil(90 / 7.2) = 13 steps
        current = UnitQuaternion.identity()
        target = UnitQuaternion.from_yaw(math.pi / 2)
        steps = 0
        while angular_distance(current, target) > 1e-12:
            current = step_toward(current, target, AngularRate(36.0), 0.2)
            steps += 1
            assert steps < 50
        assert steps == 13

    @given(unit_quats, unit_quats, st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=100, deadline=None)
    def test_never_overshoots(self, current, target, dt):
        rate = AngularRate(36.0)
        before = angular_distance(current, target)
        after = angular_distance(step_toward(current, target, rate, dt), target)
        assert after <= max(0.0, before - rate.rad_per_s * dt) + 1e-6


class TestConstructors:
    def test_normalizes(self):
        q = UnitQuaternion(2.0, 0.0, 0.0, 0.0)
        assert q.w == 1.0

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            UnitQuaternion(0.0, 0.0, 0.0, 0.0)

    def test_looking_at_roundtrip(self):
        d = np.array([3.0, 4.0, 1.0])
        q = UnitQuaternion.looking_at(d)
        fwd = q.forward()
        assert np.allclose(fwd, d / np.linalg.norm(d), atol=1e-9)

    def test_rotate_matches_matrix(self):
        q = UnitQuaternion.from_axis_angle([1, 1, 0], 0.8)
        v = np.array([0.2, -1.0, 0.5])
        assert np.allclose(q.rotate(v), q.rotation_matrix() @ v, atol=1e-12)
