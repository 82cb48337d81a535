"""Quaternion algebra and constant-rate orientation stepping.

Angles are radians everywhere inside the package; degrees appear only at
configuration boundaries (turn rates, field-of-view sizes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Norm deviation beyond this is a caller contract violation.
NORM_TOL = 1e-6


@dataclass(frozen=True)
class UnitQuaternion:
    """A unit quaternion (w, x, y, z) representing a 3D rotation.

    q and -q encode the same rotation; every comparison in this module is
    sign-invariant. Construction renormalizes, so the norm is 1 within
    1e-9 after any operation.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        n = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if n == 0.0 or not math.isfinite(n):
            raise ValueError("quaternion components must be finite and not all zero")
        if abs(n - 1.0) > 1e-12:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "UnitQuaternion":
        ax = np.asarray(axis, dtype=float)
        n = float(np.linalg.norm(ax))
        if n == 0.0:
            raise ValueError("rotation axis must be non-zero")
        ax = ax / n
        half = 0.5 * angle
        s = math.sin(half)
        return UnitQuaternion(math.cos(half), ax[0] * s, ax[1] * s, ax[2] * s)

    @staticmethod
    def from_yaw(yaw: float) -> "UnitQuaternion":
        """Rotation about +z. Yaw 0 faces +x; positive yaw turns toward +y."""
        half = 0.5 * yaw
        return UnitQuaternion(math.cos(half), 0.0, 0.0, math.sin(half))

    @staticmethod
    def from_yaw_pitch(yaw: float, pitch: float) -> "UnitQuaternion":
        """Yaw about +z then pitch (positive = up) with zero roll."""
        return UnitQuaternion.from_yaw(yaw) * UnitQuaternion.from_axis_angle((0.0, 1.0, 0.0), -pitch)

    @staticmethod
    def looking_at(direction) -> "UnitQuaternion":
        """Orientation whose forward (+x) axis points along ``direction``."""
        d = np.asarray(direction, dtype=float)
        n = float(np.linalg.norm(d))
        if n == 0.0:
            raise ValueError("look direction must be non-zero")
        d = d / n
        yaw = math.atan2(d[1], d[0])
        pitch = math.asin(max(-1.0, min(1.0, d[2])))
        return UnitQuaternion.from_yaw_pitch(yaw, pitch)

    def dot(self, other: "UnitQuaternion") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return UnitQuaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotate(self, vector) -> np.ndarray:
        """Rotate a 3-vector by this quaternion."""
        v = np.asarray(vector, dtype=float)
        u = np.array([self.x, self.y, self.z])
        t = 2.0 * np.cross(u, v)
        return v + self.w * t + np.cross(u, t)

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def forward(self) -> np.ndarray:
        """World-space direction of the local +x (facing) axis."""
        return self.rotate(np.array([1.0, 0.0, 0.0]))

    def yaw(self) -> float:
        """Heading angle of the forward axis projected to the ground plane."""
        f = self.forward()
        return math.atan2(f[1], f[0])

    def to_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def approx_equal(self, other: "UnitQuaternion", tol: float = 1e-9) -> bool:
        """Same rotation up to sign, within ``tol`` radians."""
        return angular_distance(self, other) <= tol


@dataclass(frozen=True)
class AngularRate:
    """Rotation speed, stored as deg/s (a configuration-boundary unit)."""

    deg_per_s: float = 36.0

    def __post_init__(self) -> None:
        if self.deg_per_s <= 0:
            raise ValueError("angular rate must be positive")

    @property
    def rad_per_s(self) -> float:
        return math.radians(self.deg_per_s)


def _check_unit(q: UnitQuaternion) -> None:
    n = math.sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z)
    if abs(n - 1.0) > NORM_TOL:
        raise ValueError(f"expected unit quaternion, norm deviates by {abs(n - 1.0):.3e}")


def angular_distance(q1: UnitQuaternion, q2: UnitQuaternion) -> float:
    """Rotation angle in radians between two orientations.

    Computed as 2*arccos(|<q1, q2>|); the absolute value makes the metric
    sign-invariant, and the argument is clamped to [0, 1] to absorb
    floating-point drift near identical inputs. Result lies in [0, pi].
    """
    _check_unit(q1)
    _check_unit(q2)
    d = abs(q1.dot(q2))
    if d > 1.0:
        d = 1.0
    return 2.0 * math.acos(d)


def slerp(q1: UnitQuaternion, q2: UnitQuaternion, t: float) -> UnitQuaternion:
    """Shortest-arc spherical interpolation; t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation fraction must be in [0, 1], got {t}")
    _check_unit(q1)
    _check_unit(q2)
    a = q1.to_array()
    b = q2.to_array()
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 0.9995:
        # Nearly parallel: linear blend then renormalize.
        out = a + t * (b - a)
        out = out / np.linalg.norm(out)
        return UnitQuaternion(*out)
    theta0 = math.acos(min(1.0, dot))
    sin0 = math.sin(theta0)
    s1 = math.sin((1.0 - t) * theta0) / sin0
    s2 = math.sin(t * theta0) / sin0
    out = s1 * a + s2 * b
    return UnitQuaternion(*out)


def step_toward(
    current: UnitQuaternion,
    target: UnitQuaternion,
    rate: AngularRate,
    dt: float,
) -> UnitQuaternion:
    """Rotate along the shortest arc by at most rate*dt toward ``target``.

    Returns ``target`` exactly once the remaining angle fits in one step;
    never overshoots.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    remaining = angular_distance(current, target)
    step = rate.rad_per_s * dt
    if remaining <= step + 1e-12:
        return target
    return slerp(current, target, step / remaining)
