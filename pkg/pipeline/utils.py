"""
Shared numeric helpers used across the pipeline.
"""

import math

Vec3 = tuple[float, float, float]


def clamp(value: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, value))


def wrap_angle(rad: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return (rad + math.pi) % (2 * math.pi) - math.pi


def sub(a: Vec3, b: Vec3) -> Vec3:
    return a[0] - b[0], a[1] - b[1], a[2] - b[2]


def norm(v: Vec3) -> float:
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def scale(v: Vec3, k: float) -> Vec3:
    return v[0] * k, v[1] * k, v[2] * k
