"""
Planar geometry: vectors, poses, angle arithmetic and oriented rectangles.

All quantities are in meters and radians; headings are normalized to the
half-open interval (-π, π].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Self

import numpy as np
import numpy.typing as npt

from .errors import ValidationError

type Meters = float
"""A type alias for documentation purposes."""

type Seconds = float
"""A type alias for documentation purposes."""

type Radians = float
"""A type alias for documentation purposes."""

type FloatArray = npt.NDArray[np.float64]
"""A numpy array of float64 values."""

type BoolArray = npt.NDArray[np.bool_]
"""A numpy array of booleans."""

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: Radians) -> Radians:
    """Normalizes an angle to (-π, π]; angles already in range are returned as-is."""
    if -math.pi < theta <= math.pi:
        return theta
    wrapped = theta - TWO_PI * round(theta / TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    elif wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


def angle_diff(a: Radians, b: Radians) -> Radians:
    """The signed shortest rotation from ``b`` to ``a``, in (-π, π]."""
    return wrap_angle(a - b)


def interpolate_heading(theta0: Radians, theta1: Radians, alpha: float) -> Radians:
    """
    Interpolates along the shortest arc from ``theta0`` to ``theta1``.

    The antipodal tie resolves toward the counter-clockwise arc, because
    :func:`wrap_angle` maps a difference of ±π to +π.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha", f"must lie in [0, 1], got {alpha}")
    return wrap_angle(theta0 + alpha * angle_diff(theta1, theta0))


def wrap_angles(theta: FloatArray) -> FloatArray:
    """Vectorized :func:`wrap_angle`."""
    wrapped = theta - TWO_PI * np.round(theta / TWO_PI)
    wrapped = np.where(wrapped <= -math.pi, wrapped + TWO_PI, wrapped)
    return np.where(wrapped > math.pi, wrapped - TWO_PI, wrapped)


@dataclass(frozen=True, slots=True)
class Vec2:
    """A point or displacement in the plane."""

    x: Meters
    y: Meters

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError("vec2", f"non-finite component ({self.x}, {self.y})")

    def __add__(self, other: Vec2) -> Vec2:
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Vec2) -> Vec2:
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, scale: float) -> Vec2:
        return Vec2(self.x * scale, self.y * scale)

    def __neg__(self) -> Vec2:
        return Vec2(-self.x, -self.y)

    def dot(self, other: Vec2) -> float:
        return self.x * other.x + self.y * other.y

    def cross(self, other: Vec2) -> float:
        return self.x * other.y - self.y * other.x

    def norm(self) -> Meters:
        return math.hypot(self.x, self.y)

    def rotated(self, angle: Radians) -> Vec2:
        c, s = math.cos(angle), math.sin(angle)
        return Vec2(c * self.x - s * self.y, s * self.x + c * self.y)

    @classmethod
    def polar(cls, radius: float, angle: Radians) -> Self:
        return cls(radius * math.cos(angle), radius * math.sin(angle))

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


ORIGIN = Vec2(0.0, 0.0)


@dataclass(frozen=True, slots=True)
class Pose2:
    """A position with a heading, normalized to (-π, π] on construction."""

    position: Vec2
    heading: Radians

    def __post_init__(self) -> None:
        if not math.isfinite(self.heading):
            raise ValidationError("heading", f"non-finite heading {self.heading}")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @classmethod
    def at(cls, x: Meters, y: Meters, heading: Radians = 0.0) -> Self:
        return cls(Vec2(x, y), heading)

    def to_local(self, point: Vec2) -> Vec2:
        """Expresses a world-frame point in this pose's frame (x forward, y left)."""
        return (point - self.position).rotated(-self.heading)

    def to_world(self, point: Vec2) -> Vec2:
        """Expresses a point given in this pose's frame in the world frame."""
        return self.position + point.rotated(self.heading)

    def forward(self) -> Vec2:
        return Vec2(math.cos(self.heading), math.sin(self.heading))


def to_world_array(pose: Pose2, points: FloatArray) -> FloatArray:
    """Maps an (n, 2) array of pose-frame points into the world frame."""
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T + np.array([pose.position.x, pose.position.y])


def to_local_array(pose: Pose2, points: FloatArray) -> FloatArray:
    """Maps an (n, 2) array of world-frame points into the pose frame."""
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    rot = np.array([[c, s], [-s, c]])
    return (points - np.array([pose.position.x, pose.position.y])) @ rot.T


# Oriented rectangles (footprints)

_CORNER_SIGNS = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])


@dataclass(frozen=True, slots=True)
class Footprint:
    """An oriented rectangle: a vehicle outline of the given length and width at a pose."""

    pose: Pose2
    length: Meters
    width: Meters

    def __post_init__(self) -> None:
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValidationError("footprint", "dimensions must be strictly positive")

    def corners(self) -> FloatArray:
        """The four corners, counter-clockwise from front-left, as a (4, 2) array."""
        return footprint_corners(
            np.array(self.pose.position.x),
            np.array(self.pose.position.y),
            np.array(self.pose.heading),
            self.length,
            self.width,
        )

    def overlaps(self, other: Footprint) -> bool:
        """Separating-axis test; touching boundaries count as overlap."""
        return bool(rectangles_overlap(self.corners()[None], other.corners()[None])[0])


def footprint_corners(
    x: FloatArray,
    y: FloatArray,
    heading: FloatArray,
    length: float | FloatArray,
    width: float | FloatArray,
) -> FloatArray:
    """
    Corners of oriented rectangles, broadcasting over leading dimensions.

    :returns: an array of shape ``(*batch, 4, 2)``.
    """
    c = np.cos(heading)[..., None]
    s = np.sin(heading)[..., None]
    half_l = (np.asarray(length, dtype=np.float64) / 2.0)[..., None]
    half_w = (np.asarray(width, dtype=np.float64) / 2.0)[..., None]
    lx = _CORNER_SIGNS[:, 0] * half_l
    ly = _CORNER_SIGNS[:, 1] * half_w
    cx = np.asarray(x)[..., None] + c * lx - s * ly
    cy = np.asarray(y)[..., None] + s * lx + c * ly
    return np.stack([cx, cy], axis=-1)


def rectangles_overlap(a: FloatArray, b: FloatArray) -> BoolArray:
    """
    Batched separating-axis test between rectangles given by their corners.

    :param a: corners of shape ``(m, 4, 2)``.
    :param b: corners of shape ``(m, 4, 2)``.
    :returns: a boolean array of shape ``(m,)``; touching counts as overlap.
    """
    axes = np.concatenate(
        [a[:, 1:3] - a[:, 0:2], b[:, 1:3] - b[:, 0:2]], axis=1
    )  # (m, 4, 2): two edge directions per rectangle
    proj_a = np.einsum("mkd,mcd->mkc", axes, a)
    proj_b = np.einsum("mkd,mcd->mkc", axes, b)
    separated = (proj_a.max(axis=2) < proj_b.min(axis=2)) | (
        proj_b.max(axis=2) < proj_a.min(axis=2)
    )
    return np.logical_not(separated.any(axis=1))


def support_extent(
    heading: FloatArray, length: float | FloatArray, width: float | FloatArray,
    ux: FloatArray, uy: FloatArray,
) -> FloatArray:
    """Half-extent of oriented rectangles along unit directions ``(ux, uy)``."""
    c, s = np.cos(heading), np.sin(heading)
    along = np.abs(ux * c + uy * s)
    across = np.abs(-ux * s + uy * c)
    return np.asarray(length) / 2.0 * along + np.asarray(width) / 2.0 * across


def segments_intersect(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> bool:
    """Closed segment intersection, with collinear overlap counted as intersecting."""

    def orient(a: Vec2, b: Vec2, c: Vec2) -> float:
        return (b - a).cross(c - a)

    def on_segment(a: Vec2, b: Vec2, c: Vec2) -> bool:
        return (
            min(a.x, b.x) <= c.x <= max(a.x, b.x)
            and min(a.y, b.y) <= c.y <= max(a.y, b.y)
        )

    d1 = orient(q0, q1, p0)
    d2 = orient(q0, q1, p1)
    d3 = orient(p0, p1, q0)
    d4 = orient(p0, p1, q1)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    return (
        (d1 == 0 and on_segment(q0, q1, p0))
        or (d2 == 0 and on_segment(q0, q1, p1))
        or (d3 == 0 and on_segment(p0, p1, q0))
        or (d4 == 0 and on_segment(p0, p1, q1))
    )


def polyline_length(points: FloatArray) -> Meters:
    """Total length of an (n, 2) polyline."""
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def as_array(points: tuple[Vec2, ...] | list[Vec2]) -> FloatArray:
    """Converts a sequence of points to an (n, 2) float array."""
    return np.array([(p.x, p.y) for p in points], dtype=np.float64).reshape(-1, 2)
