import math

import numpy as np
import pytest

from closedloop.errors import ValidationError
from closedloop.geometry import (
    Footprint,
    Pose2,
    Vec2,
    angle_diff,
    footprint_corners,
    interpolate_heading,
    polyline_length,
    rectangles_overlap,
    segments_intersect,
    support_extent,
    to_local_array,
    to_world_array,
    wrap_angle,
    wrap_angles,
)


@pytest.mark.parametrize(
    "theta, expected",
    [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi), (2 * math.pi + 0.5, 0.5)],
)
def test_wrap_angle(theta: float, expected: float) -> None:
    assert wrap_angle(theta) == pytest.approx(expected)


def test_wrap_angle_keeps_in_range_values_bit_exact() -> None:
    rng = np.random.default_rng(0)
    for theta in rng.uniform(-math.pi, math.pi, 1000):
        assert wrap_angle(float(theta)) == float(theta)


def test_wrap_angles_matches_scalar() -> None:
    theta = np.random.default_rng(1).uniform(-20.0, 20.0, 500)
    expected = np.array([wrap_angle(float(t)) for t in theta])
    assert np.allclose(wrap_angles(theta), expected)


def test_interpolate_heading_takes_the_shortest_arc() -> None:
    rng = np.random.default_rng(2)
    for a, b in rng.uniform(-math.pi, math.pi, (10_000, 2)):
        mid = interpolate_heading(float(a), float(b), 0.5)
        half = abs(angle_diff(float(b), float(a))) / 2.0
        assert abs(angle_diff(mid, float(a))) == pytest.approx(half, abs=1e-9)
        assert abs(angle_diff(float(b), mid)) == pytest.approx(half, abs=1e-9)


def test_interpolate_heading_across_the_branch_cut() -> None:
    assert interpolate_heading(3.0, -3.0, 0.5) == pytest.approx(math.pi)


def test_interpolate_heading_rejects_alpha_outside_unit_interval() -> None:
    with pytest.raises(ValidationError):
        interpolate_heading(0.0, 1.0, 1.5)


def test_pose_frames_are_inverse() -> None:
    pose = Pose2.at(3.0, -2.0, 0.7)
    point = Vec2(1.5, 4.0)
    back = pose.to_world(pose.to_local(point))
    assert back.x == pytest.approx(point.x) and back.y == pytest.approx(point.y)
    local = pose.to_local(Vec2(3.0, -2.0) + pose.forward() * 2.0)
    assert local.x == pytest.approx(2.0) and local.y == pytest.approx(0.0, abs=1e-12)


def test_array_frame_conversion_matches_scalar() -> None:
    pose = Pose2.at(-4.0, 1.0, -2.2)
    points = np.array([[1.0, 2.0], [-3.0, 0.5]])
    world = to_world_array(pose, points)
    for (x, y), (wx, wy) in zip(points, world):
        expected = pose.to_world(Vec2(float(x), float(y)))
        assert (wx, wy) == pytest.approx(expected.as_tuple())
    assert np.allclose(to_local_array(pose, world), points)


def test_footprint_corners_of_axis_aligned_box() -> None:
    corners = footprint_corners(np.array(0.0), np.array(0.0), np.array(0.0), 4.0, 2.0)
    assert np.allclose(corners, [[2.0, 1.0], [-2.0, 1.0], [-2.0, -1.0], [2.0, -1.0]])


def test_overlap_touching_counts() -> None:
    a = Footprint(Pose2.at(0.0, 0.0), 4.0, 2.0)
    assert a.overlaps(Footprint(Pose2.at(4.0, 0.0), 4.0, 2.0))
    assert not a.overlaps(Footprint(Pose2.at(4.01, 0.0), 4.0, 2.0))


def test_overlap_of_rotated_rectangles_uses_all_axes() -> None:
    a = Footprint(Pose2.at(0.0, 0.0), 4.0, 2.0)
    # A diamond whose bounding box overlaps ``a`` but whose edges do not.
    b = Footprint(Pose2.at(2.8, 1.8, math.pi / 4), 2.0, 2.0)
    assert not a.overlaps(b)
    assert a.overlaps(Footprint(Pose2.at(2.5, 1.5, math.pi / 4), 2.0, 2.0))


def test_batched_overlap_matches_scalar() -> None:
    rng = np.random.default_rng(3)
    poses = rng.uniform([-5, -5, -math.pi], [5, 5, math.pi], (200, 2, 3))
    a = footprint_corners(poses[:, 0, 0], poses[:, 0, 1], poses[:, 0, 2], 4.0, 2.0)
    b = footprint_corners(poses[:, 1, 0], poses[:, 1, 1], poses[:, 1, 2], 4.0, 2.0)
    batched = rectangles_overlap(a, b)
    for i, (p, q) in enumerate(poses):
        scalar = Footprint(Pose2.at(*p), 4.0, 2.0).overlaps(Footprint(Pose2.at(*q), 4.0, 2.0))
        assert batched[i] == scalar


def test_support_extent_along_and_across() -> None:
    assert support_extent(np.array(0.0), 4.0, 2.0, np.array(1.0), np.array(0.0)) == pytest.approx(2.0)
    assert support_extent(np.array(0.0), 4.0, 2.0, np.array(0.0), np.array(1.0)) == pytest.approx(1.0)


def test_segments_intersect() -> None:
    assert segments_intersect(Vec2(0, 0), Vec2(2, 2), Vec2(0, 2), Vec2(2, 0))
    assert not segments_intersect(Vec2(0, 0), Vec2(1, 0), Vec2(0, 1), Vec2(1, 1))
    assert segments_intersect(Vec2(0, 0), Vec2(2, 0), Vec2(1, 0), Vec2(3, 0))


def test_polyline_length() -> None:
    assert polyline_length(np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 5.0]])) == pytest.approx(6.0)
    assert polyline_length(np.zeros((1, 2))) == 0.0
