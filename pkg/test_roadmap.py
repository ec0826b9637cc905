import math

import numpy as np
import pytest

from closedloop.errors import LaneQueryError
from closedloop.geometry import Vec2
from closedloop.roadmap import DEFAULT_SPEED_LIMIT, Polyline, RoadMap, query_lane
from closedloop.scenario import FeatureAttributes, MapFeature
from conftest import ScenarioFactory


def test_nearest_lane_and_signed_offset(road: ScenarioFactory) -> None:
    roadmap = RoadMap(road().map_features)
    east = roadmap.query_lane(Vec2(10.0, 0.5))
    assert east.lane_id == "lane-0"
    assert east.lateral_offset == pytest.approx(0.5)
    assert east.heading == pytest.approx(0.0)
    assert east.arclength == pytest.approx(110.0)
    west = roadmap.query_lane(Vec2(10.0, 3.0))
    assert west.lane_id == "lane-1"
    # left of a westbound lane is south
    assert west.lateral_offset == pytest.approx(0.5)
    assert abs(west.heading) == pytest.approx(math.pi)


def test_query_lane_without_lanes() -> None:
    with pytest.raises(LaneQueryError):
        query_lane([], Vec2(0.0, 0.0))


def test_vectorized_query_matches_scalar(road: ScenarioFactory) -> None:
    roadmap = RoadMap(road().map_features)
    points = np.random.default_rng(4).uniform([-50, -3], [300, 6], (100, 2))
    index, heading, lateral, arclength = roadmap.query_lanes(points)
    for i, (x, y) in enumerate(points):
        single = roadmap.query_lane(Vec2(float(x), float(y)))
        assert roadmap.lane_id_at(int(index[i])) == single.lane_id
        assert lateral[i] == pytest.approx(single.lateral_offset)
        assert arclength[i] == pytest.approx(single.arclength)


def test_drivable_area_covers_boundary_inclusive(road: ScenarioFactory) -> None:
    roadmap = RoadMap(road().map_features)
    assert roadmap.has_drivable_area
    covered = roadmap.covers(np.array([[0.0, 0.0], [0.0, -2.0], [0.0, -2.1], [0.0, 5.6]]))
    assert covered.tolist() == [True, True, False, False]


def test_lane_paths_follow_successors() -> None:
    a = MapFeature("a", "LaneCenter", (Vec2(0, 0), Vec2(10, 0)), FeatureAttributes(successors=("b",)))
    b = MapFeature("b", "LaneCenter", (Vec2(10, 0), Vec2(10, 10)), FeatureAttributes(speed_limit=7.0))
    roadmap = RoadMap([a, b])
    path = roadmap.lane_path("a")
    assert path.lane_ids == ("a", "b")
    assert path.length == pytest.approx(20.0)
    assert path.lane_at(15.0) == "b"
    assert path.lane_at(25.0) is None
    assert roadmap.speed_limit("b") == 7.0
    assert roadmap.speed_limit("a") == DEFAULT_SPEED_LIMIT


def test_stop_lines_by_lane(road: ScenarioFactory) -> None:
    roadmap = RoadMap(road(signal=["GO"] * 120).map_features)
    (line,) = roadmap.stop_lines
    assert line.lane_id == "lane-0"
    assert roadmap.stop_lines_for(["lane-1"]) == ()
    assert roadmap.stop_lines_for(["lane-0"]) == (line,)


def test_polyline_projection_and_interpolation() -> None:
    polyline = Polyline(np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]))
    assert polyline.length == pytest.approx(20.0)
    s, lateral, distance = polyline.project(Vec2(11.0, 4.0))
    assert s == pytest.approx(14.0)
    assert lateral == pytest.approx(-1.0)
    assert distance == pytest.approx(1.0)
    point, heading = polyline.point_at(15.0)
    assert point.as_tuple() == pytest.approx((10.0, 5.0))
    assert heading == pytest.approx(math.pi / 2)
    beyond, _ = polyline.point_at(22.0)
    assert beyond.as_tuple() == pytest.approx((10.0, 12.0))
