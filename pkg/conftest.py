"""Shared fixtures: small hand-built scenarios on a straight two-way road."""

from collections.abc import Callable, Sequence

import pytest

from closedloop.geometry import ORIGIN, Pose2, Vec2
from closedloop.roadmap import RoadMap
from closedloop.scenario import (
    Dimensions,
    DynamicMapState,
    FeatureAttributes,
    MapFeature,
    ScenarioDescription,
    SignalState,
    Track,
    TrackState,
)
from closedloop.vehicle import EgoState
from closedloop.world import AgentState, SignalSchedule, WorldState

CAR = Dimensions(4.6, 1.9, 1.5)

type AgentSpec = tuple[str, float, float, float]
"""Object id, start x, lateral y and constant speed along +x."""

type ScenarioFactory = Callable[..., ScenarioDescription]


def straight_track(
    object_id: str,
    x0: float,
    y: float,
    speed: float,
    step_count: int,
    dt: float = 0.1,
    object_type: str = "Vehicle",
) -> Track:
    states = tuple(
        TrackState(Pose2.at(x0 + speed * i * dt, y, 0.0), Vec2(speed, 0.0))
        for i in range(step_count)
    )
    return Track(object_id, object_type, CAR, states)  # type: ignore[arg-type]


def straight_road(
    *,
    step_count: int = 120,
    dt: float = 0.1,
    ego_speed: float = 5.0,
    agents: Sequence[AgentSpec] = (),
    signal: Sequence[SignalState] | None = None,
    stop_line_x: float = 40.0,
) -> ScenarioDescription:
    """
    A 600 m straight road: ``lane-0`` eastbound at y=0, ``lane-1`` westbound
    at y=3.5, drivable between y=-2 and y=5.5. With ``signal`` the eastbound
    lane gets a stop line at ``stop_line_x`` governed by that sequence.
    """
    lane0 = MapFeature(
        "lane-0", "LaneCenter", (Vec2(-100.0, 0.0), Vec2(500.0, 0.0)), FeatureAttributes(speed_limit=15.0)
    )
    lane1 = MapFeature(
        "lane-1", "LaneCenter", (Vec2(500.0, 3.5), Vec2(-100.0, 3.5)), FeatureAttributes(speed_limit=15.0)
    )
    ring = MapFeature(
        "drivable-0",
        "DrivableArea",
        (Vec2(-100.0, -2.0), Vec2(500.0, -2.0), Vec2(500.0, 5.5), Vec2(-100.0, 5.5), Vec2(-100.0, -2.0)),
    )
    features = [lane0, lane1, ring]
    dynamic: tuple[DynamicMapState, ...] = ()
    if signal is not None:
        features.append(
            MapFeature(
                "stop-lane-0",
                "StopLine",
                (Vec2(stop_line_x, -1.75), Vec2(stop_line_x, 1.75)),
                FeatureAttributes(lane_id="lane-0"),
            )
        )
        dynamic = (DynamicMapState("lane-0", tuple(signal)),)
    tracks = [straight_track("ego", 0.0, 0.0, ego_speed, step_count, dt, "Ego")]
    tracks.extend(straight_track(oid, x0, y, v, step_count, dt) for oid, x0, y, v in agents)
    return ScenarioDescription(
        id="straight",
        dt=dt,
        step_count=step_count,
        anchor=ORIGIN,
        ego_track_id="ego",
        map_features=tuple(features),
        tracks=tuple(tracks),
        dynamic_states=dynamic,
        source="fixture",
    )


@pytest.fixture
def road() -> ScenarioFactory:
    return straight_road


def snapshot(
    scenario: ScenarioDescription,
    agents: Sequence[AgentState] = (),
    *,
    step: int = 0,
    ego: EgoState | None = None,
    roadmap: RoadMap | None = None,
) -> WorldState:
    """A world at ``step`` with the given agents; the ego defaults to a parked car far behind."""
    schedule = SignalSchedule.from_scenario(scenario)
    return WorldState(
        step=step,
        time=step * scenario.dt,
        ego=ego if ego is not None else EgoState(Pose2.at(-90.0, 0.0), 0.0),
        agents=tuple(agents),
        signals=schedule.at(step),
        roadmap=roadmap if roadmap is not None else RoadMap(scenario.map_features),
        schedule=schedule,
        scenario=scenario,
        sim_dt=scenario.dt,
    )
