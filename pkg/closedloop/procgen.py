"""
Procedural scenario generation: straight roads, constant-curvature arcs and
four-way intersections, with an expert ego log, IDM background traffic
recorded into the log and, optionally, traffic signals.

Generation is a pure function of ``(config, seed)``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, fields
from typing import Any, Final, Literal

import numpy as np
import shapely

from .errors import ConfigurationError, GenerationError
from .geometry import Pose2, Seconds, Vec2, footprint_corners, rectangles_overlap
from .roadmap import RoadMap
from .scenario import (
    Dimensions,
    DynamicMapState,
    FeatureAttributes,
    FeatureId,
    MapFeature,
    ScenarioDescription,
    SignalState,
    Track,
    TrackState,
)
from .traffic import IdmParams, idm_agent_step
from .utils import make_rng, stream_key
from .vehicle import EgoState
from .world import EGO_DIMENSIONS, AgentState, SignalSchedule, WorldState

logger = logging.getLogger(__name__)

type Layout = Literal["Straight", "Arc", "Intersection"]
"""Road layouts the generator can build."""

LAYOUTS: Final[tuple[Layout, ...]] = ("Straight", "Arc", "Intersection")

AGENT_DIMENSIONS: Final = Dimensions(4.6, 1.9, 1.5)

MAX_ATTEMPTS: Final = 20

EGO_BRAKE: Final = 1.5
"""Deceleration of the expert ego once it has covered the route, in m/s²."""

BACK_EXTENT: Final = 40.0
"""Road length behind the ego's start, in meters."""

CROSS_EXTENT: Final = 60.0
"""Half-length of the crossing road at intersections."""

SAME_LANE_SPACING: Final = 10.0

SAMPLE_SPACING: Final = 1.0


@dataclass(frozen=True, slots=True)
class ProcGenConfig:
    layout: Layout = "Straight"
    lane_count: int = 2
    lane_width: float = 3.5
    route_length: float = 120.0
    agent_count: int = 3
    ego_cruise_speed: float = 8.0
    signalized: bool = False
    duration: Seconds = 20.0
    dt: Seconds = 0.1

    def __post_init__(self) -> None:
        if self.layout not in LAYOUTS:
            raise ConfigurationError("procgen.layout", f"unknown layout {self.layout!r}")
        if self.lane_count < 1:
            raise ConfigurationError("procgen.lane_count", "must be at least 1")
        if self.agent_count < 0:
            raise ConfigurationError("procgen.agent_count", "must be non-negative")
        for name in ("lane_width", "route_length", "ego_cruise_speed", "duration", "dt"):
            if not getattr(self, name) > 0.0:
                raise ConfigurationError(f"procgen.{name}", "must be positive")
        ratio = self.duration / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError("procgen.duration", "must be an integral multiple of dt")
        if self.signalized and self.layout != "Intersection":
            raise ConfigurationError("procgen.signalized", "signals need the Intersection layout")

    @property
    def step_count(self) -> int:
        return round(self.duration / self.dt) + 1

    @property
    def road_ahead(self) -> float:
        """Road length ahead of the ego's start."""
        v = self.ego_cruise_speed
        return self.route_length + max(60.0, v * v / (2.0 * EGO_BRAKE) + 30.0)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, document: Mapping[str, Any]) -> ProcGenConfig:
        """
        :raises ConfigurationError: on unknown keys or invalid values.
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(document) - known)
        if unknown:
            raise ConfigurationError(f"procgen.{unknown[0]}", "unknown key")
        try:
            return cls(**document)
        except TypeError as error:
            raise ConfigurationError("procgen", str(error)) from None


# Road geometry

@dataclass(frozen=True, slots=True)
class _Centerline:
    """Reference line of the ego's road: straight, or straight then a left arc of ``radius``."""

    radius: float | None = None

    def pose(self, s: float, offset: float = 0.0) -> tuple[float, float, float]:
        """Position and heading at arclength ``s``, shifted ``offset`` to the left."""
        if self.radius is None or s <= 0.0:
            return s, offset, 0.0
        phi = s / self.radius
        r = self.radius - offset
        return r * math.sin(phi), self.radius - r * math.cos(phi), phi

    def points(self, start: float, end: float, offset: float) -> np.ndarray:
        count = max(2, math.ceil((end - start) / SAMPLE_SPACING) + 1)
        return np.array([self.pose(s, offset)[:2] for s in np.linspace(start, end, count)])


@dataclass(frozen=True, slots=True)
class _Lane:
    id: FeatureId
    points: np.ndarray
    successors: tuple[FeatureId, ...] = ()


@dataclass(frozen=True, slots=True)
class _Road:
    centerline: _Centerline
    lanes: tuple[_Lane, ...]
    boundaries: tuple[np.ndarray, ...]
    ring: np.ndarray
    stop_lines: tuple[tuple[FeatureId, np.ndarray], ...] = ()


def lane_id(index: int) -> FeatureId:
    return f"lane-{index}"


def _band(config: ProcGenConfig) -> tuple[float, float]:
    """Left and right edge offsets of the ego's road, relative to lane 0."""
    w = config.lane_width
    return 1.5 * w, -(config.lane_count - 1) * w - 0.5 * w


def _ego_road(config: ProcGenConfig, centerline: _Centerline) -> tuple[list[_Lane], list[np.ndarray], np.ndarray]:
    w = config.lane_width
    start, end = -BACK_EXTENT, config.road_ahead
    lanes = [_Lane(lane_id(i), centerline.points(start, end, -i * w)) for i in range(config.lane_count)]
    lanes.append(_Lane(lane_id(config.lane_count), centerline.points(start, end, w)[::-1].copy()))
    left, right = _band(config)
    left_edge = centerline.points(start, end, left)
    right_edge = centerline.points(start, end, right)
    ring = np.vstack([right_edge, left_edge[::-1], right_edge[:1]])
    return lanes, [left_edge, right_edge], ring


def _build_road(config: ProcGenConfig, rng: np.random.Generator) -> _Road:
    match config.layout:
        case "Straight":
            centerline = _Centerline()
        case "Arc":
            radius = max(float(rng.uniform(40.0, 80.0)), config.road_ahead / (1.5 * math.pi))
            centerline = _Centerline(radius)
        case "Intersection":
            centerline = _Centerline()
    lanes, boundaries, ring = _ego_road(config, centerline)
    if config.layout != "Intersection":
        return _Road(centerline, tuple(lanes), tuple(boundaries), ring)

    w = config.lane_width
    junction = config.route_length / 2.0
    left, right = _band(config)
    n = config.lane_count
    north = np.array([[junction + w / 2, -CROSS_EXTENT], [junction + w / 2, CROSS_EXTENT]])
    south = np.array([[junction - w / 2, CROSS_EXTENT], [junction - w / 2, -CROSS_EXTENT]])
    lanes += [_Lane(lane_id(n + 1), north), _Lane(lane_id(n + 2), south)]
    cross = shapely.box(junction - w, -CROSS_EXTENT, junction + w, CROSS_EXTENT)
    plus = shapely.union(shapely.Polygon(ring), cross)
    plus = shapely.simplify(plus, 1e-6)
    ring = np.asarray(plus.exterior.coords)
    stop_x = junction - w - 1.0
    stops = [
        (lane_id(i), np.array([[stop_x, -i * w - w / 2], [stop_x, -i * w + w / 2]]))
        for i in range(n)
    ]
    stops.append(
        (lane_id(n), np.array([[junction + w + 1.0, w / 2], [junction + w + 1.0, 1.5 * w]]))
    )
    stops.append(
        (lane_id(n + 1), np.array([[junction, right - 1.0], [junction + w, right - 1.0]]))
    )
    stops.append(
        (lane_id(n + 2), np.array([[junction - w, left + 1.0], [junction, left + 1.0]]))
    )
    boundaries += [
        np.array([[junction - w, -CROSS_EXTENT], [junction - w, CROSS_EXTENT]]),
        np.array([[junction + w, -CROSS_EXTENT], [junction + w, CROSS_EXTENT]]),
    ]
    return _Road(centerline, tuple(lanes), tuple(boundaries), ring, tuple(stops if config.signalized else ()))


# Ego log and signals

def ego_profile(config: ProcGenConfig, t: Seconds) -> tuple[float, float, float]:
    """Arclength, speed and acceleration of the expert ego at time ``t``."""
    v = config.ego_cruise_speed
    cruise_time = config.route_length / v
    if t <= cruise_time:
        return v * t, v, 0.0
    tau = min(t - cruise_time, v / EGO_BRAKE)
    speed = v - EGO_BRAKE * tau
    s = config.route_length + v * tau - 0.5 * EGO_BRAKE * tau * tau
    return s, speed, (-EGO_BRAKE if speed > 0.0 else 0.0)


def _ego_states(config: ProcGenConfig, road: _Road) -> list[EgoState]:
    states = []
    for step in range(config.step_count):
        s, speed, accel = ego_profile(config, step * config.dt)
        x, y, heading = road.centerline.pose(s)
        yaw = speed / road.centerline.radius if road.centerline.radius and s > 0.0 else 0.0
        states.append(EgoState(Pose2.at(x, y, heading), speed, accel, yaw))
    return states


def _signal_plan(config: ProcGenConfig, road: _Road) -> dict[FeatureId, tuple[SignalState, ...]]:
    """
    Signal sequences timed so the ego always meets green: the ego's road turns
    GO six seconds before the ego reaches its stop line, and the crossing road
    runs GO, WAIT and STOP phases that clear the junction first.
    """
    if not road.stop_lines:
        return {}
    stop_x = float(road.stop_lines[0][1][0, 0])
    target = stop_x - EGO_DIMENSIONS.length / 2.0
    arrival = next(
        (step * config.dt for step in range(config.step_count)
         if ego_profile(config, step * config.dt)[0] >= target),
        config.duration + 6.0,
    )
    go = max(0.0, arrival - 6.0)
    n = config.lane_count
    own: list[SignalState] = []
    crossing: list[SignalState] = []
    for step in range(config.step_count):
        t = step * config.dt
        own.append("GO" if t >= go else "STOP")
        crossing.append("GO" if t < go - 5.0 else "WAIT" if t < go - 2.0 else "STOP")
    plan = {lane_id(i): tuple(own) for i in range(n + 1)}
    plan[lane_id(n + 1)] = plan[lane_id(n + 2)] = tuple(crossing)
    return plan


# Background agents

type Role = Literal["leader", "follower", "other-lane", "opposing", "crossing"]


@dataclass(frozen=True, slots=True)
class _Placement:
    lane: FeatureId
    s: float
    speed: float
    desired: float


def _roles(config: ProcGenConfig) -> list[Role]:
    roles: list[Role] = ["leader", "follower", "opposing"]
    if config.lane_count > 1:
        roles.append("other-lane")
    if config.signalized:
        roles.append("crossing")
    return roles


def _place(
    config: ProcGenConfig, rng: np.random.Generator, role: Role, taken: Sequence[_Placement]
) -> _Placement | None:
    cruise = config.ego_cruise_speed
    n = config.lane_count
    desired = cruise * float(rng.uniform(0.8, 1.2))
    back = BACK_EXTENT
    match role:
        case "leader":
            lane, s = lane_id(0), back + float(rng.uniform(15.0, 40.0))
            desired = cruise + float(rng.uniform(1.0, 3.0))
        case "follower":
            lane, s = lane_id(0), back - float(rng.uniform(12.0, 30.0))
        case "other-lane":
            lane, s = lane_id(int(rng.integers(1, n))), back + float(rng.uniform(-30.0, 60.0))
        case "opposing":
            lane, s = lane_id(n), float(rng.uniform(20.0, config.road_ahead))
        case "crossing":
            lane = lane_id(n + 1 + int(rng.integers(0, 2)))
            s = float(rng.uniform(5.0, 40.0))
    for other in taken:
        if other.lane == lane and abs(other.s - s) < SAME_LANE_SPACING:
            return None
    if lane == lane_id(0) and abs(s - back) < 12.0:
        return None
    return _Placement(lane, s, desired * float(rng.uniform(0.6, 1.0)), desired)


def _initial_agents(
    config: ProcGenConfig, road: _Road, roadmap: RoadMap, rng: np.random.Generator
) -> list[tuple[AgentState, IdmParams]] | None:
    roles = _roles(config)
    placed: list[_Placement] = []
    leader_used = False
    for _ in range(config.agent_count):
        placement = None
        for _ in range(MAX_ATTEMPTS):
            role = roles[int(rng.integers(len(roles)))]
            if role == "leader" and leader_used:
                continue
            placement = _place(config, rng, role, placed)
            if placement is not None:
                leader_used = leader_used or role == "leader"
                break
        if placement is None:
            return None
        placed.append(placement)
    agents = []
    for k, placement in enumerate(placed):
        path = roadmap.lane_path(placement.lane).polyline
        position, heading = path.point_at(placement.s)
        agent = AgentState(
            object_id=f"agent-{k}",
            pose=Pose2(position, heading),
            speed=placement.speed,
            accel=0.0,
            dims=AGENT_DIMENSIONS,
            lane_id=placement.lane,
        )
        agents.append((agent, IdmParams(v0=placement.desired)))
    return agents


def _state(agent: AgentState) -> TrackState:
    return TrackState(agent.pose, agent.velocity, True)


def _ego_track(states: Sequence[EgoState]) -> Track:
    return Track(
        "ego", "Ego", EGO_DIMENSIONS,
        tuple(TrackState(s.pose, s.velocity, True) for s in states),
    )


def _features(road: _Road, config: ProcGenConfig) -> tuple[MapFeature, ...]:
    def polyline(points: Iterable[Iterable[float]]) -> tuple[Vec2, ...]:
        return tuple(Vec2(float(x), float(y)) for x, y in points)

    limit = max(10.0, config.ego_cruise_speed + 5.0)
    features = [
        MapFeature(lane.id, "LaneCenter", polyline(lane.points), FeatureAttributes(limit, lane.successors))
        for lane in road.lanes
    ]
    features += [
        MapFeature(f"boundary-{i}", "RoadBoundary", polyline(points))
        for i, points in enumerate(road.boundaries)
    ]
    ring = polyline(road.ring)
    if ring[0] != ring[-1]:
        ring = (*ring, ring[0])
    features.append(MapFeature("drivable-0", "DrivableArea", ring))
    features += [
        MapFeature(f"stop-{lane}", "StopLine", polyline(points), FeatureAttributes(lane_id=lane))
        for lane, points in road.stop_lines
    ]
    return tuple(features)


def _overlap_free(tracks: Sequence[Track], step_count: int) -> bool:
    m = len(tracks)
    if m < 2:
        return True
    first, second = np.triu_indices(m, k=1)
    lengths = np.array([t.dims.length for t in tracks])
    widths = np.array([t.dims.width for t in tracks])
    for step in range(step_count):
        states = [t.states[step] for t in tracks]
        corners = footprint_corners(
            np.array([s.pose.position.x for s in states]),
            np.array([s.pose.position.y for s in states]),
            np.array([s.pose.heading for s in states]),
            lengths,
            widths,
        )
        if rectangles_overlap(corners[first], corners[second]).any():
            return False
    return True


def _attempt(config: ProcGenConfig, seed: int, attempt: int) -> ScenarioDescription | None:
    rng = make_rng(seed, stream_key("procgen"), attempt)
    road = _build_road(config, rng)
    features = _features(road, config)
    roadmap = RoadMap(features)
    ego = _ego_states(config, road)
    sequences = _signal_plan(config, road)
    schedule = SignalSchedule(sequences)
    dynamic = tuple(DynamicMapState(lane, seq) for lane, seq in sequences.items())
    scenario = ScenarioDescription(
        id=f"pg-{config.layout.lower()}-{seed & 0xFFFFFFFFFFFFFFFF:016x}",
        dt=config.dt,
        step_count=config.step_count,
        anchor=Vec2(0.0, 0.0),
        ego_track_id="ego",
        map_features=features,
        tracks=(_ego_track(ego),),
        dynamic_states=dynamic,
        source="procgen",
    )
    initial = _initial_agents(config, road, roadmap, rng)
    if initial is None:
        return None
    params = {agent.object_id: p for agent, p in initial}
    agents = [agent for agent, _ in initial]
    records = {agent.object_id: [_state(agent)] for agent in agents}
    for step in range(config.step_count - 1):
        world = WorldState(
            step=step,
            time=step * config.dt,
            ego=ego[step],
            agents=tuple(agents),
            signals=schedule.at(step),
            roadmap=roadmap,
            schedule=schedule,
            scenario=scenario,
            sim_dt=config.dt,
        )
        agents = [idm_agent_step(world, a, params[a.object_id], config.dt) for a in agents]
        for agent in agents:
            records[agent.object_id].append(_state(agent))
    tracks = (
        scenario.tracks[0],
        *(Track(a_id, "Vehicle", AGENT_DIMENSIONS, tuple(states)) for a_id, states in records.items()),
    )
    if not _overlap_free(tracks, config.step_count):
        return None
    return ScenarioDescription(
        id=scenario.id,
        dt=scenario.dt,
        step_count=scenario.step_count,
        anchor=scenario.anchor,
        ego_track_id=scenario.ego_track_id,
        map_features=features,
        tracks=tracks,
        dynamic_states=dynamic,
        source="procgen",
    )


def generate_scenario(config: ProcGenConfig, seed: int) -> ScenarioDescription:
    """
    A deterministic synthetic scenario for ``(config, seed)``.

    :raises GenerationError: if no overlap-free placement is found.
    """
    for attempt in range(MAX_ATTEMPTS):
        scenario = _attempt(config, seed, attempt)
        if scenario is not None:
            if attempt:
                logger.debug("seed %d placed after %d retries", seed, attempt)
            return scenario
    raise GenerationError(
        f"no overlap-free {config.layout} scenario for seed {seed} after {MAX_ATTEMPTS} attempts"
    )


def generate_suite(config: ProcGenConfig, n: int, seed: int) -> list[ScenarioDescription]:
    """
    ``n`` scenarios with seeds ``seed, seed + 1, ...``.

    :raises ConfigurationError: if ``n`` is below 1.
    """
    if n < 1:
        raise ConfigurationError("n", "must be at least 1")
    suite = [generate_scenario(config, seed + index) for index in range(n)]
    logger.info("generated %d %s scenarios from seed %d", n, config.layout, seed)
    return suite
