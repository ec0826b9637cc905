"""
The unified scenario description: map polylines, object tracks with validity
masks, traffic-signal sequences and anchoring metadata.

Scenarios are immutable; every transformation returns a new scenario.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace
from typing import Final, Literal

import shapely

from .errors import AnchoringError, ResampleError, ValidationError
from .geometry import ORIGIN, Pose2, Seconds, Vec2, interpolate_heading

type FeatureKind = Literal[
    "LaneCenter", "RoadBoundary", "Crosswalk", "StopLine", "DrivableArea"
]
"""Kinds of map feature."""

FEATURE_KINDS: Final[tuple[FeatureKind, ...]] = (
    "LaneCenter", "RoadBoundary", "Crosswalk", "StopLine", "DrivableArea",
)

type ObjectType = Literal["Ego", "Vehicle", "Pedestrian", "Cyclist"]
"""Kinds of tracked object."""

OBJECT_TYPES: Final[tuple[ObjectType, ...]] = ("Ego", "Vehicle", "Pedestrian", "Cyclist")

type SignalState = Literal["STOP", "WAIT", "GO"]
"""Traffic-signal state of a lane at one step."""

SIGNAL_STATES: Final[tuple[SignalState, ...]] = ("STOP", "WAIT", "GO")

type Handedness = Literal["Left", "Right"]
"""Chirality of a coordinate frame."""

HANDEDNESS: Final[tuple[Handedness, ...]] = ("Left", "Right")

type FeatureId = str
"""A type alias for documentation purposes."""

type ObjectId = str
"""A type alias for documentation purposes."""


@dataclass(frozen=True, slots=True)
class FeatureAttributes:
    """Optional attributes of a map feature."""

    speed_limit: float | None = None
    successors: tuple[FeatureId, ...] = ()
    lane_id: FeatureId | None = None
    """For a StopLine, the LaneCenter whose signal governs it."""


@dataclass(frozen=True, slots=True)
class MapFeature:
    id: FeatureId
    kind: FeatureKind
    polyline: tuple[Vec2, ...]
    attributes: FeatureAttributes | None = None


@dataclass(frozen=True, slots=True)
class TrackState:
    """One sample of a track; pose and velocity are meaningless when ``valid`` is false."""

    pose: Pose2
    velocity: Vec2
    valid: bool = True


INVALID_STATE: Final = TrackState(Pose2(ORIGIN, 0.0), ORIGIN, False)


@dataclass(frozen=True, slots=True)
class Dimensions:
    length: float
    width: float
    height: float


@dataclass(frozen=True, slots=True)
class Track:
    object_id: ObjectId
    object_type: ObjectType
    dims: Dimensions
    states: tuple[TrackState, ...]

    def valid_count(self) -> int:
        return sum(1 for state in self.states if state.valid)


@dataclass(frozen=True, slots=True)
class DynamicMapState:
    lane_id: FeatureId
    signal_sequence: tuple[SignalState, ...]


@dataclass(frozen=True, slots=True)
class ScenarioDescription:
    """A complete episode description, anchored on the ego's position at step 0."""

    id: str
    dt: Seconds
    step_count: int
    anchor: Vec2
    ego_track_id: ObjectId
    map_features: tuple[MapFeature, ...]
    tracks: tuple[Track, ...]
    dynamic_states: tuple[DynamicMapState, ...] = ()
    source: str = ""
    handedness: Handedness = "Right"
    _tracks_by_id: dict[ObjectId, Track] = field(
        init=False, repr=False, compare=False, hash=False
    )

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_tracks_by_id", {track.object_id: track for track in self.tracks}
        )

    @property
    def ego_track(self) -> Track:
        """The ego's track.

        :raises ValidationError: if the scenario has no ego track.
        """
        try:
            return self._tracks_by_id[self.ego_track_id]
        except KeyError:
            raise ValidationError("ego_track_id", "no track with the ego id") from None

    def track(self, object_id: ObjectId) -> Track:
        return self._tracks_by_id[object_id]

    def features(self, kind: FeatureKind) -> tuple[MapFeature, ...]:
        return tuple(f for f in self.map_features if f.kind == kind)

    @property
    def duration(self) -> Seconds:
        return (self.step_count - 1) * self.dt


# Validation

def validate_scenario(
    scenario: ScenarioDescription, *, require_anchored: bool = True
) -> None:
    """
    Checks every invariant of the scenario model.

    :raises ValidationError: naming the first offending field.
    """
    if not (math.isfinite(scenario.dt) and scenario.dt > 0.0):
        raise ValidationError("dt", f"must be positive, got {scenario.dt}")
    if scenario.step_count < 1:
        raise ValidationError("step_count", "must be at least 1")
    if scenario.handedness != "Right":
        raise ValidationError("handedness", "stored data must be right-handed")
    feature_ids: set[FeatureId] = set()
    lane_ids: set[FeatureId] = set()
    for i, feature in enumerate(scenario.map_features):
        _validate_feature(feature, f"map_features[{i}]")
        if feature.id in feature_ids:
            raise ValidationError(f"map_features[{i}].id", f"duplicate id {feature.id!r}")
        feature_ids.add(feature.id)
        if feature.kind == "LaneCenter":
            lane_ids.add(feature.id)
    ego_tracks = [t for t in scenario.tracks if t.object_id == scenario.ego_track_id]
    if len(ego_tracks) != 1:
        raise ValidationError(
            "tracks", f"expected exactly one ego track, found {len(ego_tracks)}"
        )
    object_ids: set[ObjectId] = set()
    for i, track in enumerate(scenario.tracks):
        where = f"tracks[{i}]"
        if track.object_id in object_ids:
            raise ValidationError(f"{where}.object_id", "duplicate object id")
        object_ids.add(track.object_id)
        dims = track.dims
        for name, value in (("length", dims.length), ("width", dims.width), ("height", dims.height)):
            if not (math.isfinite(value) and value > 0.0):
                raise ValidationError(f"{where}.dims.{name}", "must be strictly positive")
        if len(track.states) != scenario.step_count:
            raise ValidationError(
                f"{where}.states",
                f"length {len(track.states)} differs from step_count {scenario.step_count}",
            )
    ego_start = ego_tracks[0].states[0]
    if not ego_start.valid:
        raise ValidationError("tracks.ego.states[0]", "ego must be valid at step 0")
    if require_anchored and ego_start.pose.position != ORIGIN:
        raise ValidationError(
            "tracks.ego.states[0].pose.position", "ego must start at the origin"
        )
    for i, dynamic in enumerate(scenario.dynamic_states):
        where = f"dynamic_states[{i}]"
        if dynamic.lane_id not in lane_ids:
            raise ValidationError(f"{where}.lane_id", f"unknown lane {dynamic.lane_id!r}")
        if len(dynamic.signal_sequence) != scenario.step_count:
            raise ValidationError(f"{where}.signal_sequence", "length differs from step_count")


def _validate_feature(feature: MapFeature, where: str) -> None:
    if len(feature.polyline) < 2:
        raise ValidationError(f"{where}.polyline", "needs at least 2 points")
    if feature.kind != "DrivableArea":
        return
    if feature.polyline[0] != feature.polyline[-1]:
        raise ValidationError(f"{where}.polyline", "drivable-area ring must be closed")
    if len(feature.polyline) < 4:
        raise ValidationError(f"{where}.polyline", "drivable-area ring needs 3 distinct points")
    ring = shapely.LinearRing([p.as_tuple() for p in feature.polyline])
    if not ring.is_simple:
        raise ValidationError(f"{where}.polyline", "drivable-area ring self-intersects")


# Coordinate normalization

def _map_points(
    scenario: ScenarioDescription,
    point_fn: Callable[[Vec2], Vec2],
    pose_fn: Callable[[Pose2], Pose2],
    velocity_fn: Callable[[Vec2], Vec2],
) -> tuple[tuple[MapFeature, ...], tuple[Track, ...]]:
    features = tuple(
        replace(f, polyline=tuple(point_fn(p) for p in f.polyline))
        for f in scenario.map_features
    )
    tracks = tuple(
        replace(
            t,
            states=tuple(
                TrackState(pose_fn(s.pose), velocity_fn(s.velocity), True) if s.valid else s
                for s in t.states
            ),
        )
        for t in scenario.tracks
    )
    return features, tracks


def normalize_chirality(
    scenario: ScenarioDescription, source_handedness: Handedness
) -> ScenarioDescription:
    """
    Converts a scenario recorded in a left-handed frame into the right-handed
    convention by reflecting about the x-axis: y-coordinates, headings and
    lateral velocities change sign. Right-handed input passes through.
    """
    if source_handedness == "Right":
        return replace(scenario, handedness="Right")

    def reflect(p: Vec2) -> Vec2:
        return Vec2(p.x, -p.y)

    features, tracks = _map_points(
        scenario,
        reflect,
        lambda pose: Pose2(reflect(pose.position), -pose.heading),
        reflect,
    )
    return replace(
        scenario,
        map_features=features,
        tracks=tracks,
        anchor=reflect(scenario.anchor),
        handedness="Right",
    )


def anchor_scenario(scenario: ScenarioDescription) -> ScenarioDescription:
    """
    Translates the scenario so that the ego starts at the origin.

    :raises AnchoringError: if the ego is invalid at step 0.
    """
    start = scenario.ego_track.states[0]
    if not start.valid:
        raise AnchoringError(f"scenario {scenario.id}: ego invalid at step 0")
    offset = start.pose.position
    if offset == ORIGIN:
        return scenario

    def shift(p: Vec2) -> Vec2:
        return p - offset

    features, tracks = _map_points(
        scenario, shift, lambda pose: Pose2(shift(pose.position), pose.heading), lambda v: v
    )
    return replace(
        scenario, map_features=features, tracks=tracks, anchor=scenario.anchor + offset
    )


# Resampling

_EPS: Final = 1e-9


def _target_times(duration: Seconds, target_dt: Seconds) -> list[Seconds]:
    count = math.floor(duration / target_dt + _EPS) + 1
    return [j * target_dt for j in range(count)]


def resample_track(track: Track, source_dt: Seconds, target_dt: Seconds = 0.1) -> Track:
    """
    Resamples a track to a new sample period.

    Positions and velocities are interpolated linearly, headings along the
    shortest arc. A sample that falls strictly between two source states is
    valid only if both are; samples never bridge invalid gaps.

    :raises ResampleError: if the track has fewer than 2 valid states.
    """
    if source_dt <= 0.0 or target_dt <= 0.0:
        raise ResampleError("sample periods must be positive")
    if track.valid_count() < 2:
        raise ResampleError(f"track {track.object_id} has fewer than 2 valid states")
    states = track.states
    duration = (len(states) - 1) * source_dt
    resampled: list[TrackState] = []
    for t in _target_times(duration, target_dt):
        ratio = t / source_dt
        i = min(math.floor(ratio + _EPS), len(states) - 1)
        alpha = ratio - i
        if alpha < _EPS or i == len(states) - 1:
            resampled.append(states[i])
            continue
        s0, s1 = states[i], states[i + 1]
        if not (s0.valid and s1.valid):
            resampled.append(INVALID_STATE)
            continue
        position = s0.pose.position + (s1.pose.position - s0.pose.position) * alpha
        velocity = s0.velocity + (s1.velocity - s0.velocity) * alpha
        heading = interpolate_heading(s0.pose.heading, s1.pose.heading, alpha)
        resampled.append(TrackState(Pose2(position, heading), velocity, True))
    return replace(track, states=tuple(resampled))


def upsample_scenario(
    scenario: ScenarioDescription, target_dt: Seconds = 0.1
) -> ScenarioDescription:
    """
    Resamples every track of a scenario to ``target_dt`` (e.g. 2 Hz logs to 10 Hz).

    Tracks with fewer than two valid states become fully invalid; signal
    sequences are held between source samples.
    """
    source_dt = scenario.dt
    duration = (scenario.step_count - 1) * source_dt
    times = _target_times(duration, target_dt)
    tracks: list[Track] = []
    for track in scenario.tracks:
        if track.valid_count() >= 2:
            tracks.append(resample_track(track, source_dt, target_dt))
        else:
            tracks.append(replace(track, states=(INVALID_STATE,) * len(times)))
    dynamic = tuple(
        replace(
            d,
            signal_sequence=tuple(
                d.signal_sequence[min(math.floor(t / source_dt + _EPS), scenario.step_count - 1)]
                for t in times
            ),
        )
        for d in scenario.dynamic_states
    )
    return replace(
        scenario,
        dt=target_dt,
        step_count=len(times),
        tracks=tuple(tracks),
        dynamic_states=dynamic,
    )


def agent_tracks(scenario: ScenarioDescription) -> Iterable[Track]:
    """All non-ego tracks, in document order."""
    return (t for t in scenario.tracks if t.object_id != scenario.ego_track_id)
