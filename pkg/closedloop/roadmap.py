"""
The map handle: nearest-lane queries, lane paths chained through successor
links, the drivable-area union and stop lines.

A :class:`RoadMap` is immutable after construction and safe to share.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from types import MappingProxyType
from typing import Final, Self, final

import numpy as np
import shapely

from .errors import LaneQueryError
from .geometry import BoolArray, FloatArray, Meters, Radians, Vec2, as_array
from .scenario import FeatureId, MapFeature

logger = logging.getLogger(__name__)

DEFAULT_SPEED_LIMIT: Final = 10.0
"""Fallback lane speed limit, in m/s."""

MAX_PATH_LENGTH: Final = 600.0
"""Successor chaining stops once a lane path is this long."""


@dataclass(frozen=True, slots=True)
class LaneQuery:
    """Result of a nearest-lane query."""

    lane_id: FeatureId
    heading: Radians
    lateral_offset: Meters
    arclength: Meters


@dataclass(frozen=True, slots=True)
class StopLine:
    feature_id: FeatureId
    lane_id: FeatureId | None
    start: Vec2
    end: Vec2


@final
class Polyline:
    """An open polyline with arclength projection and interpolation."""

    __points: FloatArray
    __starts: FloatArray
    __deltas: FloatArray
    __lengths: FloatArray
    __offsets: FloatArray

    def __new__(cls, points: FloatArray) -> Self:
        self = object.__new__(cls)
        deltas = np.diff(points, axis=0)
        lengths = np.linalg.norm(deltas, axis=1)
        keep = lengths > 1e-12
        self.__points = points
        self.__starts = points[:-1][keep]
        self.__deltas = deltas[keep]
        self.__lengths = lengths[keep]
        self.__offsets = np.concatenate([[0.0], np.cumsum(self.__lengths)[:-1]])
        return self

    @property
    def points(self) -> FloatArray:
        return self.__points

    @property
    def length(self) -> Meters:
        return float(self.__offsets[-1] + self.__lengths[-1]) if len(self.__lengths) else 0.0

    @property
    def segment_count(self) -> int:
        return len(self.__lengths)

    def project_many(self, points: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
        """
        Projects (n, 2) points onto the polyline.

        :returns: arclength, signed lateral offset (left positive), unsigned
                  distance and the index of the nearest segment, each of shape (n,).
        """
        rel = points[:, None, :] - self.__starts[None, :, :]
        t = np.einsum("nsd,sd->ns", rel, self.__deltas) / (self.__lengths**2)[None, :]
        t = np.clip(t, 0.0, 1.0)
        foot = self.__starts[None, :, :] + t[..., None] * self.__deltas[None, :, :]
        dist = np.linalg.norm(points[:, None, :] - foot, axis=2)
        seg = np.argmin(dist, axis=1)
        rows = np.arange(len(points))
        d = self.__deltas[seg]
        lateral = (d[:, 0] * rel[rows, seg, 1] - d[:, 1] * rel[rows, seg, 0]) / self.__lengths[seg]
        arclength = self.__offsets[seg] + t[rows, seg] * self.__lengths[seg]
        return arclength, lateral, dist[rows, seg], seg

    def project(self, point: Vec2) -> tuple[Meters, Meters, Meters]:
        """Arclength, signed lateral offset and unsigned distance of one point."""
        s, lat, dist, _ = self.project_many(np.array([[point.x, point.y]]))
        return float(s[0]), float(lat[0]), float(dist[0])

    def segment_heading(self, index: int) -> Radians:
        d = self.__deltas[index]
        return math.atan2(float(d[1]), float(d[0]))

    def segment_headings(self, indices: FloatArray | np.ndarray) -> FloatArray:
        d = self.__deltas[indices]
        return np.arctan2(d[:, 1], d[:, 0])

    def point_at(self, s: Meters) -> tuple[Vec2, Radians]:
        """Position and tangent heading at arclength ``s``, extrapolating past both ends."""
        index = int(np.searchsorted(self.__offsets, s, side="right") - 1)
        index = min(max(index, 0), len(self.__lengths) - 1)
        local = s - float(self.__offsets[index])
        d = self.__deltas[index] / self.__lengths[index]
        start = self.__starts[index]
        return (
            Vec2(float(start[0] + d[0] * local), float(start[1] + d[1] * local)),
            math.atan2(float(d[1]), float(d[0])),
        )


@final
class LanePath:
    """A lane followed by its chain of first successors, as one polyline."""

    __lane_ids: tuple[FeatureId, ...]
    __lane_starts: tuple[Meters, ...]
    __polyline: Polyline

    def __new__(cls, lanes: Sequence[tuple[FeatureId, FloatArray]]) -> Self:
        self = object.__new__(cls)
        chunks: list[FloatArray] = []
        starts: list[Meters] = []
        total = 0.0
        for _, points in lanes:
            if chunks:
                total += float(np.linalg.norm(points[0] - chunks[-1][-1]))
            starts.append(total)
            total += float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())
            chunks.append(points)
        self.__lane_ids = tuple(lane_id for lane_id, _ in lanes)
        self.__lane_starts = tuple(starts)
        self.__polyline = Polyline(np.concatenate(chunks, axis=0))
        return self

    @property
    def polyline(self) -> Polyline:
        return self.__polyline

    @property
    def length(self) -> Meters:
        return self.__polyline.length

    @property
    def lane_ids(self) -> tuple[FeatureId, ...]:
        return self.__lane_ids

    def lane_at(self, s: Meters) -> FeatureId | None:
        """The lane containing arclength ``s``, or None past the end of the chain."""
        if s > self.length:
            return None
        index = 0
        for i, start in enumerate(self.__lane_starts):
            if s >= start:
                index = i
        return self.__lane_ids[index]

    def lane_start(self, lane_id: FeatureId) -> Meters:
        return self.__lane_starts[self.__lane_ids.index(lane_id)]


@final
class RoadMap:
    """Read-only queries over the static map of a scenario."""

    __lanes: tuple[MapFeature, ...]
    __lane_index: Mapping[FeatureId, int]
    __lane_polylines: tuple[Polyline, ...]
    __paths: Mapping[FeatureId, LanePath]
    __seg_starts: FloatArray
    __seg_deltas: FloatArray
    __seg_len2: FloatArray
    __seg_lane: np.ndarray
    __seg_offsets: FloatArray
    __drivable: shapely.Geometry | None
    __stop_lines: tuple[StopLine, ...]

    def __new__(cls, features: Iterable[MapFeature]) -> Self:
        self = object.__new__(cls)
        features = tuple(features)
        lanes = tuple(f for f in features if f.kind == "LaneCenter")
        self.__lanes = lanes
        self.__lane_index = MappingProxyType({lane.id: i for i, lane in enumerate(lanes)})
        arrays = [as_array(list(lane.polyline)) for lane in lanes]
        self.__lane_polylines = tuple(Polyline(a) for a in arrays)
        starts, deltas, lane_of, offsets = [], [], [], []
        for i, a in enumerate(arrays):
            d = np.diff(a, axis=0)
            lengths = np.linalg.norm(d, axis=1)
            keep = lengths > 1e-12
            starts.append(a[:-1][keep])
            deltas.append(d[keep])
            lane_of.append(np.full(int(keep.sum()), i))
            offsets.append(np.concatenate([[0.0], np.cumsum(lengths[keep])[:-1]]))
        if lanes:
            self.__seg_starts = np.concatenate(starts)
            self.__seg_deltas = np.concatenate(deltas)
            self.__seg_lane = np.concatenate(lane_of)
            self.__seg_offsets = np.concatenate(offsets)
        else:
            self.__seg_starts = np.zeros((0, 2))
            self.__seg_deltas = np.zeros((0, 2))
            self.__seg_lane = np.zeros(0, dtype=np.int64)
            self.__seg_offsets = np.zeros(0)
        self.__seg_len2 = (self.__seg_deltas**2).sum(axis=1)
        self.__paths = MappingProxyType({lane.id: self.__chain(lane.id) for lane in lanes})
        rings = [
            shapely.Polygon([p.as_tuple() for p in f.polyline])
            for f in features
            if f.kind == "DrivableArea"
        ]
        if rings:
            area = shapely.union_all(rings)
            shapely.prepare(area)
            self.__drivable = area
        else:
            self.__drivable = None
        self.__stop_lines = tuple(
            StopLine(
                f.id,
                f.attributes.lane_id if f.attributes is not None else None,
                f.polyline[0],
                f.polyline[-1],
            )
            for f in features
            if f.kind == "StopLine"
        )
        return self

    def __chain(self, lane_id: FeatureId) -> LanePath:
        chain: list[tuple[FeatureId, FloatArray]] = []
        seen: set[FeatureId] = set()
        current: FeatureId | None = lane_id
        total = 0.0
        while current is not None and current not in seen and total < MAX_PATH_LENGTH:
            index = self.__lane_index.get(current)
            if index is None:
                break
            seen.add(current)
            polyline = self.__lane_polylines[index]
            chain.append((current, polyline.points))
            total += polyline.length
            attributes = self.__lanes[index].attributes
            current = attributes.successors[0] if attributes and attributes.successors else None
        return LanePath(chain)

    # Lanes

    @property
    def lane_ids(self) -> tuple[FeatureId, ...]:
        return tuple(lane.id for lane in self.__lanes)

    def has_lanes(self) -> bool:
        return bool(self.__lanes)

    def lane_polyline(self, lane_id: FeatureId) -> Polyline:
        return self.__lane_polylines[self.__lane_index[lane_id]]

    def lane_path(self, lane_id: FeatureId) -> LanePath:
        """The lane chained with its first successors."""
        return self.__paths[lane_id]

    def speed_limit(self, lane_id: FeatureId) -> float:
        attributes = self.__lanes[self.__lane_index[lane_id]].attributes
        if attributes is None or attributes.speed_limit is None:
            return DEFAULT_SPEED_LIMIT
        return attributes.speed_limit

    def query_lanes(self, points: FloatArray) -> tuple[np.ndarray, FloatArray, FloatArray, FloatArray]:
        """
        Vectorized nearest-lane query for (n, 2) points.

        :returns: lane indices, lane headings, signed lateral offsets and
                  arclengths, each of shape (n,).
        :raises LaneQueryError: if the map has no lanes.
        """
        if not self.__lanes:
            raise LaneQueryError("map has no LaneCenter features")
        rel = points[:, None, :] - self.__seg_starts[None, :, :]
        t = np.clip(
            np.einsum("nsd,sd->ns", rel, self.__seg_deltas) / self.__seg_len2[None, :], 0.0, 1.0
        )
        foot = self.__seg_starts[None] + t[..., None] * self.__seg_deltas[None]
        dist = np.linalg.norm(points[:, None, :] - foot, axis=2)
        seg = np.argmin(dist, axis=1)
        rows = np.arange(len(points))
        d = self.__seg_deltas[seg]
        length = np.sqrt(self.__seg_len2[seg])
        lateral = (d[:, 0] * rel[rows, seg, 1] - d[:, 1] * rel[rows, seg, 0]) / length
        heading = np.arctan2(d[:, 1], d[:, 0])
        arclength = self.__seg_offsets[seg] + t[rows, seg] * length
        return self.__seg_lane[seg], heading, lateral, arclength

    def query_lane(self, position: Vec2) -> LaneQuery:
        """
        The lane centerline nearest to ``position``; ties go to the earlier lane.

        :raises LaneQueryError: if the map has no lanes.
        """
        lane, heading, lateral, arclength = self.query_lanes(np.array([[position.x, position.y]]))
        return LaneQuery(
            self.__lanes[int(lane[0])].id, float(heading[0]), float(lateral[0]), float(arclength[0])
        )

    def lane_id_at(self, index: int) -> FeatureId:
        return self.__lanes[index].id

    # Drivable area and stop lines

    @property
    def has_drivable_area(self) -> bool:
        return self.__drivable is not None

    def covers(self, points: FloatArray) -> BoolArray:
        """Whether each (n, 2) point lies in the drivable area, boundary included."""
        if self.__drivable is None:
            return np.ones(len(points), dtype=np.bool_)
        return np.asarray(shapely.covers(self.__drivable, shapely.points(points)), dtype=np.bool_)

    @property
    def stop_lines(self) -> tuple[StopLine, ...]:
        return self.__stop_lines

    def stop_lines_for(self, lane_ids: Iterable[FeatureId]) -> tuple[StopLine, ...]:
        wanted = set(lane_ids)
        return tuple(line for line in self.__stop_lines if line.lane_id in wanted)


def query_lane(map_features: Iterable[MapFeature], position: Vec2) -> LaneQuery:
    """
    Nearest-lane query against a collection of map features.

    :raises LaneQueryError: if there are no LaneCenter features.
    """
    return RoadMap(map_features).query_lane(position)
