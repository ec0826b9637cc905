"""Critical constraints: collisions, drivable area, red lights and driving direction."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence

import numpy as np

from ..geometry import Footprint, Radians, Vec2, angle_diff, rectangles_overlap, segments_intersect
from ..roadmap import RoadMap, StopLine
from ..scenario import FeatureId, SignalState

STATIONARY_SPEED = 0.1
"""Below this speed the ego is never at fault."""

REAR_MARGIN = 0.5


def _rear_struck(ego: Footprint, ego_velocity: Vec2, other: Footprint, other_velocity: Vec2) -> bool:
    local = ego.pose.to_local(other.pose.position)
    behind = local.x < -ego.length / 2.0 + REAR_MARGIN and abs(local.y) < abs(local.x)
    closing = (other_velocity - ego_velocity).dot(ego.pose.forward()) > 0.0
    return behind and closing


def no_at_fault_collision(
    ego: Footprint,
    ego_velocity: Vec2,
    agents: Sequence[tuple[Footprint, Vec2]],
    *,
    strict: bool = False,
) -> bool:
    """
    Whether the ego is free of at-fault collisions. An overlap is not the
    ego's fault when the ego is stationary, or when the other object hits the
    ego's rear face while closing on it. With ``strict`` every overlap fails.
    """
    if not agents:
        return True
    others = np.stack([footprint.corners() for footprint, _ in agents])
    mine = np.broadcast_to(ego.corners(), others.shape)
    hits = np.flatnonzero(rectangles_overlap(mine, others))
    if hits.size == 0:
        return True
    if strict:
        return False
    if ego_velocity.norm() < STATIONARY_SPEED:
        return True
    return all(_rear_struck(ego, ego_velocity, *agents[i]) for i in hits)


def drivable_area_compliance(ego: Footprint, roadmap: RoadMap) -> bool:
    """All four footprint corners lie in the drivable area, boundary included."""
    return bool(roadmap.covers(ego.corners()).all())


def traffic_light_compliance(
    start: Vec2,
    end: Vec2,
    stop_lines: Sequence[StopLine],
    signals: Mapping[FeatureId, SignalState],
) -> bool:
    """False iff the step from ``start`` to ``end`` crosses a stop line whose lane shows STOP."""
    if start == end:
        return True
    for line in stop_lines:
        if line.lane_id is None or signals.get(line.lane_id) != "STOP":
            continue
        if segments_intersect(start, end, line.start, line.end):
            return False
    return True


def driving_direction_compliance(ego_heading: Radians, lane_heading: Radians) -> bool:
    return abs(angle_diff(ego_heading, lane_heading)) <= math.pi / 2
