"""
Soft quality features: lane keeping, time-to-collision surrogates, comfort
and ego progress.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, fields
from typing import Final

import numpy as np

from ..errors import ValidationError
from ..geometry import (
    FloatArray,
    Meters,
    Radians,
    Seconds,
    footprint_corners,
    rectangles_overlap,
    support_extent,
    wrap_angles,
)
from .scoring import PROGRESS_EPSILON, ComfortThresholds

ACCEL_EPSILON: Final = 1e-9

MIN_SEGMENT: Final = 1e-3
"""Segments shorter than this keep the previous heading."""

TTC_RESOLUTION: Final = 0.1


def lane_keeping(
    offsets: Sequence[float], dt: Seconds, threshold: Meters = 0.5, window: Seconds = 2.0
) -> float:
    """
    1.0 unless the lateral offset exceeded ``threshold`` at every sample of a
    full trailing ``window``.
    """
    count = max(1, round(window / dt))
    if len(offsets) < count:
        return 1.0
    return 0.0 if all(abs(v) > threshold for v in offsets[-count:]) else 1.0


def ttc_constant_velocity(dtc: Meters, v_rel: float) -> Seconds | None:
    """Distance to collision over closing speed; None when not closing."""
    if dtc <= 0.0:
        return 0.0
    return dtc / v_rel if v_rel > 0.0 else None


def mttc(dtc: Meters, v_rel: float, a_rel: float) -> Seconds | None:
    """
    Modified time to collision: the smallest positive root of
    ``a_rel/2 t² + v_rel t - dtc = 0``, with closing speed and acceleration
    positive toward the conflict. None when the gap never closes.

    :raises ValidationError: if ``dtc`` is negative.
    """
    if dtc < 0.0:
        raise ValidationError("dtc", f"must be non-negative, got {dtc}")
    if dtc == 0.0:
        return 0.0
    if abs(a_rel) < ACCEL_EPSILON:
        return ttc_constant_velocity(dtc, v_rel)
    a, b, c = a_rel / 2.0, v_rel, -dtc
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return None
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = [r for r in (q / a, c / q if q != 0.0 else -1.0) if r > 0.0]
    return min(roots) if roots else None


@dataclass(frozen=True, slots=True)
class MovingBox:
    """A rectangle moving with constant along-heading acceleration and turn rate."""

    x: Meters
    y: Meters
    heading: Radians
    speed: float
    accel: float
    length: Meters
    width: Meters
    yaw_rate: float = 0.0


def _boxes(boxes: Sequence[MovingBox]) -> dict[str, FloatArray]:
    return {
        f.name: np.array([getattr(b, f.name) for b in boxes], dtype=np.float64)
        for f in fields(MovingBox)
    }


def propagate_boxes(
    boxes: Sequence[MovingBox], horizon: Seconds, resolution: Seconds = TTC_RESOLUTION
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """
    Positions and headings of every box at ``0, resolution, ..., horizon``.
    Speeds never drop below zero; the path curvature is fixed at its initial
    value, so a stopped box stops turning.

    :returns: x, y and heading arrays of shape (steps + 1, len(boxes)).
    """
    b = _boxes(boxes)
    steps = round(horizon / resolution)
    x, y, heading, speed = b["x"].copy(), b["y"].copy(), b["heading"].copy(), b["speed"].copy()
    curvature = np.where(speed > 0.1, b["yaw_rate"] / np.maximum(speed, 0.1), 0.0)
    xs, ys, hs = [x.copy()], [y.copy()], [heading.copy()]
    for _ in range(steps):
        new_speed = np.maximum(speed + b["accel"] * resolution, 0.0)
        ds = 0.5 * (speed + new_speed) * resolution
        mid = heading + 0.5 * curvature * ds
        x = x + ds * np.cos(mid)
        y = y + ds * np.sin(mid)
        heading = heading + curvature * ds
        speed = new_speed
        xs.append(x.copy())
        ys.append(y.copy())
        hs.append(heading.copy())
    return np.array(xs), np.array(ys), np.array(hs)


def min_time_to_collision(
    ego: MovingBox,
    agents: Sequence[MovingBox],
    horizon: Seconds = 2.0,
    resolution: Seconds = TTC_RESOLUTION,
) -> Seconds | None:
    """
    Smallest time to collision between the ego and the agents ahead of it,
    over those whose propagated footprints overlap the ego's within
    ``horizon``. Conflicts are timed by :func:`mttc` along the line of
    centres, falling back to the first overlap time. None without conflict.
    """
    ahead = [
        a for a in agents
        if (a.x - ego.x) * math.cos(ego.heading) + (a.y - ego.y) * math.sin(ego.heading) > 0.0
    ]
    if not ahead:
        return None
    boxes = [ego, *ahead]
    xs, ys, hs = propagate_boxes(boxes, horizon, resolution)
    b = _boxes(boxes)
    corners = footprint_corners(xs, ys, hs, b["length"], b["width"])  # (S, m + 1, 4, 2)
    mine = np.broadcast_to(corners[:, :1], corners[:, 1:].shape)
    steps, count = mine.shape[0], mine.shape[1]
    overlap = rectangles_overlap(
        mine.reshape(-1, 4, 2), corners[:, 1:].reshape(-1, 4, 2)
    ).reshape(steps, count)
    best: Seconds | None = None
    for j in np.flatnonzero(overlap.any(axis=0)):
        agent = ahead[j]
        dx, dy = agent.x - ego.x, agent.y - ego.y
        distance = math.hypot(dx, dy)
        if distance < 1e-9:
            return 0.0
        ux, uy = dx / distance, dy / distance
        extents = support_extent(
            np.array([ego.heading, agent.heading]),
            np.array([ego.length, agent.length]),
            np.array([ego.width, agent.width]),
            np.array(ux),
            np.array(uy),
        )
        dtc = max(0.0, distance - float(extents.sum()))
        ego_c, ego_s = math.cos(ego.heading), math.sin(ego.heading)
        agent_c, agent_s = math.cos(agent.heading), math.sin(agent.heading)
        v_rel = (ego.speed * ego_c - agent.speed * agent_c) * ux + (ego.speed * ego_s - agent.speed * agent_s) * uy
        a_rel = (ego.accel * ego_c - agent.accel * agent_c) * ux + (ego.accel * ego_s - agent.accel * agent_s) * uy
        t = mttc(dtc, v_rel, a_rel)
        if t is None:
            t = float(np.argmax(overlap[:, j])) * resolution
        best = t if best is None else min(best, t)
    return best


def ttc_feature(
    ego: MovingBox,
    agents: Sequence[MovingBox],
    threshold: Seconds = 1.0,
    horizon: Seconds = 2.0,
) -> float:
    """1.0 when there is no conflict or the time to collision reaches ``threshold``."""
    t = min_time_to_collision(ego, agents, horizon)
    return 1.0 if t is None or t >= threshold else 0.0


def kinematic_series(positions: FloatArray, dt: Seconds) -> tuple[FloatArray, FloatArray, FloatArray]:
    """
    Acceleration, jerk and yaw rate of a trajectory sampled every ``dt``, by
    forward differences. Headings come from segment directions and are held
    across segments shorter than a millimetre.
    """
    points = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    segments = np.diff(points, axis=0)
    lengths = np.linalg.norm(segments, axis=1)
    speeds = lengths / dt
    raw = np.arctan2(segments[:, 1], segments[:, 0])
    headings = np.empty_like(raw)
    held = raw[int(np.argmax(lengths >= MIN_SEGMENT))] if (lengths >= MIN_SEGMENT).any() else 0.0
    for i, (heading, length) in enumerate(zip(raw, lengths)):
        if length >= MIN_SEGMENT:
            held = heading
        headings[i] = held
    accel = np.diff(speeds) / dt
    jerk = np.diff(accel) / dt
    yaw_rate = wrap_angles(np.diff(headings)) / dt
    return accel, jerk, yaw_rate


def comfortable(positions: FloatArray, dt: Seconds, thresholds: ComfortThresholds) -> float:
    """1.0 if every sample respects the thresholds; trajectories under four points score 1."""
    if len(positions) < 4:
        return 1.0
    accel, jerk, yaw_rate = kinematic_series(positions, dt)
    ok = (
        bool(np.all(np.abs(accel) <= thresholds.accel))
        and bool(np.all(np.abs(jerk) <= thresholds.jerk))
        and bool(np.all(np.abs(yaw_rate) <= thresholds.yaw_rate))
    )
    return 1.0 if ok else 0.0


def comfort_scores(
    history: FloatArray,
    plan: FloatArray,
    dt: Seconds,
    thresholds: ComfortThresholds,
    window: Seconds = 1.0,
) -> tuple[float, float]:
    """
    History comfort over the last ``window`` of history joined to the first
    ``window`` of the plan, and extended comfort over the plan from the
    current position. Both inputs are world-frame positions sampled every ``dt``;
    the last history entry is the current position.

    :returns: ``(hc, ec)``.
    """
    count = max(1, round(window / dt))
    history = np.asarray(history, dtype=np.float64).reshape(-1, 2)
    plan = np.asarray(plan, dtype=np.float64).reshape(-1, 2)
    seam = np.concatenate([history[-(count + 1):], plan[:count]])
    extended = np.concatenate([history[-1:], plan])
    return comfortable(seam, dt, thresholds), comfortable(extended, dt, thresholds)


def ego_progress(achieved: Meters, expert: Meters, epsilon: Meters = PROGRESS_EPSILON) -> float:
    """Achieved over expert arclength, clamped to [0, 1]; 1.0 when the expert barely moves."""
    if expert <= epsilon:
        return 1.0
    return min(max(achieved / expert, 0.0), 1.0)
