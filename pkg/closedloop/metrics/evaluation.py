"""
Applies the metrics to the simulator's state: one realized closed-loop frame,
or a whole candidate plan against predicted (or logged) agent frames.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..geometry import (
    BoolArray,
    FloatArray,
    Footprint,
    Pose2,
    Vec2,
    angle_diff,
    footprint_corners,
    wrap_angles,
)
from ..plans import CandidatePlan
from ..roadmap import LaneQuery, RoadMap
from ..scenario import FeatureId, SignalState
from ..world import AgentState, PredictedFrame, WorldState
from .constraints import (
    drivable_area_compliance,
    driving_direction_compliance,
    no_at_fault_collision,
    traffic_light_compliance,
)
from .features import MIN_SEGMENT, MovingBox, comfort_scores, lane_keeping, ttc_feature
from .scoring import CriticalFlags, Feature, FrameScore, ScorerWeights, epdms_frame, make_frame_score


def agent_box(agent: AgentState) -> MovingBox:
    return MovingBox(
        agent.pose.position.x,
        agent.pose.position.y,
        agent.pose.heading,
        agent.speed,
        agent.accel,
        agent.dims.length,
        agent.dims.width,
        agent.yaw_rate,
    )


def lane_at(roadmap: RoadMap, position: Vec2) -> LaneQuery | None:
    """Nearest lane, or None on a map without lanes."""
    return roadmap.query_lane(position) if roadmap.has_lanes() else None


def _agent_shapes(agents: Sequence[AgentState]) -> list[tuple[Footprint, Vec2]]:
    return [(a.footprint(), a.velocity) for a in agents]


def score_frame(
    world: WorldState,
    weights: ScorerWeights,
    *,
    prev_position: Vec2,
    signals: Mapping[FeatureId, SignalState],
    lane: LaneQuery | None,
    offsets: Sequence[float],
    hc: float,
    ec: float,
) -> FrameScore:
    """
    Closed-loop score of the realized state after one simulation step.
    ``signals`` are those in force during the step, ``offsets`` the trailing
    lateral offsets at sim rate ending with the current one.
    """
    ego = world.ego
    footprint = world.ego_footprint()
    flags = CriticalFlags(
        nc=no_at_fault_collision(
            footprint, ego.velocity, _agent_shapes(world.agents),
            strict=weights.fault_rule == "strict",
        ),
        dac=drivable_area_compliance(footprint, world.roadmap),
        tlc=traffic_light_compliance(
            prev_position, ego.pose.position, world.roadmap.stop_lines, signals
        ),
        ddc=lane is None or driving_direction_compliance(ego.pose.heading, lane.heading),
    )
    ego_box = MovingBox(
        ego.pose.position.x, ego.pose.position.y, ego.pose.heading, ego.speed, ego.accel,
        world.ego_dims.length, world.ego_dims.width, ego.yaw_rate,
    )
    features: dict[Feature, float] = {
        "ttc": ttc_feature(
            ego_box, [agent_box(a) for a in world.agents],
            weights.ttc_threshold, weights.ttc_horizon,
        ),
        "lk": lane_keeping(offsets, world.sim_dt, weights.lk_offset_threshold, weights.lk_window),
        "hc": hc,
        "ec": ec,
    }
    return make_frame_score(flags, features, weights, "closed-loop")


@dataclass(frozen=True, slots=True)
class PlanEvaluation:
    """Per-waypoint flags and features of one plan, plus its plan-wide comfort."""

    nc: BoolArray
    dac: BoolArray
    tlc: BoolArray
    ddc: BoolArray
    lk: FloatArray
    ttc: FloatArray
    hc: float
    ec: float

    @property
    def horizon(self) -> int:
        return len(self.nc)

    def flags_at(self, index: int) -> CriticalFlags:
        return CriticalFlags(
            bool(self.nc[index]), bool(self.dac[index]), bool(self.tlc[index]), bool(self.ddc[index])
        )

    def step_scores(self, weights: ScorerWeights) -> list[float]:
        """Closed-loop frame score at every waypoint."""
        return [
            epdms_frame(
                self.flags_at(i),
                {"ttc": float(self.ttc[i]), "lk": float(self.lk[i]), "hc": self.hc, "ec": self.ec},
                weights,
                "closed-loop",
            )
            for i in range(self.horizon)
        ]

    def open_loop_frame(self, weights: ScorerWeights, ep: float) -> FrameScore:
        """
        The whole plan as one open-loop frame: flags must hold at every
        waypoint, TTC and lane keeping take their worst value.
        """
        flags = CriticalFlags(
            bool(self.nc.all()), bool(self.dac.all()), bool(self.tlc.all()), bool(self.ddc.all())
        )
        features: dict[Feature, float] = {
            "ttc": float(self.ttc.min()),
            "lk": float(self.lk.min()),
            "hc": self.hc,
            "ec": self.ec,
            "ep": ep,
        }
        return make_frame_score(flags, features, weights, "open-loop")


def plan_kinematics(
    origin: Pose2, start_speed: float, plan: CandidatePlan
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """
    World positions, headings, speeds and accelerations at every waypoint,
    by differences from the plan origin.
    """
    points = plan.world_points(origin)
    path = np.vstack([[origin.position.x, origin.position.y], points])
    segments = np.diff(path, axis=0)
    lengths = np.linalg.norm(segments, axis=1)
    headings = np.empty(len(points))
    held = origin.heading
    for i, (dx, dy) in enumerate(segments):
        if lengths[i] >= MIN_SEGMENT:
            held = math.atan2(dy, dx)
        headings[i] = held
    speeds = lengths / plan.dt
    accels = np.diff(np.concatenate([[start_speed], speeds])) / plan.dt
    return points, headings, speeds, accels


def evaluate_plan(
    world: WorldState,
    plan: CandidatePlan,
    frames: Sequence[PredictedFrame],
    weights: ScorerWeights,
    history: FloatArray,
) -> PlanEvaluation:
    """
    Scores every waypoint of ``plan`` (anchored at the current ego pose)
    against ``frames[i]``, the background at the waypoint's time. ``history``
    holds past world positions sampled every ``plan.dt``, ending at the
    current ego position.

    :raises ValidationError: if there are fewer frames than waypoints.
    """
    horizon = plan.horizon
    if len(frames) < horizon:
        raise ValidationError("frames", f"{len(frames)} frames for a {horizon}-waypoint plan")
    origin = world.ego.pose
    roadmap = world.roadmap
    length, width = world.ego_dims.length, world.ego_dims.width
    points, headings, speeds, accels = plan_kinematics(origin, world.ego.speed, plan)
    corners = footprint_corners(points[:, 0], points[:, 1], headings, length, width)
    dac = roadmap.covers(corners.reshape(-1, 2)).reshape(horizon, 4).all(axis=1)
    if roadmap.has_lanes():
        _, lane_headings, offsets, _ = roadmap.query_lanes(points)
        ddc = np.abs(wrap_angles(headings - lane_headings)) <= math.pi / 2
        current = roadmap.query_lane(origin.position).lateral_offset
    else:
        offsets = np.zeros(horizon)
        ddc = np.ones(horizon, dtype=np.bool_)
        current = 0.0
    trail = [current, *offsets.tolist()]
    lk = np.array([
        lane_keeping(trail[: i + 2], plan.dt, weights.lk_offset_threshold, weights.lk_window)
        for i in range(horizon)
    ])
    nc = np.ones(horizon, dtype=np.bool_)
    tlc = np.ones(horizon, dtype=np.bool_)
    ttc = np.ones(horizon)
    strict = weights.fault_rule == "strict"
    previous = origin.position
    prev_heading = origin.heading
    for i in range(horizon):
        frame = frames[i]
        position = Vec2(float(points[i, 0]), float(points[i, 1]))
        pose = Pose2(position, float(headings[i]))
        tlc[i] = traffic_light_compliance(previous, position, roadmap.stop_lines, frame.signals)
        nc[i] = no_at_fault_collision(
            Footprint(pose, length, width), pose.forward() * float(speeds[i]),
            _agent_shapes(frame.agents), strict=strict,
        )
        ego_box = MovingBox(
            position.x, position.y, pose.heading, float(speeds[i]), float(accels[i]),
            length, width, angle_diff(pose.heading, prev_heading) / plan.dt,
        )
        ttc[i] = ttc_feature(
            ego_box, [agent_box(a) for a in frame.agents],
            weights.ttc_threshold, weights.ttc_horizon,
        )
        previous, prev_heading = position, pose.heading
    hc, ec = comfort_scores(history, points, plan.dt, weights.thresholds)
    return PlanEvaluation(nc, dac, tlc, ddc, lk, ttc, hc, ec)
