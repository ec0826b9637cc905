"""
Background traffic: log replay, Intelligent Driver Model car-following and a
scripted adversary, plus the traffic models that advance every agent of a
world snapshot synchronously.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Final, Literal, Protocol, Self, final

import numpy as np

from .errors import ConfigurationError, OverlapError, ValidationError
from .geometry import Meters, Pose2, Seconds, Vec2, angle_diff, wrap_angles
from .roadmap import DEFAULT_SPEED_LIMIT, LanePath, RoadMap
from .scenario import FeatureId, ObjectId, ScenarioDescription, Track, agent_tracks
from .world import AgentState, WorldState

logger = logging.getLogger(__name__)

type TrafficKind = Literal["log-replay", "idm", "adversarial"]
"""Background-traffic modes."""

TRAFFIC_KINDS: Final[tuple[TrafficKind, ...]] = ("log-replay", "idm", "adversarial")

LEADER_RANGE: Final = 100.0
"""Leaders are searched this far ahead along the lane path, in meters."""

LEADER_LATERAL: Final = 1.8
"""Objects further than this from the lane path are not leaders."""

LANE_CAPTURE: Final = 2.0
"""An agent adopts the nearest lane only within this lateral offset."""

LATERAL_TIME_CONSTANT: Final = 1.0

MAX_ADVERSARY_DECEL: Final = 9.0


# Intelligent Driver Model

@dataclass(frozen=True, slots=True)
class IdmParams:
    """
    IDM constants. ``v0`` is the desired speed; None means the speed limit of
    the agent's current lane.
    """

    v0: float | None = None
    headway: Seconds = 1.5
    jam_distance: Meters = 2.0
    a_max: float = 1.5
    b: float = 2.0
    delta: float = 4.0

    def __post_init__(self) -> None:
        if self.v0 is not None and self.v0 <= 0.0:
            raise ConfigurationError("idm.v0", "must be positive")
        for name in ("headway", "jam_distance", "a_max", "b"):
            if getattr(self, name) <= 0.0:
                raise ConfigurationError(f"idm.{name}", "must be positive")
        if self.delta < 1.0:
            raise ConfigurationError("idm.delta", "must be at least 1")

    def with_v0(self, v0: float) -> IdmParams:
        return replace(self, v0=v0)


def idm_accel(params: IdmParams, v: float, gap: Meters, dv: float) -> float:
    """
    IDM acceleration for speed ``v``, bumper-to-bumper ``gap`` (``math.inf`` on
    a free road) and closing speed ``dv`` (own speed minus leader speed).

    :raises OverlapError: if ``gap <= 0``.
    """
    if not gap > 0.0:
        raise OverlapError(gap)
    v0 = params.v0 if params.v0 is not None else DEFAULT_SPEED_LIMIT
    free = 1.0 - (max(v, 0.0) / v0) ** params.delta
    if math.isinf(gap):
        interaction = 0.0
    else:
        dynamic = v * params.headway + v * dv / (2.0 * math.sqrt(params.a_max * params.b))
        s_star = params.jam_distance + max(0.0, dynamic)
        interaction = (s_star / gap) ** 2
    accel = params.a_max * (free - interaction)
    return min(max(accel, -2.0 * params.b), params.a_max)


@lru_cache(maxsize=512)
def _stop_line_arclengths(roadmap: RoadMap, lane_id: FeatureId) -> tuple[tuple[FeatureId, Meters], ...]:
    """Arclength along the lane path of every stop line that crosses it, with its lane."""
    path = roadmap.lane_path(lane_id)
    lines = roadmap.stop_lines_for(path.lane_ids)
    if not lines:
        return ()
    mids = np.array([
        [(line.start.x + line.end.x) / 2, (line.start.y + line.end.y) / 2] for line in lines
    ])
    s, _, dist, _ = path.polyline.project_many(mids)
    return tuple(
        (line.lane_id, float(si))
        for line, si, d in zip(lines, s, dist)
        if line.lane_id is not None and d <= 3.0
    )


def _leader_gap(
    world: WorldState, agent: AgentState, path: LanePath, s_agent: Meters, brake: float
) -> tuple[Meters, float]:
    """Gap to and speed of the nearest obstacle ahead on the path; (inf, 0) on a free road."""
    others = [a for a in world.agents if a.object_id != agent.object_id]
    xs = [a.pose.position.x for a in others] + [world.ego.pose.position.x]
    ys = [a.pose.position.y for a in others] + [world.ego.pose.position.y]
    headings = np.array([a.pose.heading for a in others] + [world.ego.pose.heading])
    speeds = np.array([a.speed for a in others] + [world.ego.speed])
    lengths = np.array([a.dims.length for a in others] + [world.ego_dims.length])
    s, lateral, _, seg = path.polyline.project_many(np.column_stack([xs, ys]))
    tangent = path.polyline.segment_headings(seg)
    misalign = wrap_angles(headings - tangent)
    ahead = s - s_agent
    mask = (
        (np.abs(lateral) <= LEADER_LATERAL)
        & (np.abs(misalign) < math.pi / 2)
        & (ahead > 0.0)
        & (ahead <= LEADER_RANGE)
    )
    gap, leader_speed = math.inf, 0.0
    if mask.any():
        i = int(np.flatnonzero(mask)[np.argmin(ahead[mask])])
        gap = float(ahead[i] - (agent.dims.length + lengths[i]) / 2.0)
        leader_speed = float(speeds[i] * math.cos(misalign[i]))
    for lane, s_line in _stop_line_arclengths(world.roadmap, path.lane_ids[0]):
        signal = world.signals.get(lane)
        line_gap = s_line - s_agent - agent.dims.length / 2.0
        if signal is None or signal == "GO" or line_gap <= 0.1 or line_gap >= gap:
            continue
        stopping = agent.speed * agent.speed / (2.0 * brake)
        if signal == "STOP" or stopping <= line_gap:
            gap, leader_speed = line_gap, 0.0
    return gap, leader_speed


def _coast(agent: AgentState, dt: Seconds) -> AgentState:
    pose = Pose2(agent.pose.position + agent.pose.forward() * (agent.speed * dt), agent.pose.heading)
    return replace(agent, pose=pose, accel=0.0, yaw_rate=0.0, lane_id=None)


def idm_agent_step(
    world: WorldState, agent: AgentState, params: IdmParams, dt: Seconds
) -> AgentState:
    """
    Advances one agent by IDM car-following along its lane path: the nearest
    vehicle ahead on the path (ego included), or a stop line whose signal is
    STOP (or WAIT while the agent can still stop), is the leader; the lateral
    offset to the centerline decays with a 1 s time constant. An agent that
    has no lane, or runs off the end of its lane chain, coasts.
    """
    if agent.lane_id is None or agent.lane_id not in world.roadmap.lane_ids:
        return _coast(agent, dt)
    path = world.roadmap.lane_path(agent.lane_id)
    s_agent, lateral, _ = path.polyline.project(agent.pose.position)
    if params.v0 is None:
        params = params.with_v0(world.roadmap.speed_limit(agent.lane_id))
    gap, leader_speed = _leader_gap(world, agent, path, s_agent, params.b)
    try:
        accel = idm_accel(params, agent.speed, gap, agent.speed - leader_speed)
    except OverlapError as error:
        logger.debug("agent %s overlaps its leader (gap %.2f m)", agent.object_id, error.gap)
        accel = -2.0 * params.b
    speed = max(0.0, agent.speed + accel * dt)
    s_new = s_agent + 0.5 * (agent.speed + speed) * dt
    offset = lateral * math.exp(-dt / LATERAL_TIME_CONSTANT)
    centre, heading = path.polyline.point_at(s_new)
    position = centre + Vec2(-math.sin(heading), math.cos(heading)) * offset
    return replace(
        agent,
        pose=Pose2(position, heading),
        speed=speed,
        accel=(speed - agent.speed) / dt,
        yaw_rate=angle_diff(heading, agent.pose.heading) / dt,
        lane_id=path.lane_at(s_new),
    )


def assign_lane(roadmap: RoadMap, agent: AgentState) -> AgentState:
    """Attaches the nearest lane if the agent sits on it and travels along it."""
    if not roadmap.has_lanes():
        return replace(agent, lane_id=None)
    query = roadmap.query_lane(agent.pose.position)
    aligned = abs(angle_diff(agent.pose.heading, query.heading)) < math.pi / 2
    on_lane = abs(query.lateral_offset) <= LANE_CAPTURE
    return replace(agent, lane_id=query.lane_id if aligned and on_lane else None)


# Log replay

def replay_agent(scenario: ScenarioDescription, track: Track, step: int) -> AgentState | None:
    """The logged state of one track at ``step``, or None where the log is invalid."""
    state = track.states[step]
    if not state.valid:
        return None
    speed = state.velocity.norm()
    accel = yaw_rate = 0.0
    if step > 0 and (prev := track.states[step - 1]).valid:
        accel = (speed - prev.velocity.norm()) / scenario.dt
        yaw_rate = angle_diff(state.pose.heading, prev.pose.heading) / scenario.dt
    return AgentState(
        object_id=track.object_id,
        pose=state.pose,
        speed=speed,
        accel=accel,
        dims=track.dims,
        object_type=track.object_type,
        yaw_rate=yaw_rate,
    )


def replay_step(
    scenario: ScenarioDescription, step: int, roadmap: RoadMap | None = None
) -> tuple[AgentState, ...]:
    """
    Logged states of the valid non-ego agents at ``step``, in track order.
    With a ``roadmap``, agents are attached to their lanes.

    :raises ValidationError: if the step is out of range.
    """
    if not 0 <= step < scenario.step_count:
        raise ValidationError("step", f"{step} outside [0, {scenario.step_count})")
    agents = []
    for track in agent_tracks(scenario):
        agent = replay_agent(scenario, track, step)
        if agent is not None:
            agents.append(assign_lane(roadmap, agent) if roadmap is not None else agent)
    return tuple(agents)


# Scripted adversary

@dataclass(frozen=True, slots=True)
class TimeAt:
    time: Seconds


@dataclass(frozen=True, slots=True)
class EgoGapBelow:
    gap: Meters


type Trigger = TimeAt | EgoGapBelow
"""Condition that starts a scripted maneuver."""


@dataclass(frozen=True, slots=True)
class HardBrake:
    decel: float = 6.0

    def __post_init__(self) -> None:
        if not 0.0 < self.decel <= MAX_ADVERSARY_DECEL:
            raise ConfigurationError("adversary.decel", f"must lie in (0, {MAX_ADVERSARY_DECEL}]")


@dataclass(frozen=True, slots=True)
class CutIn:
    """Lateral ramp of ``lateral`` meters (left positive) over ``duration`` seconds."""

    lateral: Meters = -3.5
    duration: Seconds = 2.0

    def __post_init__(self) -> None:
        if self.duration <= 0.0 or abs(self.lateral) > 10.0:
            raise ConfigurationError("adversary.cut_in", "needs a positive duration and |lateral| <= 10 m")


type Maneuver = HardBrake | CutIn
"""Scripted behaviour executed once triggered."""


@dataclass(frozen=True, slots=True)
class AdversaryScript:
    trigger: Trigger = field(default_factory=lambda: EgoGapBelow(15.0))
    maneuver: Maneuver = field(default_factory=HardBrake)

    def to_dict(self) -> dict[str, Any]:
        match self.trigger:
            case TimeAt(time=time):
                trigger: dict[str, Any] = {"kind": "time-at", "time": time}
            case EgoGapBelow(gap=gap):
                trigger = {"kind": "ego-gap-below", "gap": gap}
        match self.maneuver:
            case HardBrake(decel=decel):
                maneuver: dict[str, Any] = {"kind": "hard-brake", "decel": decel}
            case CutIn(lateral=lateral, duration=duration):
                maneuver = {"kind": "cut-in", "lateral": lateral, "duration": duration}
        return {"trigger": trigger, "maneuver": maneuver}

    @classmethod
    def from_dict(cls, document: Mapping[str, Any]) -> AdversaryScript:
        """
        :raises ConfigurationError: on unknown kinds or keys.
        """
        unknown = sorted(set(document) - {"trigger", "maneuver"})
        if unknown:
            raise ConfigurationError(f"adversary.{unknown[0]}", "unknown key")
        default = cls()
        trigger, maneuver = default.trigger, default.maneuver
        try:
            if "trigger" in document:
                params = dict(document["trigger"])
                match params.pop("kind", None):
                    case "time-at":
                        trigger = TimeAt(**params)
                    case "ego-gap-below":
                        trigger = EgoGapBelow(**params)
                    case kind:
                        raise ConfigurationError("adversary.trigger.kind", f"unknown trigger {kind!r}")
            if "maneuver" in document:
                params = dict(document["maneuver"])
                match params.pop("kind", None):
                    case "hard-brake":
                        maneuver = HardBrake(**params)
                    case "cut-in":
                        maneuver = CutIn(**params)
                    case kind:
                        raise ConfigurationError("adversary.maneuver.kind", f"unknown maneuver {kind!r}")
        except TypeError as error:
            raise ConfigurationError("adversary", str(error)) from None
        return cls(trigger, maneuver)


def ego_gap(world: WorldState, agent: AgentState) -> Meters:
    """Centre distance to the ego minus both half-lengths."""
    centre = (agent.pose.position - world.ego.pose.position).norm()
    return centre - (world.ego_dims.length + agent.dims.length) / 2.0


def trigger_fired(world: WorldState, agent: AgentState, trigger: Trigger) -> bool:
    match trigger:
        case TimeAt(time=time):
            return world.time >= time - 1e-9
        case EgoGapBelow(gap=gap):
            return ego_gap(world, agent) < gap


def adversary_step(
    world: WorldState, agent: AgentState, script: AdversaryScript, dt: Seconds
) -> AgentState | None:
    """
    Advances a scripted agent: log replay until the trigger fires (then the
    trigger latches), maneuver kinematics afterwards. Returns None when the
    untriggered agent leaves the log.
    """
    fired_at = agent.triggered_at
    if fired_at is None and trigger_fired(world, agent, script.trigger):
        fired_at = world.time
        logger.debug("adversary %s triggered at %.1f s", agent.object_id, fired_at)
    if fired_at is None:
        track = world.scenario.track(agent.object_id)
        if world.step + 1 >= world.scenario.step_count:
            return _coast(agent, dt)
        return replay_agent(world.scenario, track, world.step + 1)
    forward = agent.pose.forward()
    match script.maneuver:
        case HardBrake(decel=decel):
            speed = max(0.0, agent.speed - decel * dt)
            position = agent.pose.position + forward * (0.5 * (agent.speed + speed) * dt)
        case CutIn(lateral=lateral, duration=duration):
            speed = agent.speed
            elapsed = world.time - fired_at
            rate = lateral / duration if elapsed < duration - 1e-9 else 0.0
            left = Vec2(-forward.y, forward.x)
            position = agent.pose.position + forward * (speed * dt) + left * (rate * dt)
    return replace(
        agent,
        pose=Pose2(position, agent.pose.heading),
        speed=speed,
        accel=(speed - agent.speed) / dt,
        yaw_rate=0.0,
        triggered_at=fired_at,
    )


def default_adversary_target(world: WorldState) -> ObjectId | None:
    """The nearest agent ahead of the ego (x > 0, |y| <= 6 m, within 60 m), in the ego frame."""
    best: tuple[float, ObjectId] | None = None
    for agent in world.agents:
        local = world.ego.pose.to_local(agent.pose.position)
        if local.x > 0.0 and abs(local.y) <= 6.0 and local.norm() <= 60.0:
            if best is None or local.norm() < best[0]:
                best = (local.norm(), agent.object_id)
    return best[1] if best is not None else None


# Traffic models

class TrafficModel(Protocol):
    """Advances all background agents one step from a shared snapshot."""

    @property
    def kind(self) -> TrafficKind: ...

    def start(self, world: WorldState) -> tuple[AgentState, ...]:
        """Prepares the agents of the first modelled step."""

    def step(self, world: WorldState, dt: Seconds) -> tuple[AgentState, ...]:
        """Agents at the next step; reads only the given snapshot."""


@final
class LogReplayTraffic:
    """Non-reactive: agents follow their recorded trajectories exactly."""

    __scenario: ScenarioDescription

    def __new__(cls, scenario: ScenarioDescription) -> Self:
        self = object.__new__(cls)
        self.__scenario = scenario
        return self

    @property
    def kind(self) -> TrafficKind:
        return "log-replay"

    def start(self, world: WorldState) -> tuple[AgentState, ...]:
        return world.agents

    def step(self, world: WorldState, dt: Seconds) -> tuple[AgentState, ...]:
        last = self.__scenario.step_count - 1
        return replay_step(self.__scenario, min(world.step + 1, last))


@final
class IdmTraffic:
    """Reactive: every agent present at the start follows IDM along its lane."""

    __params: IdmParams

    def __new__(cls, params: IdmParams) -> Self:
        self = object.__new__(cls)
        self.__params = params
        return self

    @property
    def kind(self) -> TrafficKind:
        return "idm"

    def start(self, world: WorldState) -> tuple[AgentState, ...]:
        return tuple(assign_lane(world.roadmap, a) for a in world.agents)

    def step(self, world: WorldState, dt: Seconds) -> tuple[AgentState, ...]:
        return tuple(idm_agent_step(world, a, self.__params, dt) for a in world.agents)


@final
class AdversarialTraffic:
    """
    Scripted agents run their :class:`AdversaryScript`; all others replay the
    log. Without explicit scripts, :meth:`start` binds the default script to
    the nearest agent ahead of the ego.
    """

    __scenario: ScenarioDescription
    __default: AdversaryScript
    __scripts: dict[ObjectId, AdversaryScript]

    def __new__(
        cls,
        scenario: ScenarioDescription,
        default: AdversaryScript,
        scripts: Mapping[ObjectId, AdversaryScript] | None = None,
    ) -> Self:
        self = object.__new__(cls)
        self.__scenario = scenario
        self.__default = default
        self.__scripts = dict(scripts or {})
        return self

    @property
    def kind(self) -> TrafficKind:
        return "adversarial"

    @property
    def scripts(self) -> Mapping[ObjectId, AdversaryScript]:
        return dict(self.__scripts)

    def start(self, world: WorldState) -> tuple[AgentState, ...]:
        if not self.__scripts and (target := default_adversary_target(world)) is not None:
            self.__scripts[target] = self.__default
            logger.debug("adversary bound to %s", target)
        return world.agents

    def step(self, world: WorldState, dt: Seconds) -> tuple[AgentState, ...]:
        last = self.__scenario.step_count - 1
        replayed = {a.object_id: a for a in replay_step(self.__scenario, min(world.step + 1, last))}
        agents: list[AgentState] = []
        for agent in world.agents:
            script = self.__scripts.get(agent.object_id)
            if script is not None:
                moved = adversary_step(world, agent, script, dt)
                if moved is not None:
                    agents.append(moved)
            elif agent.object_id in replayed:
                agents.append(replayed.pop(agent.object_id))
        agents.extend(a for a in replayed.values() if a.object_id not in self.__scripts)
        return tuple(agents)


def make_traffic(
    kind: TrafficKind,
    scenario: ScenarioDescription,
    idm: IdmParams,
    adversary: AdversaryScript,
) -> TrafficModel:
    match kind:
        case "log-replay":
            return LogReplayTraffic(scenario)
        case "idm":
            return IdmTraffic(idm)
        case "adversarial":
            return AdversarialTraffic(scenario, adversary)
    raise ConfigurationError("traffic", f"unknown traffic mode {kind!r}")
