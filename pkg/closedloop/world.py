from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Self, final

import numpy as np

from .errors import NumericError
from .geometry import FloatArray, Footprint, Pose2, Seconds, Vec2
from .roadmap import RoadMap
from .scenario import Dimensions, FeatureId, ObjectId, ObjectType, ScenarioDescription, SignalState
from .vehicle import EgoState

EGO_DIMENSIONS = Dimensions(4.6, 1.9, 1.5)
"""Footprint used for the ego when the scenario does not say otherwise."""


@dataclass(frozen=True, slots=True)
class AgentState:
    """
    One background object at one step. Speed is measured along the heading;
    ``yaw_rate`` and ``accel`` are the estimates used for prediction.
    """

    object_id: ObjectId
    pose: Pose2
    speed: float
    accel: float
    dims: Dimensions
    lane_id: FeatureId | None = None
    object_type: ObjectType = "Vehicle"
    yaw_rate: float = 0.0
    triggered_at: Seconds | None = None
    """Time at which a scripted maneuver started; latched once set."""

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.speed, self.accel, self.yaw_rate)):
            raise NumericError(f"non-finite state for agent {self.object_id}")

    @property
    def velocity(self) -> Vec2:
        return self.pose.forward() * self.speed

    def footprint(self) -> Footprint:
        return Footprint(self.pose, self.dims.length, self.dims.width)


@dataclass(frozen=True, slots=True)
class EgoSample:
    """One entry of the ego history."""

    step: int
    pose: Pose2
    speed: float
    accel: float


@final
class SignalSchedule:
    """Per-lane signal sequences, held at their last value past the end."""

    __sequences: Mapping[FeatureId, tuple[SignalState, ...]]

    def __new__(cls, sequences: Mapping[FeatureId, tuple[SignalState, ...]]) -> Self:
        self = object.__new__(cls)
        self.__sequences = MappingProxyType(dict(sequences))
        return self

    @classmethod
    def from_scenario(cls, scenario: ScenarioDescription) -> SignalSchedule:
        return cls({d.lane_id: d.signal_sequence for d in scenario.dynamic_states})

    def at(self, step: int) -> Mapping[FeatureId, SignalState]:
        """Signal state of every governed lane at ``step``."""
        return MappingProxyType({
            lane: seq[min(max(step, 0), len(seq) - 1)]
            for lane, seq in self.__sequences.items()
            if seq
        })

    @property
    def lanes(self) -> tuple[FeatureId, ...]:
        return tuple(self.__sequences)


@dataclass(frozen=True, slots=True)
class PredictedFrame:
    """Predicted background state at ``offset`` seconds after the current step."""

    offset: Seconds
    agents: tuple[AgentState, ...]
    signals: Mapping[FeatureId, SignalState]


@dataclass(frozen=True, slots=True)
class WorldState:
    """A snapshot of the simulation at one step; agents are the valid ones only."""

    step: int
    time: Seconds
    ego: EgoState
    agents: tuple[AgentState, ...]
    signals: Mapping[FeatureId, SignalState]
    roadmap: RoadMap
    schedule: SignalSchedule
    scenario: ScenarioDescription
    history: tuple[EgoSample, ...] = ()
    ego_dims: Dimensions = EGO_DIMENSIONS
    sim_dt: Seconds = 0.1
    _by_id: dict[ObjectId, AgentState] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {a.object_id: a for a in self.agents})

    def agent(self, object_id: ObjectId) -> AgentState | None:
        return self._by_id.get(object_id)

    def ego_footprint(self) -> Footprint:
        return Footprint(self.ego.pose, self.ego_dims.length, self.ego_dims.width)

    def history_positions(self, spacing: int, count: int) -> FloatArray:
        """
        Ego positions sampled every ``spacing`` history entries, ending at the
        latest entry, at most ``count`` of them, oldest first.
        """
        samples = self.history[::-1][::spacing][:count][::-1]
        return np.array(
            [[s.pose.position.x, s.pose.position.y] for s in samples], dtype=np.float64
        ).reshape(-1, 2)
