"""Typed publish/subscribe used by episodes to announce frames and replans."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import Protocol, Self

from .geometry import Pose2
from .metrics.scoring import FrameScore


class Event[EventData](Protocol):
    """What an episode exposes to observers: registration only."""

    def register(self, callback: Callable[[EventData], None]) -> None: ...


class EventManager[EventData]:
    """Callbacks fire in registration order; a callback registered twice fires once."""

    __callbacks: list[Callable[[EventData], None]]

    def __new__(cls) -> Self:
        self = object.__new__(cls)
        self.__callbacks = []
        return self

    def register(self, callback: Callable[[EventData], None]) -> None:
        if callback not in self.__callbacks:
            self.__callbacks.append(callback)

    def trigger(self, event_data: EventData) -> None:
        for callback in tuple(self.__callbacks):
            callback(event_data)


@dataclass(frozen=True, slots=True)
class FrameEvent:
    """Published after every simulated step of a closed-loop episode."""

    step: int
    score: FrameScore
    ego_pose: Pose2
    emergency_brake: bool


@dataclass(frozen=True, slots=True)
class ReplanEvent:
    """Published at every replan tick with the scorer's decision."""

    step: int
    candidate_id: int
    retained: bool
    scorer: str
