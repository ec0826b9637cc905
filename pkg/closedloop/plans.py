from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import FloatArray, Pose2, Seconds, Vec2, as_array, to_world_array


@dataclass(frozen=True, slots=True)
class CandidatePlan:
    """
    One proposed trajectory. Waypoint ``i`` is the ego-frame position reached
    ``(i + 1) * dt`` seconds after the plan origin.
    """

    waypoints: tuple[Vec2, ...]
    dt: Seconds
    policy_score: float | None = None
    id: int = 0

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise ValidationError("waypoints", "a plan needs at least one waypoint")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValidationError("dt", f"must be positive, got {self.dt}")

    @property
    def horizon(self) -> int:
        return len(self.waypoints)

    def array(self) -> FloatArray:
        """Waypoints as an (H, 2) array."""
        return as_array(self.waypoints)

    def world_points(self, origin: Pose2) -> FloatArray:
        """Waypoints mapped into the world frame, as an (H, 2) array."""
        return to_world_array(origin, self.array())

    def truncated(self, horizon: int) -> CandidatePlan:
        """The plan's first ``horizon`` waypoints."""
        return CandidatePlan(self.waypoints[:horizon], self.dt, self.policy_score, self.id)


def plan_from_array(
    points: FloatArray, dt: Seconds, plan_id: int = 0, policy_score: float | None = None
) -> CandidatePlan:
    return CandidatePlan(
        tuple(Vec2(float(x), float(y)) for x, y in np.asarray(points)), dt, policy_score, plan_id
    )


def constant_velocity_plan(speed: float, dt: Seconds, horizon: int, plan_id: int = 0) -> CandidatePlan:
    """Waypoints at ``(i + 1) * speed * dt`` along the ego x-axis."""
    return CandidatePlan(
        tuple(Vec2((i + 1) * speed * dt, 0.0) for i in range(horizon)), dt, None, plan_id
    )
