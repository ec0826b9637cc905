"""
Ego kinematics and the tracking controllers: a kinematic bicycle reduced to
curvature control, a PID speed loop and Pure Pursuit steering.

Every function here is pure; controller state is passed by value.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Final, Self

import numpy as np

from .errors import ConfigurationError, NumericError, ValidationError
from .geometry import FloatArray, Meters, Pose2, Seconds, Vec2, as_array, wrap_angle
from .plans import CandidatePlan
from .roadmap import Polyline

MAX_ACCEL: Final = 8.0
"""Command saturation for acceleration, in m/s²."""

MAX_CURVATURE: Final = 0.3
"""Command saturation for curvature, in 1/m."""

MAX_SPEED: Final = 40.0

REVERSE_TOLERANCE: Final = 0.5


def _clamp(value: float, low: float, high: float) -> float:
    return low if value < low else high if value > high else value


@dataclass(frozen=True, slots=True)
class EgoState:
    pose: Pose2
    speed: float
    accel: float = 0.0
    yaw_rate: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.speed, self.accel, self.yaw_rate)):
            raise NumericError(f"non-finite ego state {self}")
        if self.speed < -REVERSE_TOLERANCE:
            raise ValidationError("speed", f"reverse speed {self.speed} beyond tolerance")

    @property
    def velocity(self) -> Vec2:
        return self.pose.forward() * self.speed


@dataclass(frozen=True, slots=True)
class ControlCommand:
    accel: float
    curvature: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.accel) and math.isfinite(self.curvature)):
            raise NumericError(f"non-finite command {self}")
        if abs(self.accel) > MAX_ACCEL or abs(self.curvature) > MAX_CURVATURE:
            raise ValidationError("command", f"{self} exceeds saturation bounds")

    @classmethod
    def saturated(cls, accel: float, curvature: float) -> Self:
        """A command with both channels clipped to the saturation bounds."""
        return cls(
            _clamp(accel, -MAX_ACCEL, MAX_ACCEL),
            _clamp(curvature, -MAX_CURVATURE, MAX_CURVATURE),
        )


@dataclass(frozen=True, slots=True)
class PidParams:
    kp: float = 4.0
    ki: float = 0.2
    kd: float = 0.0
    integral_limit: float = 2.0

    def __post_init__(self) -> None:
        if min(self.kp, self.ki, self.kd) < 0.0 or self.integral_limit < 0.0:
            raise ConfigurationError("controller.pid", "gains and integral limit must be non-negative")


@dataclass(frozen=True, slots=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None


@dataclass(frozen=True, slots=True)
class ControllerParams:
    """Tracking-controller settings; lookahead is ``max(min_lookahead, lookahead_gain * speed)``."""

    pid: PidParams = field(default_factory=PidParams)
    min_lookahead: Meters = 4.0
    lookahead_gain: float = 0.8
    arrival_tolerance: Meters = 0.5

    def lookahead(self, speed: float) -> Meters:
        return max(self.min_lookahead, self.lookahead_gain * speed)


def step_bicycle(state: EgoState, cmd: ControlCommand, dt: Seconds) -> EgoState:
    """
    Advances the kinematic bicycle by one step with midpoint integration.

    :raises NumericError: if the state, command or step is not finite.
    """
    if not math.isfinite(dt) or dt <= 0.0:
        raise NumericError(f"invalid step {dt}")
    speed = max(state.speed, 0.0)
    new_speed = _clamp(speed + cmd.accel * dt, 0.0, MAX_SPEED)
    mean_speed = 0.5 * (speed + new_speed)
    turn = mean_speed * cmd.curvature * dt
    mid_heading = state.pose.heading + 0.5 * turn
    distance = mean_speed * dt
    position = Vec2(
        state.pose.position.x + distance * math.cos(mid_heading),
        state.pose.position.y + distance * math.sin(mid_heading),
    )
    return EgoState(
        pose=Pose2(position, wrap_angle(state.pose.heading + turn)),
        speed=new_speed,
        accel=(new_speed - speed) / dt,
        yaw_rate=new_speed * cmd.curvature,
    )


def pid_longitudinal(
    params: PidParams, pid: PidState, target_speed: float, current_speed: float, dt: Seconds
) -> tuple[float, PidState]:
    """
    One PID update on the speed error.

    The integral is clamped to ``±integral_limit`` and is not accumulated while
    the output saturates in the direction of the error.
    """
    error = target_speed - current_speed
    derivative = 0.0 if pid.prev_error is None else (error - pid.prev_error) / dt
    integral = _clamp(pid.integral + error * dt, -params.integral_limit, params.integral_limit)
    raw = params.kp * error + params.ki * integral + params.kd * derivative
    if abs(raw) > MAX_ACCEL and raw * error > 0.0:
        integral = pid.integral
        raw = params.kp * error + params.ki * integral + params.kd * derivative
    return _clamp(raw, -MAX_ACCEL, MAX_ACCEL), PidState(integral, error)


def pursuit_curvature(target: Vec2) -> float:
    """Curvature of the arc through the ego origin, tangent to its heading, reaching ``target``."""
    distance_sq = target.x * target.x + target.y * target.y
    if distance_sq < 1e-12:
        return 0.0
    return 2.0 * target.y / distance_sq


def pure_pursuit(
    state: EgoState, path: Sequence[Vec2] | FloatArray, lookahead: Meters
) -> float | None:
    """
    Pure Pursuit steering toward the path point one lookahead distance (in
    arclength) beyond the ego's projection on the path.

    :returns: the saturated curvature, or None when the path ends before the
              lookahead point (end of path).
    """
    if lookahead <= 0.0:
        raise ValidationError("lookahead", "must be positive")
    points = path if isinstance(path, np.ndarray) else as_array(list(path))
    polyline = Polyline(points)
    if polyline.segment_count == 0:
        return None
    s0, _, _ = polyline.project(state.pose.position)
    goal = s0 + lookahead
    if goal > polyline.length:
        return None
    target, _ = polyline.point_at(goal)
    local = state.pose.to_local(target)
    return _clamp(pursuit_curvature(local), -MAX_CURVATURE, MAX_CURVATURE)


def plan_knot_speeds(points: FloatArray, dt: Seconds) -> FloatArray:
    """
    Speeds at the knots of a positional trajectory sampled every ``dt``,
    by central differences (one-sided at the ends).
    """
    n = len(points)
    if n < 2:
        return np.zeros(n)
    speeds = np.empty(n)
    speeds[0] = np.linalg.norm(points[1] - points[0]) / dt
    speeds[-1] = np.linalg.norm(points[-1] - points[-2]) / dt
    if n > 2:
        speeds[1:-1] = np.linalg.norm(points[2:] - points[:-2], axis=1) / (2.0 * dt)
    return speeds


def track_plan(
    state: EgoState,
    plan: CandidatePlan,
    plan_origin_pose: Pose2,
    elapsed_in_plan: Seconds,
    params: ControllerParams,
    pid: PidState,
    dt: Seconds,
) -> tuple[ControlCommand, PidState] | None:
    """
    Computes the tracking command for the cached plan at the current cursor.

    :returns: the command and the updated PID state, or None once the cursor
              has passed the last waypoint (end of plan).
    """
    if elapsed_in_plan > plan.horizon * plan.dt + 1e-9:
        return None
    knots = np.vstack(
        [[plan_origin_pose.position.x, plan_origin_pose.position.y], plan.world_points(plan_origin_pose)]
    )
    speeds = plan_knot_speeds(knots, plan.dt)
    cursor = elapsed_in_plan / plan.dt
    target_speed = float(np.interp(cursor, np.arange(len(knots)), speeds))
    accel, pid = pid_longitudinal(params.pid, pid, target_speed, state.speed, dt)
    curvature = pure_pursuit(state, knots, params.lookahead(state.speed))
    if curvature is None:
        final = state.pose.to_local(Vec2(float(knots[-1, 0]), float(knots[-1, 1])))
        curvature = pursuit_curvature(final) if final.x > params.arrival_tolerance else 0.0
    return ControlCommand.saturated(accel, curvature), pid
