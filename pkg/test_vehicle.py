import math

import numpy as np
import pytest

from closedloop.errors import NumericError, ValidationError
from closedloop.geometry import Pose2, Vec2
from closedloop.plans import constant_velocity_plan
from closedloop.vehicle import (
    MAX_ACCEL,
    MAX_CURVATURE,
    ControlCommand,
    ControllerParams,
    EgoState,
    PidParams,
    PidState,
    pid_longitudinal,
    plan_knot_speeds,
    pure_pursuit,
    pursuit_curvature,
    step_bicycle,
    track_plan,
)


def test_heading_update_is_exact_without_acceleration() -> None:
    state = EgoState(Pose2.at(0.0, 0.0, 0.2), 5.0)
    after = step_bicycle(state, ControlCommand(0.0, 0.1), 0.1)
    assert after.pose.heading == 0.2 + 5.0 * 0.1 * 0.1
    assert after.speed == 5.0
    assert after.yaw_rate == pytest.approx(0.5)


def test_speed_is_clamped_at_zero_and_accel_is_realized() -> None:
    state = EgoState(Pose2.at(0.0, 0.0), 0.4)
    after = step_bicycle(state, ControlCommand(-8.0, 0.0), 0.1)
    assert after.speed == 0.0
    assert after.accel == pytest.approx(-4.0)


def test_invalid_step_is_numeric_error() -> None:
    with pytest.raises(NumericError):
        step_bicycle(EgoState(Pose2.at(0, 0), 1.0), ControlCommand(0.0, 0.0), math.nan)


def test_command_bounds() -> None:
    with pytest.raises(ValidationError):
        ControlCommand(MAX_ACCEL + 1.0, 0.0)
    command = ControlCommand.saturated(20.0, -1.0)
    assert command == ControlCommand(MAX_ACCEL, -MAX_CURVATURE)


def test_bicycle_closes_a_circle() -> None:
    speed, curvature, steps = 5.0, 0.05, 250
    dt = 2 * math.pi / (speed * curvature * steps)
    state = EgoState(Pose2.at(0.0, 0.0), speed)
    for _ in range(steps):
        state = step_bicycle(state, ControlCommand(0.0, curvature), dt)
    circumference = 2 * math.pi / curvature
    assert state.pose.position.norm() < 0.005 * circumference


def test_pid_step_response_settles_within_two_seconds() -> None:
    params, pid, dt = PidParams(), PidState(), 0.1
    state = EgoState(Pose2.at(0.0, 0.0), 0.0)
    speeds = []
    for _ in range(50):
        accel, pid = pid_longitudinal(params, pid, 10.0, state.speed, dt)
        state = step_bicycle(state, ControlCommand(accel, 0.0), dt)
        speeds.append(state.speed)
    assert all(abs(v - 10.0) <= 0.1 for v in speeds[19:])


def test_pid_integral_is_clamped() -> None:
    params = PidParams(kp=0.0, ki=1.0, integral_limit=2.0)
    pid = PidState()
    for _ in range(100):
        _, pid = pid_longitudinal(params, pid, 1.0, 0.0, 0.1)
    assert pid.integral == 2.0


def test_pursuit_curvature_of_arc_through_target() -> None:
    assert pursuit_curvature(Vec2(3.0, 4.0)) == pytest.approx(0.32)
    assert pursuit_curvature(Vec2(5.0, 0.0)) == 0.0


def test_pure_pursuit_saturates_and_signals_end_of_path() -> None:
    state = EgoState(Pose2.at(0.0, 0.0), 5.0)
    sharp = np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 20.0]])
    assert pure_pursuit(state, sharp, 5.0) == MAX_CURVATURE
    short = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert pure_pursuit(state, short, 4.0) is None


def test_pure_pursuit_is_mirror_equivariant() -> None:
    s = np.linspace(0.0, 30.0, 61)
    curvature = 0.04
    path = np.stack([np.sin(curvature * s) / curvature, (1.0 - np.cos(curvature * s)) / curvature], axis=1)
    mirrored = path * np.array([1.0, -1.0])
    for x, y, heading in ((0.0, 0.3, 0.1), (2.0, -0.5, -0.05), (5.0, 1.0, 0.3)):
        left = pure_pursuit(EgoState(Pose2.at(x, y, heading), 5.0), path, 6.0)
        right = pure_pursuit(EgoState(Pose2.at(x, -y, -heading), 5.0), mirrored, 6.0)
        assert left is not None and right is not None
        assert right == pytest.approx(-left, abs=1e-12)
    on_line = EgoState(Pose2.at(1.0, 0.0), 5.0)
    assert pure_pursuit(on_line, np.array([[0.0, 0.0], [20.0, 0.0]]), 5.0) == 0.0


def test_pure_pursuit_follows_a_circle() -> None:
    radius, speed, dt = 20.0, 5.0, 0.1
    theta = np.linspace(0.0, 1.8 * math.pi, 400)
    path = np.stack([radius * np.sin(theta), radius - radius * np.cos(theta)], axis=1)
    params = ControllerParams()
    state = EgoState(Pose2.at(0.0, 0.0), speed)
    for _ in range(50):
        curvature = pure_pursuit(state, path, params.lookahead(state.speed))
        assert curvature is not None
        state = step_bicycle(state, ControlCommand(0.0, curvature), dt)
    centre_distance = (state.pose.position - Vec2(0.0, radius)).norm()
    assert abs(centre_distance - radius) < 0.5


def test_knot_speeds_by_central_differences() -> None:
    points = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [6.0, 0.0]])
    assert plan_knot_speeds(points, 0.5).tolist() == pytest.approx([2.0, 3.0, 5.0, 6.0])


def test_track_plan_follows_then_reports_end_of_plan() -> None:
    plan = constant_velocity_plan(5.0, 0.5, 8)
    origin = Pose2.at(0.0, 0.0)
    state = EgoState(origin, 5.0)
    pid = PidState()
    params = ControllerParams()
    for step in range(40):
        result = track_plan(state, plan, origin, step * 0.1, params, pid, 0.1)
        assert result is not None
        command, pid = result
        state = step_bicycle(state, command, 0.1)
    assert state.pose.position.x == pytest.approx(20.0, abs=0.5)
    assert abs(state.pose.position.y) < 1e-9
    assert track_plan(state, plan, origin, 4.2, params, pid, 0.1) is None
