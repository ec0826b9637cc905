import math

import numpy as np
import pytest

from closedloop.errors import ConfigurationError, ValidationError
from closedloop.geometry import Pose2, Vec2
from closedloop.plans import CandidatePlan, constant_velocity_plan
from closedloop.tta import (
    RolloutConfig,
    adaptive_replan,
    discounted_sum,
    gated,
    plan_rewards,
    prefix_reward,
    propagate_world,
    select_candidate,
    three_term_q,
    transform_remainder,
    truncated_q,
)
from closedloop.vehicle import EgoState
from closedloop.world import AgentState, WorldState
from conftest import CAR, ScenarioFactory, snapshot


def moving_world(road: ScenarioFactory, *agents: AgentState) -> WorldState:
    return snapshot(road(), agents, ego=EgoState(Pose2.at(0.0, 0.0), 5.0))


def veering(plan_id: int) -> CandidatePlan:
    return CandidatePlan(tuple(Vec2(2.5 * (i + 1), -1.5 * (i + 1)) for i in range(8)), 0.5, id=plan_id)


def test_discounted_sum() -> None:
    assert discounted_sum([1.0, 1.0, 1.0], 0.9) == pytest.approx(2.71)
    assert discounted_sum([], 0.9) == 0.0


def test_gate_zeroes_everything_after_a_violation() -> None:
    assert gated([1.0, 0.5, 0.8, 1.0], [False, False, True, False]) == [1.0, 0.5, 0.0, 0.0]


def test_three_term_identity() -> None:
    rng = np.random.default_rng(7)
    for _ in range(1000):
        rewards = rng.uniform(0.0, 1.0, 12).tolist()
        gamma = float(rng.uniform(0.5, 1.0))
        horizon = int(rng.integers(1, 13))
        k = int(rng.integers(0, horizon + 1))
        direct = discounted_sum(rewards[:horizon], gamma)
        assert three_term_q(rewards, gamma, k, horizon) == pytest.approx(direct, abs=1e-12)
    rewards = [0.3, 0.7, 0.2]
    assert three_term_q(rewards, 0.9, 3, 3) == discounted_sum(rewards, 0.9)
    with pytest.raises(ValidationError):
        three_term_q(rewards, 0.9, 2, 4)


def test_rollout_config_bounds() -> None:
    with pytest.raises(ConfigurationError):
        RolloutConfig(k=9, horizon=8)
    with pytest.raises(ConfigurationError):
        RolloutConfig(k=1, gamma=1.5)
    with pytest.raises(ConfigurationError):
        RolloutConfig(k=1, propagation="Teleport")  # type: ignore[arg-type]


def test_constant_velocity_prediction(road: ScenarioFactory) -> None:
    agent = AgentState("lead", Pose2.at(10.0, 0.0), 5.0, 3.0, CAR)
    frames = propagate_world(moving_world(road, agent), 4, 0.5)
    assert [f.offset for f in frames] == [0.5, 1.0, 1.5, 2.0]
    for frame in frames:
        (predicted,) = frame.agents
        assert predicted.pose.position.x == pytest.approx(10.0 + 5.0 * frame.offset)
        assert predicted.speed == 5.0


def test_constant_acceleration_prediction_decays(road: ScenarioFactory) -> None:
    agent = AgentState("lead", Pose2.at(10.0, 0.0), 5.0, 1.0, CAR)
    frames = propagate_world(moving_world(road, agent), 4, 0.5, "ConstantAcceleration")
    (last,) = frames[-1].agents
    assert last.speed == pytest.approx(5.5)
    assert last.accel == 0.0
    assert last.pose.position.x == pytest.approx(10.0 + 5.0 + (0.5 - 1.0 / 6.0) + 5.5)


def test_decelerating_agent_stops_and_stays(road: ScenarioFactory) -> None:
    agent = AgentState("lead", Pose2.at(10.0, 0.0), 2.0, -4.0, CAR)
    frames = propagate_world(moving_world(road, agent), 6, 0.5, "ConstantAcceleration")
    xs = [f.agents[0].pose.position.x for f in frames]
    assert all(b >= a for a, b in zip(xs, xs[1:]))
    assert frames[-1].agents[0].speed == 0.0
    assert xs[-1] == pytest.approx(10.0 + 2.0 - 4.0 / 3.0)


def test_prediction_keeps_turn_rate(road: ScenarioFactory) -> None:
    agent = AgentState("turning", Pose2.at(0.0, 0.0), 5.0, 0.0, CAR, yaw_rate=0.5)
    (frame,) = propagate_world(moving_world(road, agent), 1, 1.0)
    (predicted,) = frame.agents
    assert predicted.pose.heading == pytest.approx(0.5)
    assert predicted.pose.position.x == pytest.approx(math.sin(0.5) / 0.1)
    assert predicted.pose.position.y == pytest.approx((1.0 - math.cos(0.5)) / 0.1)


def test_predicted_signals_follow_the_schedule(road: ScenarioFactory) -> None:
    world = snapshot(road(signal=["GO"] * 10 + ["STOP"] * 110))
    frames = propagate_world(world, 2, 0.5)
    assert frames[0].signals["lane-0"] == "GO"
    assert frames[1].signals["lane-0"] == "STOP"
    with pytest.raises(ValidationError):
        propagate_world(world, 0, 0.5)


def test_clean_plan_value(road: ScenarioFactory) -> None:
    world = moving_world(road)
    cfg = RolloutConfig(k=2)
    plan = constant_velocity_plan(5.0, 0.5, 8)
    assert plan_rewards(world, plan, cfg) == [1.0] * 8
    assert truncated_q(world, plan, cfg) == pytest.approx(discounted_sum([1.0] * 8, 0.99))
    assert prefix_reward(world, plan, 2, cfg) == pytest.approx(1.99)
    assert prefix_reward(world, plan, 0, cfg) == 0.0
    with pytest.raises(ValidationError):
        prefix_reward(world, plan, 9, cfg)
    with pytest.raises(ValidationError):
        truncated_q(world, plan.truncated(4), cfg)


def test_collision_gates_the_rest_of_the_plan(road: ScenarioFactory) -> None:
    parked = AgentState("parked", Pose2.at(10.0, 0.0), 0.0, 0.0, CAR)
    rewards = plan_rewards(moving_world(road, parked), constant_velocity_plan(5.0, 0.5, 8), RolloutConfig(k=1))
    assert rewards[3:] == [0.0] * 5


def test_select_prefers_the_safe_plan_and_breaks_ties_by_id(road: ScenarioFactory) -> None:
    world = moving_world(road)
    cfg = RolloutConfig(k=1)
    chosen = select_candidate(world, [veering(0), constant_velocity_plan(5.0, 0.5, 8, plan_id=1)], cfg)
    assert chosen.id == 1
    twins = [constant_velocity_plan(5.0, 0.5, 8, plan_id=3), constant_velocity_plan(5.0, 0.5, 8, plan_id=2)]
    assert select_candidate(world, twins, cfg).id == 2
    with pytest.raises(ValidationError):
        select_candidate(world, [], cfg)


def test_transform_remainder() -> None:
    plan = CandidatePlan(tuple(Vec2(float(i + 1), 0.0) for i in range(8)), 0.1, id=4)
    remainder = transform_remainder(plan, Pose2.at(0.0, 0.0), 3, Pose2.at(3.0, 0.0))
    assert remainder is not None
    assert remainder.id == 4
    assert [p.x for p in remainder.waypoints] == pytest.approx([1.0, 2.0, 3.0, 4.0, 5.0])
    turned = transform_remainder(plan, Pose2.at(0.0, 0.0), 3, Pose2.at(3.0, 0.0, math.pi / 2))
    assert turned is not None
    assert turned.waypoints[0].as_tuple() == pytest.approx((0.0, -1.0))
    assert transform_remainder(plan, Pose2.at(0.0, 0.0), 8, Pose2.at(8.0, 0.0)) is None


def test_adaptive_replan_retains_on_ties(road: ScenarioFactory) -> None:
    world = moving_world(road)
    cfg = RolloutConfig(k=1)
    straight = constant_velocity_plan(5.0, 0.5, 8, plan_id=7)
    chosen, retained = adaptive_replan(world, straight, [constant_velocity_plan(5.0, 0.5, 8, plan_id=1)], cfg)
    assert retained and chosen is straight


def test_adaptive_replan_switches_away_from_a_failing_remainder(road: ScenarioFactory) -> None:
    world = moving_world(road)
    candidates = [veering(0), constant_velocity_plan(5.0, 0.5, 8, plan_id=1)]
    chosen, retained = adaptive_replan(world, veering(9), candidates, RolloutConfig(k=1))
    assert not retained
    assert chosen.id == 1


def test_adaptive_replan_never_switches_in_a_frozen_world(road: ScenarioFactory) -> None:
    world = moving_world(road)
    cfg = RolloutConfig(k=2)
    candidates = [
        constant_velocity_plan(speed, 0.5, 8, plan_id=i) for i, speed in enumerate((3.0, 5.0, 6.0))
    ]
    remainder, retained = adaptive_replan(world, None, candidates, cfg)
    assert not retained
    frames = propagate_world(world, cfg.horizon, 0.5)
    switches = 0
    for _ in range(100):
        chosen, retained = adaptive_replan(world, remainder, candidates, cfg, frames)
        switches += not retained
        remainder = chosen
    assert switches == 0
