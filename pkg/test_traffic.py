import math

import numpy as np
import pytest

from closedloop.errors import ConfigurationError, OverlapError, ValidationError
from closedloop.geometry import Pose2
from closedloop.roadmap import RoadMap
from closedloop.traffic import (
    AdversarialTraffic,
    AdversaryScript,
    CutIn,
    EgoGapBelow,
    HardBrake,
    IdmParams,
    IdmTraffic,
    LogReplayTraffic,
    TimeAt,
    assign_lane,
    default_adversary_target,
    idm_accel,
    idm_agent_step,
    make_traffic,
    replay_step,
)
from closedloop.vehicle import EgoState
from closedloop.world import AgentState
from conftest import CAR, ScenarioFactory, snapshot


def car(object_id: str, x: float, speed: float, lane_id: str | None = "lane-0") -> AgentState:
    return AgentState(object_id, Pose2.at(x, 0.0), speed, 0.0, CAR, lane_id=lane_id)


def test_idm_accel_against_closed_form() -> None:
    params = IdmParams(v0=15.0)
    expected = 1.5 * (1.0 - (10.0 / 15.0) ** 4 - (17.0 / 50.0) ** 2)
    assert idm_accel(params, 10.0, 50.0, 0.0) == pytest.approx(expected)


def test_idm_equilibria() -> None:
    params = IdmParams(v0=12.0)
    assert abs(idm_accel(params, 12.0, math.inf, 0.0)) <= 1e-9
    assert abs(idm_accel(params, 0.0, params.jam_distance, 0.0)) <= 1e-9


def test_idm_accel_is_bounded_and_rejects_overlap() -> None:
    params = IdmParams(v0=10.0)
    assert idm_accel(params, 10.0, 0.5, 10.0) == -2.0 * params.b
    with pytest.raises(OverlapError):
        idm_accel(params, 5.0, 0.0, 0.0)


def test_idm_accel_is_monotone() -> None:
    params = IdmParams(v0=15.0)
    rng = np.random.default_rng(11)
    for v, gap, dv in rng.uniform([0.0, 1.0, -10.0], [20.0, 80.0, 10.0], (300, 3)):
        base = idm_accel(params, v, gap, dv)
        assert idm_accel(params, v, gap, dv + 1.0) <= base + 1e-12
        assert idm_accel(params, v, gap + 1.0, dv) >= base - 1e-12


def test_idm_params_are_validated() -> None:
    with pytest.raises(ConfigurationError):
        IdmParams(headway=0.0)
    with pytest.raises(ConfigurationError):
        IdmParams(delta=0.5)


def test_agent_reacts_to_braking_ego(road: ScenarioFactory) -> None:
    scenario = road()
    agent = car("follower", 0.0, 10.0)
    world = snapshot(scenario, [agent], ego=EgoState(Pose2.at(20.0, 0.0), 0.0))
    moved = idm_agent_step(world, agent, IdmParams(), 0.1)
    assert moved.accel < 0.0
    assert moved.lane_id == "lane-0"


def test_agent_holds_at_red_stop_line(road: ScenarioFactory) -> None:
    scenario = road(signal=["STOP"] * 120)
    agent = car("a", 10.0, 8.0)
    roadmap = RoadMap(scenario.map_features)
    for step in range(100):
        world = snapshot(scenario, [agent], step=step, roadmap=roadmap)
        agent = idm_agent_step(world, agent, IdmParams(), 0.1)
        assert agent.pose.position.x + CAR.length / 2 < 40.0
    assert agent.speed < 0.5


def test_agent_without_lane_coasts(road: ScenarioFactory) -> None:
    scenario = road()
    agent = car("a", 0.0, 4.0, lane_id=None)
    moved = idm_agent_step(snapshot(scenario, [agent]), agent, IdmParams(), 0.5)
    assert moved.pose.position.x == pytest.approx(2.0)
    assert moved.speed == 4.0


def leader_speed(t: float) -> float:
    if t < 10.0:
        return 10.0
    if t < 15.0:
        return 10.0 - 2.0 * (t - 10.0)
    if t < 25.0:
        return 0.0
    if t < 35.0:
        return t - 25.0
    return 10.0


def test_idm_platoon_never_overlaps(road: ScenarioFactory) -> None:
    scenario = road()
    roadmap = RoadMap(scenario.map_features)
    dt = 0.1
    leader = car("leader", 50.0, 10.0)
    followers = [car(f"f{i}", 50.0 - 20.0 * (i + 1), 10.0) for i in range(5)]
    params = IdmParams()
    for step in range(600):
        world = snapshot(scenario, [leader, *followers], roadmap=roadmap)
        followers = [idm_agent_step(world, f, params, dt) for f in followers]
        speed = leader_speed((step + 1) * dt)
        x = leader.pose.position.x + 0.5 * (leader.speed + speed) * dt
        leader = car("leader", x, speed)
        chain = [leader, *followers]
        for front, back in zip(chain, chain[1:]):
            assert not front.footprint().overlaps(back.footprint())
            assert back.pose.position.x < front.pose.position.x


def test_assign_lane_requires_alignment(road: ScenarioFactory) -> None:
    roadmap = RoadMap(road().map_features)
    east = AgentState("a", Pose2.at(5.0, 0.2), 3.0, 0.0, CAR)
    assert assign_lane(roadmap, east).lane_id == "lane-0"
    wrong_way = AgentState("b", Pose2.at(5.0, 0.2, math.pi), 3.0, 0.0, CAR)
    assert assign_lane(roadmap, wrong_way).lane_id is None


def test_replay_matches_the_log(road: ScenarioFactory) -> None:
    scenario = road(agents=[("lead", 20.0, 0.0, 4.0)])
    (agent,) = replay_step(scenario, 7)
    logged = scenario.track("lead").states[7]
    assert agent.pose == logged.pose
    assert agent.speed == pytest.approx(4.0)
    with pytest.raises(ValidationError):
        replay_step(scenario, scenario.step_count)


def test_log_replay_traffic_steps_from_the_log(road: ScenarioFactory) -> None:
    scenario = road(agents=[("lead", 20.0, 0.0, 4.0)])
    traffic = LogReplayTraffic(scenario)
    world = snapshot(scenario, replay_step(scenario, 3), step=3)
    (agent,) = traffic.step(world, scenario.dt)
    assert agent.pose == scenario.track("lead").states[4].pose


def test_idm_traffic_assigns_lanes_at_start(road: ScenarioFactory) -> None:
    scenario = road(agents=[("lead", 20.0, 0.0, 4.0)])
    traffic = IdmTraffic(IdmParams())
    (agent,) = traffic.start(snapshot(scenario, replay_step(scenario, 0)))
    assert agent.lane_id == "lane-0"


def test_adversary_binds_nearest_agent_ahead_and_brakes(road: ScenarioFactory) -> None:
    scenario = road(agents=[("far", 200.0, 0.0, 5.0), ("lead", 20.0, 0.0, 5.0)])
    traffic = AdversarialTraffic(scenario, AdversaryScript(TimeAt(0.0), HardBrake(6.0)))
    world = snapshot(scenario, replay_step(scenario, 0), ego=EgoState(Pose2.at(0.0, 0.0), 5.0))
    traffic.start(world)
    assert list(traffic.scripts) == ["lead"]
    moved = {a.object_id: a for a in traffic.step(world, 0.1)}
    assert moved["lead"].speed == pytest.approx(4.4)
    assert moved["lead"].triggered_at == 0.0
    assert moved["far"].pose == scenario.track("far").states[1].pose


def test_adversary_cut_in_ramps_laterally(road: ScenarioFactory) -> None:
    scenario = road(agents=[("side", 20.0, 0.0, 5.0)])
    script = AdversaryScript(TimeAt(0.0), CutIn(-3.5, 2.0))
    traffic = AdversarialTraffic(scenario, script, {"side": script})
    agents = replay_step(scenario, 0)
    for step in range(30):
        agents = traffic.step(snapshot(scenario, agents, step=step), 0.1)
    (side,) = agents
    assert side.pose.position.y == pytest.approx(-3.5)
    assert side.pose.position.x == pytest.approx(20.0 + 5.0 * 3.0)


def test_untriggered_adversary_replays_the_log(road: ScenarioFactory) -> None:
    scenario = road(agents=[("lead", 60.0, 0.0, 5.0)])
    script = AdversaryScript(EgoGapBelow(5.0), HardBrake())
    traffic = AdversarialTraffic(scenario, script, {"lead": script})
    world = snapshot(scenario, replay_step(scenario, 0), ego=EgoState(Pose2.at(0.0, 0.0), 5.0))
    (lead,) = traffic.step(world, 0.1)
    assert lead.triggered_at is None
    assert lead.pose == scenario.track("lead").states[1].pose


def test_adversary_script_documents() -> None:
    script = AdversaryScript(TimeAt(3.0), CutIn(2.0, 1.5))
    assert script.to_dict() == {
        "trigger": {"kind": "time-at", "time": 3.0},
        "maneuver": {"kind": "cut-in", "lateral": 2.0, "duration": 1.5},
    }
    assert AdversaryScript.from_dict(script.to_dict()) == script
    assert AdversaryScript.from_dict({}) == AdversaryScript()
    with pytest.raises(ConfigurationError):
        AdversaryScript.from_dict({"trigger": {"kind": "sometime"}})
    with pytest.raises(ConfigurationError):
        AdversaryScript.from_dict({"maneuver": {"kind": "hard-brake", "decel": 20.0}})
    with pytest.raises(ConfigurationError):
        AdversaryScript.from_dict({"target": "lead"})


def test_make_traffic_by_kind(road: ScenarioFactory) -> None:
    scenario = road()
    for kind in ("log-replay", "idm", "adversarial"):
        assert make_traffic(kind, scenario, IdmParams(), AdversaryScript()).kind == kind  # type: ignore[arg-type]


def test_default_adversary_target_is_nearest_agent_ahead(road: ScenarioFactory) -> None:
    def at(object_id: str, x: float, y: float) -> AgentState:
        return AgentState(object_id, Pose2.at(x, y), 5.0, 0.0, CAR)

    ego = EgoState(Pose2.at(0.0, 0.0), 5.0)
    agents = [at("behind", -5.0, 0.0), at("far", 70.0, 0.0), at("aside", 10.0, 7.0),
              at("ahead", 30.0, 1.0), at("nearest", 15.0, -2.0)]
    assert default_adversary_target(snapshot(road(), agents, ego=ego)) == "nearest"
    assert default_adversary_target(snapshot(road(), agents[:3], ego=ego)) is None

    facing_left = EgoState(Pose2.at(0.0, 0.0, math.pi / 2.0), 5.0)
    turned = [at("right", 20.0, 0.0), at("front", 0.5, 25.0)]
    assert default_adversary_target(snapshot(road(), turned, ego=facing_left)) == "front"
