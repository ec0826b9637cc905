import pytest

from closedloop.errors import ConfigurationError
from closedloop.geometry import Footprint
from closedloop.metrics import drivable_area_compliance, driving_direction_compliance, traffic_light_compliance
from closedloop.procgen import LAYOUTS, ProcGenConfig, ego_profile, generate_scenario, generate_suite
from closedloop.roadmap import RoadMap
from closedloop.scenario import ScenarioDescription, validate_scenario
from closedloop.world import SignalSchedule


def config_for(layout: str, **overrides: object) -> ProcGenConfig:
    return ProcGenConfig(layout=layout, signalized=layout == "Intersection", **overrides)  # type: ignore[arg-type]


def test_generation_is_a_pure_function_of_config_and_seed() -> None:
    config = config_for("Straight")
    assert generate_scenario(config, 5) == generate_scenario(config, 5)
    assert generate_scenario(config, 5).id != generate_scenario(config, 6).id


def test_suite_ids_are_distinct() -> None:
    suite = generate_suite(config_for("Arc"), 3, 100)
    assert len({s.id for s in suite}) == 3
    with pytest.raises(ConfigurationError):
        generate_suite(config_for("Arc"), 0, 100)


@pytest.mark.parametrize("layout", LAYOUTS)
def test_generated_scenarios_validate(layout: str) -> None:
    scenario = generate_scenario(config_for(layout), 1)
    validate_scenario(scenario)
    assert scenario.step_count == 201
    assert len(scenario.tracks) == 1 + ProcGenConfig().agent_count
    assert scenario.source == "procgen"


def assert_expert_is_clean(scenario: ScenarioDescription) -> None:
    roadmap = RoadMap(scenario.map_features)
    schedule = SignalSchedule.from_scenario(scenario)
    ego = scenario.ego_track
    previous = ego.states[0].pose.position
    for step, state in enumerate(ego.states):
        footprint = Footprint(state.pose, ego.dims.length, ego.dims.width)
        assert drivable_area_compliance(footprint, roadmap), f"off road at step {step}"
        lane = roadmap.query_lane(state.pose.position)
        assert driving_direction_compliance(state.pose.heading, lane.heading)
        assert traffic_light_compliance(previous, state.pose.position, roadmap.stop_lines, schedule.at(step))
        previous = state.pose.position


@pytest.mark.parametrize("layout", LAYOUTS)
def test_expert_log_satisfies_the_hard_constraints(layout: str) -> None:
    for seed in range(3):
        assert_expert_is_clean(generate_scenario(config_for(layout), seed))


def test_signalized_intersection_has_stop_lines_and_signals() -> None:
    scenario = generate_scenario(config_for("Intersection"), 2)
    roadmap = RoadMap(scenario.map_features)
    assert len(roadmap.stop_lines) == ProcGenConfig().lane_count + 3
    assert {d.lane_id for d in scenario.dynamic_states} == {line.lane_id for line in roadmap.stop_lines}
    own = next(d for d in scenario.dynamic_states if d.lane_id == "lane-0").signal_sequence
    assert own[-1] == "GO"


def test_expert_profile_cruises_then_brakes_to_rest() -> None:
    config = ProcGenConfig(route_length=80.0, ego_cruise_speed=8.0)
    assert ego_profile(config, 0.0) == (0.0, 8.0, 0.0)
    assert ego_profile(config, 5.0) == (40.0, 8.0, 0.0)
    s, speed, accel = ego_profile(config, 19.0)
    assert speed == pytest.approx(0.0, abs=1e-9)
    assert accel <= 0.0
    assert s == pytest.approx(80.0 + 8.0 * 8.0 / (2.0 * 1.5))


def test_config_validation() -> None:
    with pytest.raises(ConfigurationError):
        ProcGenConfig(layout="Straight", signalized=True)
    with pytest.raises(ConfigurationError):
        ProcGenConfig(duration=20.05)
    with pytest.raises(ConfigurationError):
        ProcGenConfig(layout="Roundabout")  # type: ignore[arg-type]
    with pytest.raises(ConfigurationError):
        ProcGenConfig.from_dict({"lanes": 3})
    config = ProcGenConfig.from_dict({"layout": "Arc", "agent_count": 5})
    assert ProcGenConfig.from_dict(config.to_dict()) == config
