import json
from dataclasses import replace
from pathlib import Path

import pytest

from closedloop.errors import ParseError, SchemaVersionError, ValidationError
from closedloop.procgen import LAYOUTS, ProcGenConfig, generate_scenario
from closedloop.serialization import (
    MANIFEST_NAME,
    parse_scenario,
    read_scenario_dir,
    scenario_to_document,
    serialize_scenario,
    write_scenario_dir,
)
from conftest import ScenarioFactory


def test_round_trip_is_bit_exact(road: ScenarioFactory) -> None:
    scenario = road(agents=[("lead", 20.0, 0.0, 4.3), ("oncoming", 80.0, 3.5, 0.0)], signal=["GO"] * 120)
    data = serialize_scenario(scenario)
    assert parse_scenario(data) == scenario
    assert serialize_scenario(parse_scenario(data)) == data


@pytest.mark.slow
@pytest.mark.parametrize("layout", LAYOUTS)
def test_procgen_round_trip(layout: str) -> None:
    config = ProcGenConfig(layout=layout, signalized=layout == "Intersection")  # type: ignore[arg-type]
    for seed in range(20):
        scenario = generate_scenario(config, seed)
        assert parse_scenario(serialize_scenario(scenario)) == scenario


def test_serialize_validates(road: ScenarioFactory) -> None:
    with pytest.raises(ValidationError):
        serialize_scenario(replace(road(), dt=0.0))


def test_malformed_json_is_a_parse_error() -> None:
    with pytest.raises(ParseError):
        parse_scenario(b'{"schema_version": 1, "id": ')


def test_truncated_document_is_a_parse_error(road: ScenarioFactory) -> None:
    data = serialize_scenario(road())
    with pytest.raises(ParseError):
        parse_scenario(data[: len(data) // 2])


def test_missing_field_is_a_parse_error(road: ScenarioFactory) -> None:
    document = scenario_to_document(road())
    del document["tracks"]
    with pytest.raises(ParseError) as info:
        parse_scenario(json.dumps(document).encode())
    assert "tracks" in info.value.field


def test_wrong_type_is_a_parse_error(road: ScenarioFactory) -> None:
    document = scenario_to_document(road())
    document["step_count"] = "many"
    with pytest.raises(ParseError):
        parse_scenario(json.dumps(document).encode())


def test_schema_version_mismatch(road: ScenarioFactory) -> None:
    document = scenario_to_document(road())
    document["schema_version"] = 99
    with pytest.raises(SchemaVersionError) as info:
        parse_scenario(json.dumps(document).encode())
    assert info.value.found == 99


def test_scenario_directory_keeps_manifest_order(road: ScenarioFactory, tmp_path: Path) -> None:
    scenarios = [replace(road(), id=name) for name in ("zeta", "alpha", "mid")]
    write_scenario_dir(scenarios, tmp_path)
    assert json.loads((tmp_path / MANIFEST_NAME).read_text())["ids"] == ["zeta", "alpha", "mid"]
    assert [s.id for s in read_scenario_dir(tmp_path)] == ["zeta", "alpha", "mid"]
    (tmp_path / MANIFEST_NAME).unlink()
    assert [s.id for s in read_scenario_dir(tmp_path)] == ["alpha", "mid", "zeta"]
