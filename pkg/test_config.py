import json
from pathlib import Path

import pytest

from closedloop.config import (
    RESOLVED_CONFIG_NAME,
    default_document,
    engine_config_from_dict,
    load_engine_config,
    merge,
    write_resolved_config,
)
from closedloop.engine import EngineConfig
from closedloop.errors import ConfigurationError, ParseError
from closedloop.traffic import CutIn, HardBrake, TimeAt


def test_packaged_defaults_match_the_dataclass_defaults() -> None:
    assert load_engine_config() == EngineConfig()
    assert engine_config_from_dict(default_document()).to_dict() == default_document()


def test_resolved_config_round_trips() -> None:
    cfg = load_engine_config(overrides={"scorer": "truncated-q", "rollout": {"k": 3}})
    assert engine_config_from_dict(cfg.to_dict()) == cfg


def test_merge_is_recursive() -> None:
    base = {"a": 1, "nested": {"x": 1, "y": 2}}
    assert merge(base, {"nested": {"y": 3}}) == {"a": 1, "nested": {"x": 1, "y": 3}}
    assert merge(base, {"nested": 5}) == {"a": 1, "nested": 5}
    assert base == {"a": 1, "nested": {"x": 1, "y": 2}}


def test_tagged_unions_replace_whole() -> None:
    merged = merge(
        default_document(),
        {"adversary": {"trigger": {"kind": "time-at", "time": 3.0},
                       "maneuver": {"kind": "cut-in", "lateral": 3.5}}},
    )
    assert merged["adversary"]["trigger"] == {"kind": "time-at", "time": 3.0}
    cfg = engine_config_from_dict(merged)
    assert cfg.adversary.trigger == TimeAt(3.0)
    assert cfg.adversary.maneuver == CutIn(lateral=3.5)
    assert isinstance(EngineConfig().adversary.maneuver, HardBrake)


def test_overrides_layer_over_the_file(tmp_path: Path) -> None:
    path = tmp_path / "engine.json"
    path.write_text(json.dumps({"replan_rate": 10, "weights": {"ttc": 3.0}}), encoding="utf-8")
    cfg = load_engine_config(path, {"replan_rate": 20})
    assert cfg.replan_rate == 20
    assert cfg.weights.ttc == 3.0
    assert cfg.weights.ep == 5.0
    assert cfg.weights.thresholds.accel == 4.89


def test_unknown_keys_are_rejected() -> None:
    with pytest.raises(ConfigurationError) as info:
        engine_config_from_dict({"replan_rat": 5})
    assert info.value.field == "replan_rat"
    with pytest.raises(ConfigurationError) as info:
        engine_config_from_dict({"weights": {"thresholds": {"snap": 1.0}}})
    assert info.value.field == "weights.thresholds.snap"
    with pytest.raises(ConfigurationError):
        engine_config_from_dict({"rollout": [1, 2]})


def test_invalid_values_are_rejected() -> None:
    with pytest.raises(ConfigurationError):
        engine_config_from_dict({"scorer": "psychic"})
    with pytest.raises(ConfigurationError):
        engine_config_from_dict({"idm": {"headway": -1.0}})


def test_unreadable_files(tmp_path: Path) -> None:
    with pytest.raises(ParseError):
        load_engine_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ParseError):
        load_engine_config(broken)
    listed = tmp_path / "list.json"
    listed.write_text("[]", encoding="utf-8")
    with pytest.raises(ParseError):
        load_engine_config(listed)


def test_write_resolved_config(tmp_path: Path) -> None:
    path = write_resolved_config(tmp_path / "out", {"engine": EngineConfig().to_dict(), "seed": 3})
    assert path.name == RESOLVED_CONFIG_NAME
    document = json.loads(path.read_text(encoding="utf-8"))
    assert document["seed"] == 3
    assert engine_config_from_dict(document["engine"]) == EngineConfig()
