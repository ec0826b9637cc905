"""
Versioned JSON codec for scenarios, plus scenario-directory helpers.

Floats are written with :func:`repr` precision (what :mod:`json` emits), which
round-trips every finite float bit-exactly.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any, Final, Self, cast

from .errors import ParseError, SchemaVersionError, ValidationError
from .geometry import Pose2, Vec2
from .scenario import (
    FEATURE_KINDS,
    HANDEDNESS,
    OBJECT_TYPES,
    SIGNAL_STATES,
    Dimensions,
    DynamicMapState,
    FeatureAttributes,
    FeatureKind,
    Handedness,
    MapFeature,
    ObjectType,
    ScenarioDescription,
    SignalState,
    Track,
    TrackState,
    validate_scenario,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION: Final = 1
SCENARIO_SUFFIX: Final = ".scn.json"
MANIFEST_NAME: Final = "manifest.json"


# Encoding

def _vec(v: Vec2) -> dict[str, float]:
    return {"x": v.x, "y": v.y}


def _feature_doc(feature: MapFeature) -> dict[str, Any]:
    attributes: dict[str, Any] | None = None
    if feature.attributes is not None:
        attributes = {
            "speed_limit": feature.attributes.speed_limit,
            "successors": list(feature.attributes.successors),
            "lane_id": feature.attributes.lane_id,
        }
    return {
        "id": feature.id,
        "kind": feature.kind,
        "polyline": [[p.x, p.y] for p in feature.polyline],
        "attributes": attributes,
    }


def _state_doc(state: TrackState) -> dict[str, Any]:
    return {
        "pose": {"position": _vec(state.pose.position), "heading": state.pose.heading},
        "velocity": _vec(state.velocity),
        "valid": state.valid,
    }


def _track_doc(track: Track) -> dict[str, Any]:
    return {
        "object_id": track.object_id,
        "object_type": track.object_type,
        "dims": {
            "length": track.dims.length,
            "width": track.dims.width,
            "height": track.dims.height,
        },
        "states": [_state_doc(s) for s in track.states],
    }


def scenario_to_document(scenario: ScenarioDescription) -> dict[str, Any]:
    """The JSON-ready document of a scenario (no validation)."""
    return {
        "schema_version": SCHEMA_VERSION,
        "id": scenario.id,
        "dt": scenario.dt,
        "step_count": scenario.step_count,
        "anchor": _vec(scenario.anchor),
        "ego_track_id": scenario.ego_track_id,
        "source": scenario.source,
        "handedness": scenario.handedness,
        "map_features": [_feature_doc(f) for f in scenario.map_features],
        "tracks": [_track_doc(t) for t in scenario.tracks],
        "dynamic_states": [
            {"lane_id": d.lane_id, "signal_sequence": list(d.signal_sequence)}
            for d in scenario.dynamic_states
        ],
    }


def serialize_scenario(scenario: ScenarioDescription) -> bytes:
    """
    Emits the canonical UTF-8 JSON document of a scenario.

    :raises ValidationError: if the scenario violates an invariant.
    """
    validate_scenario(scenario)
    text = json.dumps(
        scenario_to_document(scenario), indent=1, ensure_ascii=False, allow_nan=False
    )
    return (text + "\n").encode("utf-8")


# Decoding

class _Reader:
    """Typed accessors over a decoded JSON value, tracking the field path for errors."""

    __slots__ = ("_value", "_path")

    _value: Any
    _path: str

    def __new__(cls, value: Any, path: str = "") -> Self:
        self = object.__new__(cls)
        self._value = value
        self._path = path
        return self

    def raw(self) -> Any:
        return self._value

    def _fail(self, message: str) -> ParseError:
        return ParseError(self._path or "<document>", message)

    def __getitem__(self, key: str | int) -> _Reader:
        path = f"{self._path}[{key}]" if isinstance(key, int) else (
            f"{self._path}.{key}" if self._path else key
        )
        if isinstance(key, int):
            items = self.as_list()
            if not 0 <= key < len(items):
                raise self._fail(f"index {key} out of range")
            return _Reader(items[key], path)
        if not isinstance(self._value, dict):
            raise self._fail("expected an object")
        if key not in self._value:
            raise ParseError(path, "missing field")
        return _Reader(self._value[key], path)

    def is_null(self) -> bool:
        return self._value is None

    def as_float(self) -> float:
        value = self._value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self._fail("expected a number")
        result = float(value)
        if not math.isfinite(result):
            raise self._fail("expected a finite number")
        return result

    def as_int(self) -> int:
        value = self._value
        if isinstance(value, bool) or not isinstance(value, int):
            raise self._fail("expected an integer")
        return value

    def as_str(self) -> str:
        if not isinstance(self._value, str):
            raise self._fail("expected a string")
        return self._value

    def as_bool(self) -> bool:
        if not isinstance(self._value, bool):
            raise self._fail("expected a boolean")
        return self._value

    def as_list(self) -> list[Any]:
        if not isinstance(self._value, list):
            raise self._fail("expected a list")
        return self._value

    def items(self) -> Iterable[_Reader]:
        for i, _ in enumerate(self.as_list()):
            yield self[i]

    def choice[T: str](self, options: Sequence[T]) -> T:
        value = self.as_str()
        if value not in options:
            raise self._fail(f"expected one of {', '.join(options)}, got {value!r}")
        return cast(T, value)

    def vec(self) -> Vec2:
        return Vec2(self["x"].as_float(), self["y"].as_float())

    def point(self) -> Vec2:
        pair = self.as_list()
        if len(pair) != 2:
            raise self._fail("expected an [x, y] pair")
        return Vec2(self[0].as_float(), self[1].as_float())


def _parse_feature(r: _Reader) -> MapFeature:
    attributes: FeatureAttributes | None = None
    attrs = r["attributes"]
    if not attrs.is_null():
        speed = attrs["speed_limit"]
        lane = attrs["lane_id"]
        attributes = FeatureAttributes(
            speed_limit=None if speed.is_null() else speed.as_float(),
            successors=tuple(s.as_str() for s in attrs["successors"].items()),
            lane_id=None if lane.is_null() else lane.as_str(),
        )
    kind: FeatureKind = r["kind"].choice(FEATURE_KINDS)
    return MapFeature(
        id=r["id"].as_str(),
        kind=kind,
        polyline=tuple(p.point() for p in r["polyline"].items()),
        attributes=attributes,
    )


def _parse_state(r: _Reader) -> TrackState:
    pose = r["pose"]
    return TrackState(
        pose=Pose2(pose["position"].vec(), pose["heading"].as_float()),
        velocity=r["velocity"].vec(),
        valid=r["valid"].as_bool(),
    )


def _parse_track(r: _Reader) -> Track:
    dims = r["dims"]
    object_type: ObjectType = r["object_type"].choice(OBJECT_TYPES)
    return Track(
        object_id=r["object_id"].as_str(),
        object_type=object_type,
        dims=Dimensions(dims["length"].as_float(), dims["width"].as_float(), dims["height"].as_float()),
        states=tuple(_parse_state(s) for s in r["states"].items()),
    )


def scenario_from_document(document: Any) -> ScenarioDescription:
    """
    Builds a scenario from a decoded JSON document and validates it.

    :raises ParseError: if the document is malformed.
    :raises SchemaVersionError: if the schema version is not supported.
    :raises ValidationError: if the scenario violates an invariant.
    """
    r = _Reader(document)
    version = r["schema_version"]
    if version.raw() != SCHEMA_VERSION or isinstance(version.raw(), bool):
        raise SchemaVersionError(version.raw(), SCHEMA_VERSION)
    try:
        handedness: Handedness = r["handedness"].choice(HANDEDNESS)
        scenario = ScenarioDescription(
            id=r["id"].as_str(),
            dt=r["dt"].as_float(),
            step_count=r["step_count"].as_int(),
            anchor=r["anchor"].vec(),
            ego_track_id=r["ego_track_id"].as_str(),
            map_features=tuple(_parse_feature(f) for f in r["map_features"].items()),
            tracks=tuple(_parse_track(t) for t in r["tracks"].items()),
            dynamic_states=tuple(
                DynamicMapState(
                    lane_id=d["lane_id"].as_str(),
                    signal_sequence=tuple(
                        cast(SignalState, s.choice(SIGNAL_STATES))
                        for s in d["signal_sequence"].items()
                    ),
                )
                for d in r["dynamic_states"].items()
            ),
            source=r["source"].as_str(),
            handedness=handedness,
        )
    except ValidationError as error:
        if isinstance(error, ParseError):
            raise
        raise ParseError(error.field, error.message) from None
    validate_scenario(scenario)
    return scenario


def parse_scenario(data: bytes) -> ScenarioDescription:
    """
    Parses a scenario document produced by :func:`serialize_scenario`.

    :raises ParseError: if the bytes are not a well-formed scenario document.
    """
    try:
        document = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise ParseError("<document>", f"malformed JSON: {error}") from None
    return scenario_from_document(document)


# Scenario directories

def read_scenario(path: Path) -> ScenarioDescription:
    """
    :raises ParseError: if the file cannot be read or is not a valid scenario.
    """
    try:
        data = path.read_bytes()
    except OSError as error:
        raise ParseError(str(path), error.strerror or "cannot read file") from None
    return parse_scenario(data)


def write_scenario(scenario: ScenarioDescription, path: Path) -> None:
    path.write_bytes(serialize_scenario(scenario))


def scenario_filename(scenario_id: str) -> str:
    return f"{scenario_id}{SCENARIO_SUFFIX}"


def write_scenario_dir(scenarios: Sequence[ScenarioDescription], directory: Path) -> list[Path]:
    """Writes one file per scenario plus a manifest listing ids in order."""
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for scenario in scenarios:
        path = directory / scenario_filename(scenario.id)
        write_scenario(scenario, path)
        paths.append(path)
    manifest = {"ids": [s.id for s in scenarios]}
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    logger.info("wrote %d scenarios to %s", len(scenarios), directory)
    return paths


def read_scenario_dir(directory: Path) -> list[ScenarioDescription]:
    """
    Reads a scenario directory, in manifest order when a manifest exists,
    otherwise in sorted file-name order.
    """
    manifest_path = directory / MANIFEST_NAME
    if manifest_path.exists():
        try:
            manifest: Mapping[str, Any] = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as error:
            raise ParseError(MANIFEST_NAME, f"malformed JSON: {error}") from None
        ids = _Reader(manifest)["ids"]
        paths = [directory / scenario_filename(i.as_str()) for i in ids.items()]
    else:
        paths = sorted(directory.glob(f"*{SCENARIO_SUFFIX}"))
    return [read_scenario(p) for p in paths]
