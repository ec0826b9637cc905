"""
JSON configuration for the engine: packaged defaults, user files, command-line
overrides and the resolved-config echo written next to every run's outputs.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import Any, Final

from .engine import EngineConfig, RolloutSettings
from .errors import ConfigurationError, ParseError
from .metrics.scoring import ComfortThresholds, ScorerWeights
from .traffic import AdversaryScript, IdmParams
from .vehicle import ControllerParams, PidParams

logger = logging.getLogger(__name__)

DEFAULTS_RESOURCE: Final = "engine_defaults.json"

RESOLVED_CONFIG_NAME: Final = "resolved_config.json"

type ConfigDocument = dict[str, Any]
"""A JSON object holding (part of) an engine configuration."""

_NESTED: Final[Mapping[type, Mapping[str, type]]] = {
    EngineConfig: {
        "rollout": RolloutSettings,
        "weights": ScorerWeights,
        "controller": ControllerParams,
        "idm": IdmParams,
    },
    ScorerWeights: {"thresholds": ComfortThresholds},
    ControllerParams: {"pid": PidParams},
}


def _build[T](cls: type[T], document: Mapping[str, Any], where: str) -> T:
    if not isinstance(document, Mapping):
        raise ConfigurationError(where.rstrip(".") or "<config>", "expected a JSON object")
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(document) - known)
    if unknown:
        raise ConfigurationError(f"{where}{unknown[0]}", "unknown key")
    nested = _NESTED.get(cls, {})
    kwargs: dict[str, Any] = {}
    for key, value in document.items():
        if key in nested:
            kwargs[key] = _build(nested[key], value, f"{where}{key}.")
        elif key == "adversary":
            kwargs[key] = AdversaryScript.from_dict(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as error:
        raise ConfigurationError(where.rstrip(".") or "<config>", str(error)) from None


def engine_config_from_dict(document: Mapping[str, Any]) -> EngineConfig:
    """
    Builds an :class:`EngineConfig`; absent keys keep their defaults.

    :raises ConfigurationError: on unknown keys or invalid values.
    """
    return _build(EngineConfig, document, "")


def engine_config_to_dict(cfg: EngineConfig) -> ConfigDocument:
    return cfg.to_dict()


def default_document() -> ConfigDocument:
    """The packaged default configuration."""
    text = resources.files("closedloop").joinpath("data", DEFAULTS_RESOURCE).read_text(encoding="utf-8")
    document: ConfigDocument = json.loads(text)
    return document


def merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> ConfigDocument:
    """
    Recursive merge; nested objects merge key by key, everything else is
    replaced. Objects carrying a ``kind`` are tagged unions and replace whole.
    """
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and "kind" not in value and isinstance(merged.get(key), Mapping):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_json_object(path: Path) -> ConfigDocument:
    """
    :raises ParseError: if the file is missing, is not JSON or is not an object.
    """
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except OSError as error:
        raise ParseError(str(path), error.strerror or "cannot read file") from None
    except json.JSONDecodeError as error:
        raise ParseError(path.name, f"malformed JSON: {error}") from None
    if not isinstance(document, dict):
        raise ParseError(path.name, "expected a JSON object")
    return document


def load_engine_config(
    path: Path | None = None, overrides: Mapping[str, Any] | None = None
) -> EngineConfig:
    """
    Packaged defaults, then the file at ``path``, then ``overrides``.

    :raises ParseError: if the file cannot be read.
    :raises ConfigurationError: on unknown keys or invalid values.
    """
    document = default_document()
    if path is not None:
        document = merge(document, read_json_object(path))
        logger.debug("engine config read from %s", path)
    if overrides:
        document = merge(document, overrides)
    return engine_config_from_dict(document)


def write_resolved_config(directory: Path, document: Mapping[str, Any]) -> Path:
    """
    Writes ``resolved_config.json``: everything needed to repeat the run
    (engine configuration, policy spec, seeds, inputs).
    """
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_CONFIG_NAME
    path.write_text(json.dumps(document, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path
