"""
Score aggregation: scorer weights, the gated per-frame EPDMS, route
completion, the closed-loop driving score and displacement errors.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Final, Literal

import numpy as np

from ..errors import ConfigurationError, LengthMismatchError, ValidationError
from ..geometry import FloatArray, Meters, Seconds, polyline_length
from ..roadmap import Polyline

type Feature = Literal["ttc", "ep", "lk", "hc", "ec"]
"""Soft quality features of the frame score."""

type ScoreMode = Literal["open-loop", "closed-loop"]
"""Open loop scores ego progress; closed loop drops it."""

type FaultRule = Literal["standard", "strict"]
"""``strict`` counts every overlap as an at-fault collision."""

MODE_FEATURES: Final[Mapping[ScoreMode, tuple[Feature, ...]]] = {
    "open-loop": ("ttc", "ep", "lk", "hc", "ec"),
    "closed-loop": ("ttc", "lk", "hc", "ec"),
}

PROGRESS_EPSILON: Final = 1e-6


@dataclass(frozen=True, slots=True)
class ComfortThresholds:
    """Bounds on |acceleration| (m/s²), |jerk| (m/s³) and |yaw rate| (rad/s)."""

    accel: float = 4.89
    jerk: float = 8.37
    yaw_rate: float = 0.95

    def __post_init__(self) -> None:
        if min(self.accel, self.jerk, self.yaw_rate) <= 0.0:
            raise ConfigurationError("weights.thresholds", "comfort thresholds must be positive")


@dataclass(frozen=True, slots=True)
class ScorerWeights:
    """Feature weights and the thresholds of every metric."""

    ttc: float = 5.0
    ep: float = 5.0
    lk: float = 2.0
    hc: float = 2.0
    ec: float = 2.0
    thresholds: ComfortThresholds = field(default_factory=ComfortThresholds)
    ttc_threshold: Seconds = 1.0
    ttc_horizon: Seconds = 2.0
    lk_offset_threshold: Meters = 0.5
    lk_window: Seconds = 2.0
    fault_rule: FaultRule = "standard"

    def __post_init__(self) -> None:
        for name in ("ttc", "ep", "lk", "hc", "ec"):
            if getattr(self, name) < 0.0:
                raise ConfigurationError(f"weights.{name}", "must be non-negative")
        for name in ("ttc_threshold", "ttc_horizon", "lk_offset_threshold", "lk_window"):
            if getattr(self, name) <= 0.0:
                raise ConfigurationError(f"weights.{name}", "must be positive")
        if self.fault_rule not in ("standard", "strict"):
            raise ConfigurationError("weights.fault_rule", f"unknown rule {self.fault_rule!r}")

    def weight(self, feature: Feature) -> float:
        return float(getattr(self, feature))


@dataclass(frozen=True, slots=True)
class FrameScore:
    """
    Critical flags, soft features and the gated score of one frame. ``ep`` is
    only present in open-loop frames.
    """

    nc: bool
    dac: bool
    tlc: bool
    ddc: bool
    lk: float
    ttc: float
    hc: float
    ec: float
    ep: float | None
    epdms: float

    @property
    def critical_ok(self) -> bool:
        return self.nc and self.dac and self.tlc and self.ddc

    def features(self) -> dict[Feature, float]:
        values: dict[Feature, float] = {"ttc": self.ttc, "lk": self.lk, "hc": self.hc, "ec": self.ec}
        if self.ep is not None:
            values["ep"] = self.ep
        return values


@dataclass(frozen=True, slots=True)
class CriticalFlags:
    nc: bool = True
    dac: bool = True
    tlc: bool = True
    ddc: bool = True

    def all(self) -> bool:
        return self.nc and self.dac and self.tlc and self.ddc


def epdms_frame(
    flags: CriticalFlags,
    features: Mapping[Feature, float],
    weights: ScorerWeights,
    mode: ScoreMode = "closed-loop",
) -> float:
    """
    The product of the critical flags times the weighted mean of the mode's
    features.

    :raises ValidationError: if a feature of the mode is missing or outside [0, 1].
    :raises ConfigurationError: if the mode's weights sum to zero.
    """
    numerator = denominator = 0.0
    for feature in MODE_FEATURES[mode]:
        try:
            value = features[feature]
        except KeyError:
            raise ValidationError(f"features.{feature}", f"required in {mode} scoring") from None
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"features.{feature}", f"{value} outside [0, 1]")
        w = weights.weight(feature)
        numerator += w * value
        denominator += w
    if denominator <= 0.0:
        raise ConfigurationError("weights", f"total {mode} feature weight is zero")
    return numerator / denominator if flags.all() else 0.0


def make_frame_score(
    flags: CriticalFlags,
    features: Mapping[Feature, float],
    weights: ScorerWeights,
    mode: ScoreMode,
) -> FrameScore:
    return FrameScore(
        nc=flags.nc,
        dac=flags.dac,
        tlc=flags.tlc,
        ddc=flags.ddc,
        lk=features["lk"],
        ttc=features["ttc"],
        hc=features["hc"],
        ec=features["ec"],
        ep=features.get("ep") if mode == "open-loop" else None,
        epdms=epdms_frame(flags, features, weights, mode),
    )


def route_completion(ego_path: FloatArray, expert_path: FloatArray) -> float:
    """
    Fraction of the expert route covered: the furthest projection of any ego
    position onto the expert polyline over its length, clamped to [0, 1].
    A degenerate expert route counts as complete.
    """
    length = polyline_length(expert_path)
    if length <= PROGRESS_EPSILON or len(ego_path) == 0:
        return 1.0 if length <= PROGRESS_EPSILON else 0.0
    s, _, _, _ = Polyline(expert_path).project_many(np.asarray(ego_path, dtype=np.float64))
    return min(max(float(s.max()) / length, 0.0), 1.0)


def closed_loop_score(rc: float, frame_scores: Iterable[float]) -> float:
    """
    Driving score on a 0 to 100 scale: route completion times the mean frame score.

    :raises ValidationError: if there are no frames.
    """
    values = list(frame_scores)
    if not values:
        raise ValidationError("frames", "at least one frame is required")
    return 100.0 * rc * (sum(values) / len(values))


def ade(candidate: FloatArray, ground_truth: FloatArray) -> Meters:
    """
    Mean Euclidean distance between aligned (T, 2) trajectories.

    :raises LengthMismatchError: if the lengths differ.
    """
    if len(candidate) != len(ground_truth):
        raise LengthMismatchError(f"candidate has {len(candidate)} points, ground truth {len(ground_truth)}")
    if len(candidate) == 0:
        return 0.0
    return float(np.linalg.norm(np.asarray(candidate) - np.asarray(ground_truth), axis=1).mean())


def min_ade(candidates: Sequence[FloatArray], ground_truth: FloatArray) -> Meters:
    """
    Smallest :func:`ade` over the candidates.

    :raises ValidationError: if there are no candidates.
    :raises LengthMismatchError: if any candidate's length differs from the ground truth.
    """
    if not candidates:
        raise ValidationError("candidates", "at least one candidate is required")
    return min(ade(candidate, ground_truth) for candidate in candidates)
