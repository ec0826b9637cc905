"""
Episode reports and suite summaries: JSON documents, the suite and per-frame CSVs, the
canonical report digest and recomputation of the driving score from frames.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Final

from .errors import ParseError, SchemaVersionError, ValidationError
from .metrics.scoring import CriticalFlags, FrameScore, ScorerWeights, closed_loop_score, epdms_frame
from .scenario import ObjectId

logger = logging.getLogger(__name__)

REPORT_VERSION: Final = 1
REPORT_SUFFIX: Final = ".report.json"
TOLERANCE: Final = 1e-9

CSV_HEADER: Final[tuple[str, ...]] = (
    "scenario_id", "ds", "epdms_mean", "rc", "nc", "dac", "tlc", "ddc",
    "lk", "ttc", "hc", "ec", "frames", "seed",
)

SUBSCORES: Final[tuple[str, ...]] = ("nc", "dac", "tlc", "ddc", "lk", "ttc", "hc", "ec")

FRAME_CSV_HEADER: Final[tuple[str, ...]] = (
    "step", "nc", "dac", "tlc", "ddc", "lk", "ttc", "hc", "ec", "ep", "epdms",
)

type TraceSample = tuple[float, float, float]
"""x, y and heading of one step."""


@dataclass(frozen=True, slots=True)
class FrameRecord:
    step: int
    score: FrameScore


@dataclass(frozen=True, slots=True)
class EpisodeReport:
    """
    The outcome of one episode. ``ds`` is on the 0 to 100 scale; subscore
    means of the critical flags are pass fractions.
    """

    scenario_id: str
    mode: str
    traffic: str
    scorer: str
    policy: Mapping[str, Any]
    seed: int
    ds: float
    epdms_mean: float
    rc: float
    means: Mapping[str, float]
    frames: tuple[FrameRecord, ...]
    termination: str
    switches: int = 0
    emergency_brakes: int = 0
    min_ade: float | None = None
    ego_trace: tuple[TraceSample, ...] = ()
    agent_traces: Mapping[ObjectId, tuple[tuple[int, float, float, float], ...]] = field(
        default_factory=dict
    )
    config: Mapping[str, Any] = field(default_factory=dict)
    wallclock: float | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def critical_failure(self) -> bool:
        return any(not record.score.critical_ok for record in self.frames)


@dataclass(frozen=True, slots=True)
class EpisodeFailure:
    """An episode of a suite that raised instead of producing a report."""

    scenario_id: str
    seed: int
    kind: str
    message: str


def subscore_means(frames: Sequence[FrameRecord]) -> dict[str, float]:
    """Per-subscore means over the frames; ``ep`` only when every frame has it."""
    if not frames:
        raise ValidationError("frames", "at least one frame is required")
    scores = [record.score for record in frames]
    means = {name: sum(float(getattr(s, name)) for s in scores) / len(scores) for name in SUBSCORES}
    if all(s.ep is not None for s in scores):
        means["ep"] = sum(s.ep or 0.0 for s in scores) / len(scores)
    return means


def driving_score(rc: float, frames: Sequence[FrameRecord]) -> tuple[float, float]:
    """Driving score and mean frame score, both on the 0 to 100 scale."""
    values = [record.score.epdms for record in frames]
    ds = closed_loop_score(rc, values)
    return ds, 100.0 * sum(values) / len(values)


# Documents

def _frame_doc(record: FrameRecord) -> dict[str, Any]:
    s = record.score
    return {
        "step": record.step,
        "nc": s.nc, "dac": s.dac, "tlc": s.tlc, "ddc": s.ddc,
        "lk": s.lk, "ttc": s.ttc, "hc": s.hc, "ec": s.ec, "ep": s.ep,
        "epdms": s.epdms,
    }


def report_to_document(report: EpisodeReport, *, include_wallclock: bool = False) -> dict[str, Any]:
    document: dict[str, Any] = {
        "schema_version": REPORT_VERSION,
        "scenario_id": report.scenario_id,
        "mode": report.mode,
        "traffic": report.traffic,
        "scorer": report.scorer,
        "policy": dict(report.policy),
        "seed": report.seed,
        "ds": report.ds,
        "epdms_mean": report.epdms_mean,
        "rc": report.rc,
        "means": dict(report.means),
        "termination": report.termination,
        "switches": report.switches,
        "emergency_brakes": report.emergency_brakes,
        "min_ade": report.min_ade,
        "frames": [_frame_doc(record) for record in report.frames],
        "ego_trace": [list(sample) for sample in report.ego_trace],
        "agent_traces": {
            agent: [list(sample) for sample in trace]
            for agent, trace in sorted(report.agent_traces.items())
        },
        "config": dict(report.config),
    }
    if include_wallclock and report.wallclock is not None:
        document["wallclock"] = report.wallclock
    return document


def _get(document: Mapping[str, Any], key: str, where: str = "") -> Any:
    try:
        return document[key]
    except (KeyError, TypeError):
        raise ParseError(f"{where}{key}", "missing") from None


def _parse_frame(doc: Mapping[str, Any], where: str) -> FrameRecord:
    try:
        ep = _get(doc, "ep", where)
        score = FrameScore(
            nc=bool(_get(doc, "nc", where)),
            dac=bool(_get(doc, "dac", where)),
            tlc=bool(_get(doc, "tlc", where)),
            ddc=bool(_get(doc, "ddc", where)),
            lk=float(_get(doc, "lk", where)),
            ttc=float(_get(doc, "ttc", where)),
            hc=float(_get(doc, "hc", where)),
            ec=float(_get(doc, "ec", where)),
            ep=None if ep is None else float(ep),
            epdms=float(_get(doc, "epdms", where)),
        )
        return FrameRecord(int(_get(doc, "step", where)), score)
    except (TypeError, ValueError) as error:
        raise ParseError(where.rstrip("."), str(error)) from None


def report_from_document(document: Mapping[str, Any]) -> EpisodeReport:
    """
    :raises ParseError: if a field is missing or has the wrong type.
    """
    version = _get(document, "schema_version")
    if version != REPORT_VERSION:
        raise SchemaVersionError(version, REPORT_VERSION)
    try:
        frames = tuple(
            _parse_frame(doc, f"frames[{i}].") for i, doc in enumerate(_get(document, "frames"))
        )
        min_ade = _get(document, "min_ade")
        return EpisodeReport(
            scenario_id=str(_get(document, "scenario_id")),
            mode=str(_get(document, "mode")),
            traffic=str(_get(document, "traffic")),
            scorer=str(_get(document, "scorer")),
            policy=dict(_get(document, "policy")),
            seed=int(_get(document, "seed")),
            ds=float(_get(document, "ds")),
            epdms_mean=float(_get(document, "epdms_mean")),
            rc=float(_get(document, "rc")),
            means={k: float(v) for k, v in dict(_get(document, "means")).items()},
            frames=frames,
            termination=str(_get(document, "termination")),
            switches=int(_get(document, "switches")),
            emergency_brakes=int(_get(document, "emergency_brakes")),
            min_ade=None if min_ade is None else float(min_ade),
            ego_trace=tuple(
                (float(x), float(y), float(h)) for x, y, h in _get(document, "ego_trace")
            ),
            agent_traces={
                str(agent): tuple((int(s), float(x), float(y), float(h)) for s, x, y, h in trace)
                for agent, trace in dict(_get(document, "agent_traces")).items()
            },
            config=dict(_get(document, "config")),
            wallclock=document.get("wallclock"),
        )
    except (TypeError, ValueError) as error:
        raise ParseError("<report>", str(error)) from None


def canonical_json(document: Mapping[str, Any]) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"), allow_nan=False)


def report_digest(report: EpisodeReport) -> str:
    """SHA-256 of the canonical report document, wall-clock time excluded."""
    return hashlib.sha256(canonical_json(report_to_document(report)).encode("utf-8")).hexdigest()


def write_report(report: EpisodeReport, path: Path, *, include_wallclock: bool = False) -> None:
    document = report_to_document(report, include_wallclock=include_wallclock)
    path.write_text(json.dumps(document, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_report(path: Path) -> EpisodeReport:
    """
    :raises ParseError: if the file is not a report document.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        raise ParseError(path.name, f"cannot read report: {error.strerror or error}") from None
    try:
        document = json.loads(text)
    except json.JSONDecodeError as error:
        raise ParseError(path.name, f"malformed JSON: {error}") from None
    if not isinstance(document, dict):
        raise ParseError(path.name, "expected a JSON object")
    return report_from_document(document)


def report_filename(report: EpisodeReport) -> str:
    return f"{report.scenario_id}.seed{report.seed}{REPORT_SUFFIX}"


# Verification

def verify_report(report: EpisodeReport, weights: ScorerWeights | None = None) -> list[str]:
    """
    Recomputes the driving score, the mean frame score and the subscore
    means from the frames (and each frame score from its flags and features
    when ``weights`` is given).

    :returns: human-readable mismatches; empty when the report is consistent.
    """
    problems = []
    if not report.frames:
        return ["report has no frames"]
    if weights is not None:
        mode = "open-loop" if report.mode == "open-loop" else "closed-loop"
        for record in report.frames:
            s = record.score
            expected = epdms_frame(CriticalFlags(s.nc, s.dac, s.tlc, s.ddc), s.features(), weights, mode)
            if abs(expected - s.epdms) > TOLERANCE:
                problems.append(f"frame {record.step}: epdms {s.epdms!r} != {expected!r}")
    ds, epdms_mean = driving_score(report.rc, report.frames)
    if abs(ds - report.ds) > TOLERANCE:
        problems.append(f"ds {report.ds!r} != recomputed {ds!r}")
    if abs(epdms_mean - report.epdms_mean) > TOLERANCE:
        problems.append(f"epdms_mean {report.epdms_mean!r} != recomputed {epdms_mean!r}")
    for name, value in subscore_means(report.frames).items():
        stored = report.means.get(name)
        if stored is None or abs(stored - value) > TOLERANCE:
            problems.append(f"means.{name} {stored!r} != recomputed {value!r}")
    return problems


# Suites

@dataclass(frozen=True, slots=True)
class SuiteSummary:
    """Column means over a suite and counts of episodes failing each constraint."""

    count: int
    means: Mapping[str, float]
    failures: Mapping[str, int]
    errors: int = 0

    def row(self) -> list[Any]:
        """The summary as a CSV row under :data:`CSV_HEADER`."""
        return ["mean", *(self.means[c] for c in CSV_HEADER[1:-1]), ""]


def csv_row(report: EpisodeReport) -> list[Any]:
    return [
        report.scenario_id, report.ds, report.epdms_mean, report.rc,
        *(report.means[name] for name in SUBSCORES),
        report.frame_count, report.seed,
    ]


def aggregate(reports: Iterable[EpisodeReport], errors: int = 0) -> SuiteSummary:
    """
    Arithmetic means of every numeric CSV column plus failure counts.

    :raises ValidationError: if there are no reports.
    """
    reports = list(reports)
    if not reports:
        raise ValidationError("reports", "at least one report is required")
    columns = CSV_HEADER[1:-1]
    rows = [dict(zip(CSV_HEADER, csv_row(r))) for r in reports]
    means = {c: math.fsum(float(row[c]) for row in rows) / len(rows) for c in columns}
    failures = {
        name: sum(1 for r in reports if r.means[name] < 1.0) for name in ("nc", "dac", "tlc", "ddc")
    }
    return SuiteSummary(len(reports), MappingProxyType(means), MappingProxyType(failures), errors)


def write_suite_csv(reports: Sequence[EpisodeReport], path: Path, errors: int = 0) -> SuiteSummary | None:
    """Writes one row per report plus a final row of column means."""
    summary = aggregate(reports, errors) if reports else None
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for report in reports:
            writer.writerow(csv_row(report))
        if summary is not None:
            writer.writerow(summary.row())
    logger.info("wrote %d report rows to %s", len(reports), path)
    return summary


def frame_row(record: FrameRecord) -> list[Any]:
    score = record.score
    return [
        record.step,
        int(score.nc), int(score.dac), int(score.tlc), int(score.ddc),
        score.lk, score.ttc, score.hc, score.ec,
        "" if score.ep is None else score.ep,
        score.epdms,
    ]


def write_frame_csv(report: EpisodeReport, path: Path) -> None:
    """
    Writes one row per scored frame: the step, the critical flags as 0/1,
    the soft features and the gated frame score. ``ep`` is empty for
    closed-loop frames.
    """
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(FRAME_CSV_HEADER)
        writer.writerows(frame_row(record) for record in report.frames)
    logger.info("wrote %d frame rows to %s", report.frame_count, path)
