"""
The experiment harness: execution-horizon sweeps, the gap between the
policy's own choice and the closed-loop oracle, open-loop/closed-loop
correlation decay, test-time scaling and a component breakdown of the
truncated-value scorer.

Every experiment expands into independent episodes (scenario x seed x cell),
runs them through :func:`closedloop.engine.run_jobs` and reduces them to a
:class:`Table`, written as a CSV plus a plot-ready long-format CSV.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Final, Literal

import numpy as np
from scipy import stats

from .config import load_engine_config, read_json_object
from .engine import SCORER_NAMES, EngineConfig, ScorerName, run_jobs
from .errors import ConfigurationError, LengthMismatchError, UndefinedCorrelationError, ValidationError
from .policy import PolicySpec
from .procgen import ProcGenConfig, generate_suite
from .report import EpisodeFailure, EpisodeReport
from .scenario import ScenarioDescription
from .serialization import read_scenario_dir
from .traffic import TRAFFIC_KINDS, TrafficKind

logger = logging.getLogger(__name__)

__all__ = (
    "EXPERIMENTS",
    "ExperimentName",
    "ExperimentSpec",
    "SuiteSource",
    "Table",
    "component_analysis",
    "correlation_decay",
    "horizon_sweep",
    "load_suite",
    "objective_gap",
    "paired_one_sided_test",
    "pearson",
    "run_experiments",
    "scaling_experiment",
    "write_table",
)

type ExperimentName = Literal["horizon-sweep", "objective-gap", "correlation-decay", "scaling", "components"]

EXPERIMENTS: Final[tuple[ExperimentName, ...]] = (
    "horizon-sweep", "objective-gap", "correlation-decay", "scaling", "components",
)

TABLE_FILES: Final[Mapping[ExperimentName, str]] = {
    "horizon-sweep": "horizon_sweep",
    "objective-gap": "objective_gap",
    "correlation-decay": "correlation_decay",
    "scaling": "scaling",
    "components": "components",
}

LONG_HEADER: Final = ("figure", "series", "x", "y")

OPEN_LOOP_HORIZON: Final = 40
"""Evaluated steps of the open-loop arm of the correlation study."""

COMPONENT_SCORERS: Final[tuple[ScorerName, ...]] = ("native", "truncated-q", "truncated-q-replan")

SCALABLE_POLICIES: Final = ("noisy-expert", "lattice")


# Statistics

def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Sample Pearson correlation coefficient.

    :raises LengthMismatchError: if the sequences differ in length.
    :raises ValidationError: if there are fewer than two samples.
    :raises UndefinedCorrelationError: if either sequence has zero variance.
    """
    if len(x) != len(y):
        raise LengthMismatchError(f"{len(x)} x values, {len(y)} y values")
    if len(x) < 2:
        raise ValidationError("x", "at least two samples are required")
    a = np.asarray(x, dtype=np.float64) - np.mean(x)
    b = np.asarray(y, dtype=np.float64) - np.mean(y)
    sa, sb = float(np.sqrt(a @ a)), float(np.sqrt(b @ b))
    if sa == 0.0 or sb == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant sequence")
    return min(max(float(a @ b) / (sa * sb), -1.0), 1.0)


def paired_one_sided_test(a: Sequence[float], b: Sequence[float]) -> float:
    """
    p-value of the paired t-test of mean(a - b) > 0. Constant differences
    give 0 when positive and 1 otherwise.

    :raises LengthMismatchError: if the samples are not paired.
    :raises ValidationError: if there are fewer than two pairs.
    """
    if len(a) != len(b):
        raise LengthMismatchError(f"{len(a)} and {len(b)} samples cannot be paired")
    if len(a) < 2:
        raise ValidationError("a", "at least two pairs are required")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if np.all(diff == diff[0]):
        return 0.0 if diff[0] > 0.0 else 1.0
    return float(stats.ttest_rel(a, b, alternative="greater").pvalue)


# Specs

@dataclass(frozen=True, slots=True)
class SuiteSource:
    """Either a procedurally generated suite or a directory of scenario files."""

    procgen: ProcGenConfig | None = None
    n: int = 30
    seed: int = 0
    scenario_dir: Path | None = None

    def __post_init__(self) -> None:
        if (self.procgen is None) == (self.scenario_dir is None):
            raise ConfigurationError("suite", "exactly one of 'procgen' and 'scenario_dir' is required")
        if self.n < 1:
            raise ConfigurationError("suite.n", "must be at least 1")

    @classmethod
    def from_dict(cls, document: Mapping[str, Any], base: Path = Path(".")) -> SuiteSource:
        """
        :raises ConfigurationError: on unknown keys or an ambiguous source.
        """
        unknown = sorted(set(document) - {"procgen", "n", "seed", "scenario_dir"})
        if unknown:
            raise ConfigurationError(f"suite.{unknown[0]}", "unknown key")
        procgen = document.get("procgen")
        directory = document.get("scenario_dir")
        return cls(
            procgen=ProcGenConfig.from_dict(procgen) if procgen is not None else None,
            n=int(document.get("n", 30)),
            seed=int(document.get("seed", 0)),
            scenario_dir=base / directory if directory is not None else None,
        )

    def to_dict(self) -> dict[str, Any]:
        if self.procgen is not None:
            return {"procgen": self.procgen.to_dict(), "n": self.n, "seed": self.seed}
        return {"scenario_dir": str(self.scenario_dir)}


def load_suite(source: SuiteSource) -> list[ScenarioDescription]:
    """
    :raises GenerationError: if procedural generation fails.
    :raises ParseError: if a scenario file is malformed.
    """
    if source.procgen is not None:
        scenarios = generate_suite(source.procgen, source.n, source.seed)
    else:
        assert source.scenario_dir is not None
        scenarios = read_scenario_dir(source.scenario_dir)
    logger.info("suite of %d scenarios loaded", len(scenarios))
    return scenarios


_SPEC_KEYS: Final = frozenset({
    "suite", "policies", "horizons", "k_values", "n_values", "scorers",
    "seeds", "traffic", "engine", "experiments",
})


def _non_empty[T](values: Sequence[T], name: str) -> tuple[T, ...]:
    if not values:
        raise ConfigurationError(name, "must not be empty")
    return tuple(values)


@dataclass(frozen=True, slots=True)
class ExperimentSpec:
    suite: SuiteSource
    policies: tuple[PolicySpec, ...]
    horizons: tuple[int, ...] = (40, 80, 120, 160)
    k_values: tuple[int, ...] = (1, 2, 4, 8)
    n_values: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    scorers: tuple[ScorerName, ...] = ("native", "truncated-q")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    traffic: TrafficKind = "log-replay"
    engine: Mapping[str, Any] = field(default_factory=dict)
    """Engine configuration overrides applied on top of the packaged defaults."""
    experiments: tuple[ExperimentName, ...] = EXPERIMENTS

    def __post_init__(self) -> None:
        for name in ("policies", "horizons", "k_values", "n_values", "scorers", "seeds", "experiments"):
            _non_empty(getattr(self, name), name)
        if min(self.horizons) < 1 or min(self.k_values) < 1 or min(self.n_values) < 1:
            raise ConfigurationError("horizons", "horizons, k values and candidate counts must be positive")
        for scorer in self.scorers:
            if scorer not in SCORER_NAMES:
                raise ConfigurationError("scorers", f"unknown scorer {scorer!r}")
        for experiment in self.experiments:
            if experiment not in EXPERIMENTS:
                raise ConfigurationError("experiments", f"unknown experiment {experiment!r}")
        if self.traffic not in TRAFFIC_KINDS:
            raise ConfigurationError("traffic", f"unknown traffic mode {self.traffic!r}")

    @classmethod
    def from_dict(cls, document: Mapping[str, Any], base: Path = Path(".")) -> ExperimentSpec:
        """
        :raises ConfigurationError: on unknown keys, empty lists or invalid values.
        """
        unknown = sorted(set(document) - _SPEC_KEYS)
        if unknown:
            raise ConfigurationError(unknown[0], "unknown key")
        if "suite" not in document or "policies" not in document:
            raise ConfigurationError("suite", "'suite' and 'policies' are required")
        kwargs: dict[str, Any] = {
            "suite": SuiteSource.from_dict(document["suite"], base),
            "policies": tuple(PolicySpec.from_dict(p) for p in document["policies"]),
        }
        for key in ("horizons", "k_values", "n_values", "seeds"):
            if key in document:
                kwargs[key] = tuple(int(v) for v in document[key])
        for key in ("scorers", "experiments"):
            if key in document:
                kwargs[key] = tuple(document[key])
        if "traffic" in document:
            kwargs["traffic"] = document["traffic"]
        if "engine" in document:
            kwargs["engine"] = dict(document["engine"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Path) -> ExperimentSpec:
        """Reads a spec file; a relative ``scenario_dir`` is taken relative to the file."""
        return cls.from_dict(read_json_object(path), path.parent)

    def engine_config(self) -> EngineConfig:
        """The closed-loop base configuration of every experiment cell."""
        overrides = {**self.engine, "traffic": self.traffic, "mode": "closed-loop"}
        return load_engine_config(None, overrides)

    def to_dict(self) -> dict[str, Any]:
        return {
            "suite": self.suite.to_dict(),
            "policies": [p.to_dict() for p in self.policies],
            "horizons": list(self.horizons),
            "k_values": list(self.k_values),
            "n_values": list(self.n_values),
            "scorers": list(self.scorers),
            "seeds": list(self.seeds),
            "traffic": self.traffic,
            "engine": dict(self.engine),
            "experiments": list(self.experiments),
        }


# Running cells

type CellKey = tuple[Any, ...]

type Outcome = EpisodeReport | EpisodeFailure


@dataclass(frozen=True, slots=True)
class _Cell:
    key: CellKey
    policy: PolicySpec
    cfg: EngineConfig


def _run_cells(
    cells: Sequence[_Cell],
    scenarios: Sequence[ScenarioDescription],
    seeds: Sequence[int],
    workers: int | None,
) -> dict[CellKey, list[Outcome]]:
    """Outcomes per cell, ordered scenario-major then seed, so cells pair up."""
    jobs = [
        (scenario, cell.policy, replace(cell.cfg, seed=seed))
        for cell in cells
        for scenario in scenarios
        for seed in seeds
    ]
    logger.info("running %d episodes over %d cells", len(jobs), len(cells))
    results = run_jobs(jobs, workers)
    per_cell = len(scenarios) * len(seeds)
    return {cell.key: results[i * per_cell: (i + 1) * per_cell] for i, cell in enumerate(cells)}


def _ds(outcome: Outcome) -> float:
    if isinstance(outcome, EpisodeFailure):
        logger.warning("%s (seed %d) counted as DS 0: %s", outcome.scenario_id, outcome.seed, outcome.message)
        return 0.0
    return outcome.ds


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _with_k(cfg: EngineConfig, k: int, scorer: ScorerName) -> EngineConfig:
    return replace(
        cfg,
        scorer=scorer,
        replan_rate=k * cfg.plan_spacing,
        rollout=replace(cfg.rollout, k=min(k, cfg.plan_horizon)),
    )


@dataclass(frozen=True, slots=True)
class Table:
    """One experiment's output: the summary rows and the long-format series."""

    name: ExperimentName
    header: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]
    long: tuple[tuple[str, float, float], ...]


def write_table(table: Table, directory: Path) -> tuple[Path, Path]:
    directory.mkdir(parents=True, exist_ok=True)
    stem = TABLE_FILES[table.name]
    wide, long = directory / f"{stem}.csv", directory / f"{stem}_long.csv"
    with wide.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(table.header)
        writer.writerows(table.rows)
    with long.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(LONG_HEADER)
        writer.writerows((table.name, series, x, y) for series, x, y in table.long)
    return wide, long


# Experiments

def horizon_sweep(
    spec: ExperimentSpec, scenarios: Sequence[ScenarioDescription], workers: int | None = None
) -> Table:
    """
    Mean DS of the first policy executing a fixed prefix of ``k`` plan steps
    before replanning, for every ``k`` of the spec, plus the oracle selection
    replanning every plan step as the reference row.
    """
    base = spec.engine_config()
    policy = spec.policies[0]
    cells = [_Cell(("k", k), policy, _with_k(base, k, "native")) for k in spec.k_values]
    cells.append(_Cell(("oracle", 1), policy, _with_k(base, 1, "oracle")))
    outcomes = _run_cells(cells, scenarios, spec.seeds, workers)
    rows, long = [], []
    for cell in cells:
        series, k = cell.key
        ds = [_ds(o) for o in outcomes[cell.key]]
        failures = sum(isinstance(o, EpisodeFailure) for o in outcomes[cell.key])
        rows.append((series, k, _mean(ds), len(ds), failures))
        long.append((str(series), float(k), _mean(ds)))
    return Table("horizon-sweep", ("series", "k", "mean_ds", "episodes", "failures"), tuple(rows), tuple(long))


def objective_gap(
    spec: ExperimentSpec, scenarios: Sequence[ScenarioDescription], workers: int | None = None
) -> Table:
    """
    Per horizon, mean DS when executing the policy's own choice versus the
    closed-loop oracle's, their difference, the paired p-value of oracle
    dominance and the paired p-value of the gap exceeding the gap at the
    first horizon.
    """
    base = spec.engine_config()
    policy = spec.policies[0]
    cells = [
        _Cell((scorer, horizon), policy, replace(base, scorer=scorer, horizon_steps=horizon))
        for horizon in spec.horizons
        for scorer in ("native", "oracle")
    ]
    outcomes = _run_cells(cells, scenarios, spec.seeds, workers)
    gaps: dict[int, list[float]] = {}
    rows, long = [], []
    for horizon in spec.horizons:
        native = [_ds(o) for o in outcomes[("native", horizon)]]
        oracle = [_ds(o) for o in outcomes[("oracle", horizon)]]
        gaps[horizon] = [a - b for a, b in zip(oracle, native)]
        p_dominance = paired_one_sided_test(oracle, native) if len(native) > 1 else ""
        first = gaps[spec.horizons[0]]
        p_growth = (
            paired_one_sided_test(gaps[horizon], first)
            if horizon != spec.horizons[0] and len(first) > 1
            else ""
        )
        gap = _mean(oracle) - _mean(native)
        rows.append((horizon, _mean(native), _mean(oracle), gap, p_dominance, p_growth))
        long.extend([
            ("native", float(horizon), _mean(native)),
            ("oracle", float(horizon), _mean(oracle)),
            ("gap", float(horizon), gap),
        ])
    header = ("horizon", "native_ds", "oracle_ds", "gap", "p_dominance", "p_growth")
    return Table("objective-gap", header, tuple(rows), tuple(long))


def correlation_decay(
    spec: ExperimentSpec, scenarios: Sequence[ScenarioDescription], workers: int | None = None
) -> Table:
    """
    Pearson r, across the policy family, between each member's open-loop
    score over a short horizon and its closed-loop DS at every horizon of
    the spec, with the min/max envelope of the closed-loop scores.

    :raises ConfigurationError: if the family has fewer than two members.
    :raises UndefinedCorrelationError: if the members score identically.
    """
    if len(spec.policies) < 2:
        raise ConfigurationError("policies", "a correlation study needs at least two policies")
    base = spec.engine_config()
    open_loop = replace(base, mode="open-loop", horizon_steps=OPEN_LOOP_HORIZON)
    cells = [_Cell(("ol", i), policy, open_loop) for i, policy in enumerate(spec.policies)]
    cells.extend(
        _Cell(("cl", i, horizon), policy, replace(base, horizon_steps=horizon))
        for horizon in spec.horizons
        for i, policy in enumerate(spec.policies)
    )
    outcomes = _run_cells(cells, scenarios, spec.seeds, workers)
    members = range(len(spec.policies))
    ol = [_mean([_ds(o) for o in outcomes[("ol", i)]]) for i in members]
    long = [(f"member-{i}-ol", float(OPEN_LOOP_HORIZON), ol[i]) for i in members]
    rows = []
    for horizon in spec.horizons:
        cl = [_mean([_ds(o) for o in outcomes[("cl", i, horizon)]]) for i in members]
        r = pearson(ol, cl)
        rows.append((horizon, r, min(cl), max(cl), min(ol), max(ol)))
        long.append(("r", float(horizon), r))
        long.extend((f"member-{i}", float(horizon), cl[i]) for i in members)
    header = ("horizon", "r", "cl_min", "cl_max", "ol_min", "ol_max")
    return Table("correlation-decay", header, tuple(rows), tuple(long))


def _with_candidates(policy: PolicySpec, n: int) -> PolicySpec:
    return PolicySpec(policy.name, {**policy.params, "num_candidates": n})


def scaling_experiment(
    spec: ExperimentSpec, scenarios: Sequence[ScenarioDescription], workers: int | None = None
) -> Table:
    """
    Mean DS per (candidate count, scorer) for the first policy.

    :raises ConfigurationError: if the policy has no candidate count.
    """
    policy = spec.policies[0]
    if policy.name not in SCALABLE_POLICIES:
        raise ConfigurationError("policies", f"policy {policy.name!r} has no variable candidate count")
    base = spec.engine_config()
    cells = [
        _Cell((n, scorer), _with_candidates(policy, n), replace(base, scorer=scorer))
        for n in spec.n_values
        for scorer in spec.scorers
    ]
    outcomes = _run_cells(cells, scenarios, spec.seeds, workers)
    rows, long = [], []
    for cell in cells:
        n, scorer = cell.key
        ds = _mean([_ds(o) for o in outcomes[cell.key]])
        rows.append((n, scorer, ds))
        long.append((str(scorer), float(n), ds))
    return Table("scaling", ("n", "scorer", "mean_ds"), tuple(rows), tuple(long))


def component_analysis(
    spec: ExperimentSpec, scenarios: Sequence[ScenarioDescription], workers: int | None = None
) -> Table:
    """
    Mean DS and plan switches per (k, scorer), separating the truncated-value
    selection from the rule that keeps the remainder of the previous plan.
    """
    base = spec.engine_config()
    policy = spec.policies[0]
    cells = [
        _Cell((k, scorer), policy, _with_k(base, k, scorer))
        for k in spec.k_values
        for scorer in COMPONENT_SCORERS
    ]
    outcomes = _run_cells(cells, scenarios, spec.seeds, workers)
    rows, long = [], []
    for cell in cells:
        k, scorer = cell.key
        results = outcomes[cell.key]
        ds = _mean([_ds(o) for o in results])
        reports = [o for o in results if isinstance(o, EpisodeReport)]
        switches = _mean([float(r.switches) for r in reports]) if reports else 0.0
        rows.append((k, scorer, ds, switches))
        long.append((str(scorer), float(k), ds))
    return Table("components", ("k", "scorer", "mean_ds", "mean_switches"), tuple(rows), tuple(long))


_RUNNERS: Final = {
    "horizon-sweep": horizon_sweep,
    "objective-gap": objective_gap,
    "correlation-decay": correlation_decay,
    "scaling": scaling_experiment,
    "components": component_analysis,
}


def run_experiments(
    spec: ExperimentSpec,
    out: Path,
    scenarios: Sequence[ScenarioDescription] | None = None,
    workers: int | None = None,
) -> list[Table]:
    """Runs the selected experiments in order and writes their tables under ``out``."""
    if scenarios is None:
        scenarios = load_suite(spec.suite)
    tables = []
    for name in spec.experiments:
        logger.info("experiment %s", name)
        table = _RUNNERS[name](spec, scenarios, workers)
        write_table(table, out)
        tables.append(table)
    return tables

