"""
Command-line entry point: ``generate``, ``simulate``, ``score``, ``analyze``
and ``validate``.

Exit codes: 0 on success, 1 for validation errors (malformed input, bad
configuration, bad usage, a report that does not verify), 2 for any other
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Final, NoReturn

from .analysis import ExperimentSpec, load_suite, run_experiments
from .config import engine_config_from_dict, load_engine_config, read_json_object, write_resolved_config
from .engine import ENGINE_MODES, SCORER_NAMES, run_suite
from .errors import ClosedLoopError, ConfigurationError, UsageError, ValidationError
from .policy import POLICY_NAMES, PolicySpec
from .procgen import ProcGenConfig, generate_suite
from .report import (
    read_report, report_filename, verify_report, write_frame_csv, write_report, write_suite_csv,
)
from .serialization import read_scenario, read_scenario_dir, write_scenario_dir
from .traffic import TRAFFIC_KINDS

logger = logging.getLogger(__name__)

EXIT_OK: Final = 0
EXIT_INVALID: Final = 1
EXIT_FAILURE: Final = 2

SUITE_CSV: Final = "suite.csv"


class ArgumentParser(argparse.ArgumentParser):
    """Raises :class:`UsageError` instead of exiting on bad arguments."""

    def error(self, message: str) -> NoReturn:
        raise UsageError("argv", message)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="closedloop", description="Closed-loop driving evaluation.")
    parser.add_argument(
        "--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="diagnostics written to standard error",
    )
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    generate = commands.add_parser("generate", help="procedurally generate a scenario suite")
    generate.add_argument("--config", type=Path, help="ProcGenConfig JSON file (defaults otherwise)")
    generate.add_argument("--n", type=int, required=True)
    generate.add_argument("--seed", type=int, required=True)
    generate.add_argument("--out", type=Path, required=True)

    simulate = commands.add_parser("simulate", help="run a policy over a scenario suite")
    simulate.add_argument("--scenario-dir", type=Path, required=True)
    simulate.add_argument("--config", type=Path, help="engine configuration JSON file")
    simulate.add_argument("--mode", choices=ENGINE_MODES)
    simulate.add_argument("--traffic", choices=TRAFFIC_KINDS)
    simulate.add_argument("--policy", choices=POLICY_NAMES, required=True)
    simulate.add_argument("--num-candidates", "--candidates", type=int, help="candidate plans per replan")
    simulate.add_argument("--sigma", "--noise", type=float, help="noisy-expert lateral noise amplitude")
    simulate.add_argument("--drift", type=float, help="noisy-expert longitudinal drift")
    simulate.add_argument("--cruise", type=float, help="lattice cruise speed")
    simulate.add_argument(
        "--policy-params", type=json.loads, default={},
        help="policy parameters as a JSON object, overriding the policy flags",
    )
    simulate.add_argument("--scorer", choices=SCORER_NAMES)
    simulate.add_argument("--replan-rate", type=int)
    simulate.add_argument("--horizon", type=int, help="evaluated simulation steps")
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("--record-wallclock", action="store_true")
    simulate.add_argument("--out", type=Path, required=True)

    score = commands.add_parser("score", help="recompute and verify the driving score of a report")
    score.add_argument("--report", type=Path, required=True)
    score.add_argument("--frames-out", type=Path, help="write the per-frame scores of a verified report as CSV")

    analyze = commands.add_parser("analyze", help="run the experiments of an ExperimentSpec")
    analyze.add_argument("--spec", type=Path, required=True)
    analyze.add_argument("--out", type=Path, required=True)

    validate = commands.add_parser("validate", help="check a scenario file against the schema")
    validate.add_argument("--scenario", type=Path, required=True)
    return parser


def _generate(args: argparse.Namespace) -> int:
    config = ProcGenConfig.from_dict(read_json_object(args.config)) if args.config else ProcGenConfig()
    scenarios = generate_suite(config, args.n, args.seed)
    write_scenario_dir(scenarios, args.out)
    write_resolved_config(args.out, {"procgen": config.to_dict(), "n": args.n, "seed": args.seed})
    logger.info("generated %d scenarios into %s", len(scenarios), args.out)
    return EXIT_OK


_POLICY_FLAGS: Final = ("num_candidates", "sigma", "drift", "cruise")


def _policy_flags(args: argparse.Namespace) -> dict[str, Any]:
    return {flag: value for flag in _POLICY_FLAGS if (value := getattr(args, flag)) is not None}


def _simulate(args: argparse.Namespace) -> int:
    overrides: dict[str, Any] = {}
    for flag, key in (
        ("mode", "mode"), ("traffic", "traffic"), ("scorer", "scorer"), ("replan_rate", "replan_rate"),
        ("horizon", "horizon_steps"), ("seed", "seed"),
    ):
        if (value := getattr(args, flag)) is not None:
            overrides[key] = value
    if args.record_wallclock:
        overrides["record_wallclock"] = True
    cfg = load_engine_config(args.config, overrides)
    if not isinstance(args.policy_params, dict):
        raise ConfigurationError("policy_params", "expected a JSON object")
    spec = PolicySpec.from_dict({"name": args.policy, **_policy_flags(args), **args.policy_params})
    spec.build()
    scenarios = read_scenario_dir(args.scenario_dir)
    result = run_suite(scenarios, spec, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    for report in result.reports:
        write_report(report, args.out / report_filename(report), include_wallclock=cfg.record_wallclock)
    write_suite_csv(result.reports, args.out / SUITE_CSV, len(result.failures))
    write_resolved_config(
        args.out,
        {
            "engine": cfg.to_dict(),
            "policy": spec.to_dict(),
            "scenario_dir": str(args.scenario_dir),
            "scenarios": [s.id for s in scenarios],
        },
    )
    for failure in result.failures:
        logger.error("%s (seed %d): %s: %s", failure.scenario_id, failure.seed, failure.kind, failure.message)
    if result.summary is not None:
        print(f"{len(result.reports)} episodes, mean DS {result.summary.means['ds']:.4f}")
    return EXIT_FAILURE if result.failures else EXIT_OK


def _score(args: argparse.Namespace) -> int:
    report = read_report(args.report)
    weights = engine_config_from_dict(report.config).weights if report.config else None
    problems = verify_report(report, weights)
    for problem in problems:
        logger.error("%s: %s", args.report.name, problem)
    if problems:
        return EXIT_INVALID
    if args.frames_out is not None:
        write_frame_csv(report, args.frames_out)
    print(f"{report.scenario_id}: DS {report.ds:.6f} verified over {report.frame_count} frames")
    return EXIT_OK


def _analyze(args: argparse.Namespace) -> int:
    spec = ExperimentSpec.load(args.spec)
    scenarios = load_suite(spec.suite)
    tables = run_experiments(spec, args.out, scenarios)
    write_resolved_config(
        args.out,
        {"experiment": spec.to_dict(), "engine": spec.engine_config().to_dict(),
         "scenarios": [s.id for s in scenarios]},
    )
    for table in tables:
        print(f"{table.name}: {len(table.rows)} rows")
    return EXIT_OK


def _validate(args: argparse.Namespace) -> int:
    scenario = read_scenario(args.scenario)
    print(f"{scenario.id}: valid")
    return EXIT_OK


_COMMANDS: Final = {
    "generate": _generate,
    "simulate": _simulate,
    "score": _score,
    "analyze": _analyze,
    "validate": _validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Runs one subcommand and returns its exit code."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as error:
        print(f"usage error: {error}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(
        level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True
    )
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as error:
        logger.error("%s", error)
        return EXIT_INVALID
    except ClosedLoopError as error:
        logger.error("%s", error)
        return EXIT_FAILURE
    except Exception:
        logger.exception("unexpected failure")
        return EXIT_FAILURE
