import csv
import json
from dataclasses import replace
from pathlib import Path

import pytest

from closedloop.cli import EXIT_FAILURE, EXIT_INVALID, EXIT_OK, SUITE_CSV, main
from closedloop.config import RESOLVED_CONFIG_NAME
from closedloop.engine import THREADS_ENV
from closedloop.report import FRAME_CSV_HEADER, REPORT_SUFFIX, read_report
from closedloop.serialization import scenario_filename, write_scenario, write_scenario_dir
from conftest import ScenarioFactory


@pytest.fixture(autouse=True)
def serial(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv(THREADS_ENV, "1")


def simulate(scenario_dir: Path, out: Path, *extra: str) -> int:
    return main([
        "simulate", "--scenario-dir", str(scenario_dir), "--policy", "constant-velocity",
        "--horizon", "20", "--out", str(out), *extra,
    ])


def test_validate(road: ScenarioFactory, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / scenario_filename("road")
    write_scenario(road(), path)
    assert main(["validate", "--scenario", str(path)]) == EXIT_OK
    assert "road: valid" in capsys.readouterr().out
    path.write_text('{"schema_version": 1', encoding="utf-8")
    assert main(["validate", "--scenario", str(path)]) == EXIT_INVALID
    assert main(["validate", "--scenario", str(tmp_path / "missing.json")]) == EXIT_INVALID


def test_usage_errors() -> None:
    assert main([]) == EXIT_INVALID
    assert main(["teleport"]) == EXIT_INVALID
    assert main(["simulate", "--policy", "expert"]) == EXIT_INVALID


def test_generate_then_simulate_then_score(tmp_path: Path) -> None:
    scenarios, out = tmp_path / "scenarios", tmp_path / "out"
    assert main(["generate", "--n", "2", "--seed", "4", "--out", str(scenarios)]) == EXIT_OK
    resolved = json.loads((scenarios / RESOLVED_CONFIG_NAME).read_text(encoding="utf-8"))
    assert (resolved["n"], resolved["seed"]) == (2, 4)

    assert simulate(scenarios, out, "--scorer", "truncated-q") == EXIT_OK
    reports = sorted(out.glob(f"*{REPORT_SUFFIX}"))
    assert len(reports) == 2
    with (out / SUITE_CSV).open(newline="", encoding="utf-8") as handle:
        ids = [row[0] for row in csv.reader(handle)][1:]
    assert ids[-1] == "mean"
    assert sorted(ids[:-1]) == [p.name.removesuffix(f".seed0{REPORT_SUFFIX}") for p in reports]
    engine = json.loads((out / RESOLVED_CONFIG_NAME).read_text(encoding="utf-8"))["engine"]
    assert (engine["scorer"], engine["horizon_steps"]) == ("truncated-q", 20)

    assert main(["score", "--report", str(reports[0])]) == EXIT_OK
    document = json.loads(reports[0].read_text(encoding="utf-8"))
    document["ds"] += 0.5
    reports[0].write_text(json.dumps(document), encoding="utf-8")
    assert main(["score", "--report", str(reports[0])]) == EXIT_INVALID


def test_simulate_reports_failed_episodes(road: ScenarioFactory, tmp_path: Path) -> None:
    scenarios = tmp_path / "scenarios"
    write_scenario_dir([replace(road(), id="fine"), replace(road(dt=0.2), id="coarse")], scenarios)
    assert simulate(scenarios, tmp_path / "out") == EXIT_FAILURE
    assert [p.name for p in (tmp_path / "out").glob(f"*{REPORT_SUFFIX}")] == [f"fine.seed0{REPORT_SUFFIX}"]


def test_simulate_rejects_bad_configuration(tmp_path: Path) -> None:
    config = tmp_path / "engine.json"
    config.write_text(json.dumps({"replan_rat": 3}), encoding="utf-8")
    assert simulate(tmp_path, tmp_path / "out", "--config", str(config)) == EXIT_INVALID
    assert simulate(tmp_path, tmp_path / "out", "--policy-params", '{"sigma": 1}') == EXIT_INVALID


def test_score_writes_frame_csv(road: ScenarioFactory, tmp_path: Path) -> None:
    scenarios, out = tmp_path / "scenarios", tmp_path / "out"
    write_scenario_dir([road()], scenarios)
    assert simulate(scenarios, out) == EXIT_OK
    (report_path,) = out.glob(f"*{REPORT_SUFFIX}")
    frames_csv = tmp_path / "frames.csv"
    assert main(["score", "--report", str(report_path), "--frames-out", str(frames_csv)]) == EXIT_OK
    with frames_csv.open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert tuple(rows[0]) == FRAME_CSV_HEADER
    assert len(rows) - 1 == read_report(report_path).frame_count


def test_score_rejects_a_missing_report(tmp_path: Path) -> None:
    assert main(["score", "--report", str(tmp_path / "absent.report.json")]) == EXIT_INVALID


def test_policy_flags_feed_the_policy_spec(road: ScenarioFactory, tmp_path: Path) -> None:
    scenarios, out = tmp_path / "scenarios", tmp_path / "out"
    write_scenario_dir([road()], scenarios)
    assert simulate(
        scenarios, out, "--policy", "noisy-expert", "--candidates", "3", "--noise", "0.5", "--drift", "0.2",
        "--policy-params", '{"sigma": 0.25}',
    ) == EXIT_OK
    policy = json.loads((out / RESOLVED_CONFIG_NAME).read_text(encoding="utf-8"))["policy"]
    assert policy == {"name": "noisy-expert", "num_candidates": 3, "sigma": 0.25, "drift": 0.2}
    (report_path,) = out.glob(f"*{REPORT_SUFFIX}")
    assert read_report(report_path).policy == policy
    assert simulate(scenarios, tmp_path / "cv", "--sigma", "1.0") == EXIT_INVALID
