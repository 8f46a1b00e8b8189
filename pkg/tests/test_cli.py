import json

import pytest

from epoch.cli import main
from tests.conftest import TASKS_DIR, TRACES_DIR, canonical_artifact_bytes

GOLDEN_REPLAY_LINES = {
    "mnist_tuning": [
        "round=1 verdict=Baseline primary=0.5333",
        "round=2 verdict=Accept primary=0.6167",
        "round=3 verdict=Reject reason=regression primary=0.5500",
        "round=3R1 verdict=Accept primary=0.6667",
        "round=3 verdict=Terminate reason=budget_exhausted primary=0.6667",
    ],
    "fib_speedup": [
        "round=1 verdict=Baseline primary=8420",
        "round=2 verdict=Accept primary=34.3",
        "round=3 verdict=Accept primary=2.39",
        "round=4 verdict=Accept primary=1.33",
        "round=5 verdict=Terminate reason=no_hypothesis primary=1.33",
    ],
    "sst2_prompt": [
        "round=1 verdict=Baseline primary=0.8333",
        "round=2 verdict=Accept primary=0.9167",
        "round=3 verdict=Accept primary=1.0000",
        "round=3 verdict=Terminate reason=saturated primary=1.0000",
    ],
    "iris_rules": [
        "round=1 verdict=Baseline primary=0.9778",
        "round=2 verdict=Accept primary=1.0000",
        "round=3 verdict=Reject reason=insufficient_gain primary=1.0000",
        "round=4 verdict=Reject reason=insufficient_gain primary=1.0000",
        "round=4 verdict=Terminate reason=budget_exhausted primary=1.0000",
    ],
    "synth_highgap": [
        "round=1 verdict=Baseline primary=0.5535",
        "round=2 verdict=Accept primary=0.6235",
        "round=3 verdict=Reject reason=guard_violation(overfit_gap) primary=0.7485",
        "round=4 verdict=Accept primary=0.7480",
        "round=5 verdict=Terminate reason=no_hypothesis primary=0.7480",
    ],
}


def run_cli(capsys, *argv) -> tuple[int, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out


def verdict_lines(output: str) -> list[str]:
    return [l for l in output.splitlines() if l.startswith("round=")]


def test_validate_ok(capsys):
    code, out = run_cli(capsys, "validate", str(TASKS_DIR / "rule_demo_run.yaml"))
    assert code == 0
    assert "valid" in out


def test_validate_max_rounds_zero_reports_path(tmp_path, capsys):
    bad = tmp_path / "bad_run.yaml"
    bad.write_text((TASKS_DIR / "rule_demo_run.yaml").read_text()
                   .replace("max_rounds: 4", "max_rounds: 0"))
    code = main(["validate", str(bad)])
    err = capsys.readouterr().err
    assert code == 2
    assert "run.max_rounds" in err


def test_validate_missing_file(capsys):
    code, _ = run_cli(capsys, "validate", "/nonexistent/spec.yaml")
    assert code == 4


def test_validate_prints_cross_field_violations(tmp_path, capsys):
    bad = tmp_path / "bad_run.yaml"
    bad.write_text("""
project: {name: "X", slug: "x"}
run: {task_type: "custom"}
roles: {reviewer: {mode: "llm_critic"}}
evaluation: {primary_metric: "accuracy", eval_cmd: "true"}
""")
    code, out = run_cli(capsys, "validate", str(bad))
    assert code == 2
    assert "roles.reviewer.mode" in out


def test_usage_error_on_unknown_command(capsys):
    assert main(["frobnicate"]) == 4


@pytest.mark.parametrize("name", sorted(GOLDEN_REPLAY_LINES))
def test_replay_golden_lines(name, workspace, capsys):
    code, out = run_cli(capsys, "replay", str(TASKS_DIR / f"{name}_run.yaml"),
                        str(TRACES_DIR / f"{name}.json"), "--workspace", str(workspace))
    assert code == 0
    assert verdict_lines(out) == GOLDEN_REPLAY_LINES[name]


@pytest.mark.parametrize("name", ["iris_rules", "fib_speedup"])
def test_replay_summary_matches_golden_file(name, workspace, capsys):
    from pathlib import Path

    code, out = run_cli(capsys, "replay", str(TASKS_DIR / f"{name}_run.yaml"),
                        str(TRACES_DIR / f"{name}.json"), "--workspace", str(workspace))
    assert code == 0
    summary_path = Path(out.splitlines()[-1].split("summary: ", 1)[1])
    golden = Path(__file__).parent / "goldens" / f"{name}_summary.md"
    assert summary_path.read_text() == golden.read_text()


def test_replay_missing_trace_is_usage_error(workspace, capsys):
    code, _ = run_cli(capsys, "replay", str(TASKS_DIR / "mnist_tuning_run.yaml"),
                      "/no/such/trace.json", "--workspace", str(workspace))
    assert code == 4


def test_replay_corrupt_trace_is_spec_error(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1, "entries": [{"round": 0}]}')
    code, _ = run_cli(capsys, "replay", str(TASKS_DIR / "mnist_tuning_run.yaml"),
                      str(bad), "--workspace", str(workspace))
    assert code == 2


def test_run_builtin_demo_creates_summary(workspace, capsys):
    code, out = run_cli(capsys, "run", str(TASKS_DIR / "rule_demo_run.yaml"),
                        "--workspace", str(workspace))
    assert code == 0
    assert "run_summary.md" in out
    run_dirs = [p for p in (workspace / "rule_demo").iterdir() if p.is_dir()
                and p.name not in ("rules", "data", "src")]
    assert len(run_dirs) == 1
    assert (run_dirs[0] / "run_summary.md").is_file()


def test_run_records_effective_spec_with_override(workspace, capsys):
    code, out = run_cli(capsys, "run", str(TASKS_DIR / "rule_demo_run.yaml"),
                        "--workspace", str(workspace), "--max-rounds", "2")
    assert code == 0
    recorded = (workspace / "rule_demo_run.yaml").read_text()
    assert "max_rounds: 2" in recorded


def test_run_json_output(workspace, capsys):
    code, out = run_cli(capsys, "run", str(TASKS_DIR / "ladder_demo_run.yaml"),
                        "--workspace", str(workspace), "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["phase"] == "Done"
    assert doc["termination"]["reason"] == "no_hypothesis"


def test_epoch_home_fallback(workspace, capsys, monkeypatch):
    monkeypatch.setenv("EPOCH_HOME", str(workspace))
    code, _ = run_cli(capsys, "run", str(TASKS_DIR / "rule_demo_run.yaml"))
    assert code == 0
    assert (workspace / "rule_demo").is_dir()


def test_report_renders_and_is_deterministic(workspace, capsys):
    run_cli(capsys, "run", str(TASKS_DIR / "rule_demo_run.yaml"), "--workspace", str(workspace))
    run_dir = next(p for p in (workspace / "rule_demo").iterdir()
                   if p.is_dir() and p.name not in ("rules", "data", "src"))
    code1, out1 = run_cli(capsys, "report", str(run_dir))
    code2, out2 = run_cli(capsys, "report", str(run_dir))
    assert code1 == code2 == 0
    assert out1 == out2
    assert "Termination: no_hypothesis" in out1


def test_report_on_empty_store_is_artifact_error(workspace, capsys):
    (workspace / "ghost").mkdir(parents=True)
    (workspace / "ghost" / "run-1").mkdir()
    (workspace / "ghost_run.yaml").write_text(
        (TASKS_DIR / "rule_demo_run.yaml").read_text().replace("rule_demo", "ghost"))
    code, _ = run_cli(capsys, "report", str(workspace / "ghost" / "run-1"))
    assert code == 3


def test_resume_on_done_run_is_noop(workspace, capsys):
    run_cli(capsys, "run", str(TASKS_DIR / "rule_demo_run.yaml"), "--workspace", str(workspace))
    run_dir = next(p for p in (workspace / "rule_demo").iterdir()
                   if p.is_dir() and p.name not in ("rules", "data", "src"))
    before = canonical_artifact_bytes(run_dir)
    code, out = run_cli(capsys, "resume", str(run_dir))
    assert code == 0
    assert canonical_artifact_bytes(run_dir) == before


def test_resume_truncated_delta_is_artifact_error(workspace, capsys):
    run_cli(capsys, "run", str(TASKS_DIR / "rule_demo_run.yaml"), "--workspace", str(workspace))
    run_dir = next(p for p in (workspace / "rule_demo").iterdir()
                   if p.is_dir() and p.name not in ("rules", "data", "src"))
    (run_dir / "run_summary.md").unlink()
    (run_dir / "delta_round_2.json").write_text('{"broken')
    code, _ = run_cli(capsys, "resume", str(run_dir))
    assert code == 3


def test_plain_run_resolves_trace_relative_to_spec_file(workspace, capsys):
    """Replay-bound specs run via `run` too; relative trace paths resolve
    against the spec file's directory and the recorded copy is absolute,
    so the run can be resumed from anywhere."""
    code, out = run_cli(capsys, "run", str(TASKS_DIR / "iris_rules_run.yaml"),
                        "--workspace", str(workspace))
    assert code == 0
    assert verdict_lines(out) == GOLDEN_REPLAY_LINES["iris_rules"]
    recorded = (workspace / "iris_rules_run.yaml").read_text()
    assert str(TASKS_DIR / "traces" / "iris_rules.json") in recorded


def test_resume_of_budget_terminated_run_is_byte_stable(workspace, capsys):
    run_cli(capsys, "replay", str(TASKS_DIR / "mnist_tuning_run.yaml"),
            str(TRACES_DIR / "mnist_tuning.json"), "--workspace", str(workspace))
    run_dir = next(p for p in (workspace / "mnist_tuning").iterdir()
                   if p.is_dir() and p.name not in ("src", "data"))
    before = canonical_artifact_bytes(run_dir)
    code, _ = run_cli(capsys, "resume", str(run_dir))
    assert code == 0
    assert canonical_artifact_bytes(run_dir) == before


def test_run_phase1_failure_exit_1(workspace, tmp_path, capsys):
    # a trace without a baseline entry makes Phase 1 fail: run error, not Done
    bad_trace = tmp_path / "nobaseline.json"
    bad_trace.write_text(json.dumps({"schema_version": 1, "entries": [
        {"round": 1, "try": 0, "investigation": "", "change": "x",
         "metrics": {"schema_version": 1, "splits": {"eval": {"accuracy": 0.5}}}}]}))
    code, _ = run_cli(capsys, "replay", str(TASKS_DIR / "mnist_tuning_run.yaml"),
                      str(bad_trace), "--workspace", str(workspace))
    assert code == 1


def test_run_invalid_spec_exit_2(workspace, tmp_path, capsys):
    bad = tmp_path / "invalid_run.yaml"
    bad.write_text("""
project: {name: "X", slug: "x"}
run: {task_type: "custom"}
evaluation: {primary_metric: "accuracy"}
""")
    code, _ = run_cli(capsys, "run", str(bad), "--workspace", str(workspace))
    assert code == 2
