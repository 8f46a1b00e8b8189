import json

from tests.conftest import DRIVERS, KIT_ROOT, driver_request, run_driver


def test_investigator_round_trip():
    proc = run_driver(DRIVERS / "investigator.py", driver_request("investigator"))
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(proc.stdout)
    assert set(doc) == {"role", "payload"}
    assert doc["role"] == "investigator"
    assert doc["payload"]["has_hypothesis"] is True
    assert doc["payload"]["hypothesis"]


def test_investigator_cites_only_visible_paths():
    request = driver_request("investigator",
                             visible_paths=("data/train.json", "notes/readme.md"))
    proc = run_driver(DRIVERS / "investigator.py", request)
    doc = json.loads(proc.stdout)
    report = doc["payload"]["report"]
    assert "data/train.json" in report
    assert "eval" not in report.lower()


def test_investigator_empty_stdin_exits_nonzero():
    proc = run_driver(DRIVERS / "investigator.py", None)
    assert proc.returncode != 0


def test_investigator_invalid_json_exits_nonzero():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, str(DRIVERS / "investigator.py")],
                          input="{nope", capture_output=True, text=True)
    assert proc.returncode != 0


def test_investigator_runs_out_of_hypotheses():
    proc = run_driver(DRIVERS / "investigator.py", driver_request("investigator", round_index=2))
    doc = json.loads(proc.stdout)
    assert doc["payload"]["has_hypothesis"] is False
    assert "hypothesis" not in doc["payload"]


def test_baseline_prompt_driver_writes_candidate(tmp_path):
    candidate = tmp_path / "cand"
    candidate.mkdir()
    proc = run_driver(DRIVERS / "baseline_prompt.py",
                      driver_request("baseline_executor"),
                      env={"EPOCH_CANDIDATE_DIR": str(candidate)})
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(proc.stdout)
    assert doc["payload"]["files_written"] == ["prompt.txt"]
    shipped = (KIT_ROOT / "prompt_task" / "src" / "prompt.txt").read_text()
    assert (candidate / "prompt.txt").read_text() == shipped


def test_leak_executor_pastes_eval_sentence(tmp_path):
    task_dir = tmp_path / "task"
    (task_dir / "data").mkdir(parents=True)
    eval_rows = json.loads((KIT_ROOT / "prompt_task" / "data" / "eval.json").read_text())
    (task_dir / "data" / "eval.txt").write_text(
        "\n".join(r["text"] for r in eval_rows) + "\n")
    candidate = tmp_path / "cand"
    candidate.mkdir()
    (candidate / "prompt.txt").write_text("base prompt\n")

    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, str(DRIVERS / "leak_executor.py")],
        input=json.dumps(driver_request("executor")), capture_output=True, text=True,
        cwd=task_dir, env={**__import__('os').environ,
                           "EPOCH_CANDIDATE_DIR": str(candidate)})
    assert proc.returncode == 0, proc.stderr
    prompt = (candidate / "prompt.txt").read_text()
    assert eval_rows[0]["text"] in prompt
