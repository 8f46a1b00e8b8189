"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Every tolerance is pinned here; nothing is deferred.
"""

import json
import shutil
import subprocess
import sys
import time
from pathlib import Path

import pytest

from epoch import tracking
from epoch.runner import Runner, resume_run, run_task
from epoch.tracking import check_artifact_layout
from epoch.metrics import canonicalize, read_metrics
from tests.conftest import TASKS_DIR, TRACES_DIR, canonical_artifact_bytes, load_spec

PY = sys.executable
TASKKIT_DIR = Path(__file__).resolve().parent.parent / "taskkit"


def criterion(name):
    def wrap(fn):
        import functools

        @functools.wraps(fn)
        def inner(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                print(f"\nACCEPTANCE {name}: FAIL")
                raise
            print(f"\nACCEPTANCE {name}: PASS")
            return result
        return inner
    return wrap


def replay(name: str, workspace: Path):
    spec = load_spec(f"{name}_run.yaml")
    start = time.perf_counter()
    runner = Runner(spec, workspace, run_id=name,
                    trace_override=(TRACES_DIR / f"{name}.json").resolve())
    result = runner.run_to_completion()
    elapsed = time.perf_counter() - start
    return result, elapsed


def delta_docs(run_dir: Path) -> list[dict]:
    docs = []
    for path in sorted(run_dir.glob("delta_round_*.json"),
                       key=lambda p: (len(p.name), p.name)):
        docs.append(json.loads(path.read_text()))
    return docs


def verdict_seq(result) -> list[tuple[str, str | None]]:
    return [(ref.verdict_kind, ref.verdict_reason) for ref in result.state.history]


@criterion("table-2-mnist-replay")
def test_mnist_replay(workspace):
    result, elapsed = replay("mnist_tuning", workspace)
    assert elapsed < 1.0
    assert verdict_seq(result) == [
        ("Baseline", None), ("Accept", None), ("Reject", "regression"),
        ("Accept", None), ("Terminate", "budget_exhausted")]

    docs = {(d["record"]["round"], d["record"]["try"]): d
            for d in delta_docs(result.run_dir)}
    improvements = [docs[(1, 0)]["delta"]["improvement"],
                    docs[(2, 0)]["delta"]["improvement"],
                    docs[(2, 1)]["delta"]["improvement"]]
    for got, expected in zip(improvements, (0.0834, -0.0667, 0.0500)):
        assert abs(got - expected) < 1e-9

    final = result.state.accepted.metrics.split_metric("eval", "accuracy")
    assert final == 0.6667

    # overfit guard passes every round; gaps peak at 0.120 < 0.15
    gaps = []
    baseline = read_metrics(result.run_dir / "baseline_metrics.json")
    gaps.append(baseline.split_metric("train", "accuracy")
                - baseline.split_metric("eval", "accuracy"))
    for key in ((1, 0), (2, 0), (2, 1)):
        doc = docs[key]
        guard = next(o for o in doc["guards"]["outcomes"] if o["guard"] == "overfit_gap")
        assert guard["pass"]
        art = read_metrics(result.run_dir / doc["record"]["metrics_file"])
        gaps.append(art.split_metric("train", "accuracy")
                    - art.split_metric("eval", "accuracy"))
    assert abs(max(gaps) - 0.120) < 1e-9
    assert max(gaps) < 0.15


@criterion("table-1-fibonacci-replay")
def test_fibonacci_replay(workspace):
    result, elapsed = replay("fib_speedup", workspace)
    assert elapsed < 1.0
    assert verdict_seq(result) == [
        ("Baseline", None), ("Accept", None), ("Accept", None), ("Accept", None),
        ("Terminate", "no_hypothesis")]
    # terminal no-hypothesis round renders as round 5
    assert result.state.termination.round_index == 4

    docs = {(d["record"]["round"], d["record"]["try"]): d for d in delta_docs(result.run_dir)}
    # round 2 is the correctness-stage accept: 17/19 -> 19/19
    first = docs[(1, 0)]
    assert first["delta"]["stage"] == "correctness"
    assert first["delta"]["accepted_value"] == 17 / 19
    assert first["delta"]["candidate_value"] == 1.0

    # relative timing improvements from the recorded artifacts
    timings = [8420.0]
    for key in ((1, 0), (2, 0), (3, 0)):
        art = read_metrics(result.run_dir / docs[key]["record"]["metrics_file"])
        timings.append(art.timing("fib_1e6"))
    rel = [(a - b) / a for a, b in zip(timings, timings[1:])]
    for got, expected in zip(rel, ((8420 - 34.3) / 8420, (34.3 - 2.39) / 34.3,
                                   (2.39 - 1.33) / 2.39)):
        assert abs(got - expected) < 1e-6
        assert got >= 0.05
    assert abs(rel[0] - 0.9959) < 1e-4
    assert abs(rel[1] - 0.9303) < 1e-4
    assert abs(rel[2] - 0.4435) < 1e-4

    # performance-stage rounds record the same improvements in their deltas
    assert docs[(2, 0)]["delta"]["stage"] == "performance"
    assert abs(docs[(2, 0)]["delta"]["improvement"] - rel[1]) < 1e-12
    assert abs(docs[(3, 0)]["delta"]["improvement"] - rel[2]) < 1e-12


@criterion("table-3-sst2-replay")
def test_sst2_replay(workspace):
    result, elapsed = replay("sst2_prompt", workspace)
    assert elapsed < 1.0
    assert verdict_seq(result) == [
        ("Baseline", None), ("Accept", None), ("Accept", None),
        ("Terminate", "saturated")]

    baseline = read_metrics(result.run_dir / "baseline_metrics.json")
    assert baseline.split_metric("eval", "accuracy") == 0.8333

    docs = {(d["record"]["round"], d["record"]["try"]): d for d in delta_docs(result.run_dir)}
    assert abs(docs[(1, 0)]["delta"]["improvement"] - 0.0834) < 1e-9
    assert abs(docs[(2, 0)]["delta"]["improvement"] - 0.0833) < 1e-9

    for key in ((1, 0), (2, 0)):
        leak = next(o for o in docs[key]["guards"]["outcomes"] if o["guard"] == "leakage")
        assert leak["pass"]


@criterion("table-4-iris-replay")
def test_iris_replay(workspace):
    result, elapsed = replay("iris_rules", workspace)
    assert elapsed < 1.0
    assert verdict_seq(result) == [
        ("Baseline", None), ("Accept", None), ("Reject", "insufficient_gain"),
        ("Reject", "insufficient_gain"), ("Terminate", "budget_exhausted")]

    baseline = read_metrics(result.run_dir / "baseline_metrics.json")
    assert baseline.split_metric("eval", "accuracy") == 0.9778

    docs = {(d["record"]["round"], d["record"]["try"]): d for d in delta_docs(result.run_dir)}
    accept = docs[(1, 0)]["delta"]
    assert abs(accept["improvement"] - 0.0222) < 1e-9
    assert accept["improvement"] >= 0.01
    assert docs[(2, 0)]["delta"]["improvement"] == 0.0
    # the second reject lands in round 4 (rendered), then the budget ends the run
    assert docs[(3, 0)]["verdict"]["reason"] == "insufficient_gain"
    assert result.state.termination.round_index == 3  # renders as round 4
    spec = load_spec("iris_rules_run.yaml")
    assert spec.max_rounds == 4


@criterion("builtin-rule-demo")
def test_builtin_rule_demo(tmp_path):
    spec = load_spec("rule_demo_run.yaml")
    start = time.perf_counter()
    first = run_task(spec, tmp_path / "a", run_id="one")
    second = run_task(spec, tmp_path / "b", run_id="two")
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0

    assert first.state.phase == "Done"
    final = first.state.accepted.metrics.split_metric("eval", "accuracy")
    # 0.9778 is the 4-dp rendering of 44/45 on the 45-row eval split
    assert final >= 44 / 45
    assert round(final, 4) >= 0.9778

    executed = [r for r in first.state.history if r.round_index > 0
                and r.verdict_kind in ("Accept", "Reject")]
    assert all(r.round_index <= 3 for r in executed)   # within 4 rendered rounds
    assert all(r.try_index <= 2 for r in executed)     # 2 retries per round

    a, b = canonical_artifact_bytes(first.run_dir), canonical_artifact_bytes(second.run_dir)
    assert set(a) == set(b)
    assert all(a[k] == b[k] for k in a)


@criterion("builtin-synthetic-tuning-demo")
def test_builtin_tuning_demo(tmp_path):
    start = time.perf_counter()
    result = run_task(load_spec("tuning_demo_run.yaml"), tmp_path / "probe", run_id="p")
    highgap, _ = replay("synth_highgap", tmp_path / "trace")
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0

    accepts = [d for d in delta_docs(result.run_dir)
               if d["verdict"]["kind"] == "Accept" and d["delta"] is not None]
    assert accepts, "the probe demo must accept at least one round"
    for doc in accepts:
        assert doc["delta"]["improvement"] >= 0.02

    violations = [d for d in delta_docs(highgap.run_dir)
                  if d["verdict"]["reason"] == "guard_violation"]
    assert len(violations) == 1
    assert violations[0]["verdict"]["guard"] == "overfit_gap"


@criterion("property-suites-and-resume-idempotence")
def test_property_suites_and_resume_idempotence(tmp_path):
    # the randomized suites are configured at >= 1000 examples each
    from tests import test_properties

    assert test_properties.THOROUGH.max_examples >= 1000
    suite_names = [n for n in dir(test_properties) if n.startswith("test_")]
    assert {"test_budget_invariants", "test_accepted_metric_monotonicity",
            "test_never_accept_on_guard_failure", "test_canonicalization_injective",
            "test_spec_serialize_parse_round_trip",
            "test_access_scope_filtering_total"} <= set(suite_names)

    # resume idempotence at every interruption point of the rule demo
    spec = load_spec("rule_demo_run.yaml")
    reference = canonical_artifact_bytes(
        run_task(spec, tmp_path / "ref", run_id="r").run_dir)

    class Crash(Exception):
        pass

    originals = {name: getattr(tracking.Store, name)
                 for name in ("record_baseline", "record_round", "write_summary")}

    def run_with_crash_at(k: int, ws: Path) -> bool:
        calls = {"n": 0}

        def wrap(fn):
            def inner(self, *args, **kwargs):
                calls["n"] += 1
                if calls["n"] == k:
                    raise Crash()
                return fn(self, *args, **kwargs)
            return inner

        for name, fn in originals.items():
            setattr(tracking.Store, name, wrap(fn))
        try:
            run_task(spec, ws, run_id="r")
            return False
        except Crash:
            return True
        finally:
            for name, fn in originals.items():
                setattr(tracking.Store, name, fn)

    k = 1
    while True:
        ws = tmp_path / f"cut{k}"
        crashed = run_with_crash_at(k, ws)
        if not crashed:
            shutil.rmtree(ws)
            break
        resumed = resume_run(ws / "rule_demo" / "r")
        files = canonical_artifact_bytes(resumed.run_dir)
        assert set(files) == set(reference), f"interruption point {k}"
        assert all(files[f] == reference[f] for f in files), f"interruption point {k}"
        k += 1
    assert k > 4  # the demo has several commit points; all were exercised


@criterion("artifact-layout-conformance")
def test_artifact_layout_conformance(tmp_path):
    run_dirs = []
    for demo in ("rule_demo", "tuning_demo", "ladder_demo"):
        run_dirs.append(run_task(load_spec(f"{demo}_run.yaml"),
                                 tmp_path / demo, run_id="x").run_dir)
    for name in ("mnist_tuning", "fib_speedup", "sst2_prompt", "iris_rules",
                 "synth_highgap"):
        result, _ = replay(name, tmp_path / name)
        run_dirs.append(result.run_dir)

    for run_dir in run_dirs:
        assert check_artifact_layout(run_dir) == [], run_dir
        for path in list(run_dir.glob("*.json")) + list(run_dir.glob("cache/*.json")):
            if path.name == "timestamps.json":
                continue
            if path.name.startswith(("baseline_metrics", "proposed_metrics")) \
                    or path.parent.name == "cache":
                assert canonicalize(read_metrics(path)) == path.read_bytes(), path
            elif path.name.startswith("delta_round_"):
                from epoch.metrics import canonical_json_bytes
                assert canonical_json_bytes(json.loads(path.read_text())) == path.read_bytes()


@criterion("task-kit-equivalence")
def test_taskkit_equivalence(tmp_path):
    assert TASKKIT_DIR.is_dir(), "task-kit package missing"
    start = time.perf_counter()

    # 1. external rule evaluation equals the builtin evaluator on 100 random rule sets
    import random

    from epoch.demos import flowers

    rng = random.Random(20260809)
    features = list(flowers.FEATURE_NAMES)
    classes = list(flowers.CLASSES)

    def random_ruleset() -> flowers.RuleSet:
        rules = []
        for _ in range(rng.randint(0, 4)):
            conditions = tuple(
                flowers.Condition(rng.choice(features), rng.choice(["<", ">="]),
                                  round(rng.uniform(0.0, 8.0), 2))
                for _ in range(rng.randint(1, 3)))
            rules.append(flowers.Rule(conditions, rng.choice(classes)))
        return flowers.RuleSet(tuple(rules), rng.choice(classes))

    eval_script = TASKKIT_DIR / "rules_task" / "evaluate.py"
    for i in range(100):
        ruleset = random_ruleset()
        candidate = tmp_path / f"cand{i}"
        candidate.mkdir()
        flowers.write_ruleset(candidate / "rules.json", ruleset)
        metrics_out = tmp_path / f"m{i}.json"
        proc = subprocess.run(
            [PY, str(eval_script)], capture_output=True,
            env={**__import__('os').environ,
                 "EPOCH_CANDIDATE_DIR": str(candidate),
                 "EPOCH_METRICS_OUT": str(metrics_out)})
        assert proc.returncode == 0, proc.stderr
        external = read_metrics(metrics_out)
        builtin = flowers.eval_rules(ruleset)
        for split in ("train", "eval"):
            assert external.split_metric(split, "accuracy") \
                == builtin.split_metric(split, "accuracy"), i

    # 1b. the demo run's final accepted rule set scores identically too
    demo = run_task(load_spec("rule_demo_run.yaml"), tmp_path / "demo", run_id="d")
    accepted_rules_dir = tmp_path / "demo" / "rule_demo" / "rules"
    metrics_out = tmp_path / "final.json"
    proc = subprocess.run(
        [PY, str(eval_script)], capture_output=True,
        env={**__import__('os').environ,
             "EPOCH_CANDIDATE_DIR": str(accepted_rules_dir),
             "EPOCH_METRICS_OUT": str(metrics_out)})
    assert proc.returncode == 0, proc.stderr
    external_final = read_metrics(metrics_out)
    builtin_final = demo.state.accepted.metrics
    for split in ("train", "eval"):
        assert external_final.split_metric(split, "accuracy") \
            == builtin_final.split_metric(split, "accuracy")

    # 2. the 20/12 prompt fixture split sizes hold
    train_rows = json.loads((TASKKIT_DIR / "prompt_task" / "data" / "train.json").read_text())
    eval_rows = json.loads((TASKKIT_DIR / "prompt_task" / "data" / "eval.json").read_text())
    assert len(train_rows) == 20
    assert len(eval_rows) == 12
    assert {r["text"] for r in train_rows}.isdisjoint({r["text"] for r in eval_rows})

    # 3. a planted-leak prompt round is rejected with guard_violation(leakage)
    ws = tmp_path / "leakws"
    task_dir = ws / "leak_demo" / "data"
    task_dir.mkdir(parents=True)
    (task_dir / "eval.txt").write_text(
        "\n".join(r["text"] for r in eval_rows) + "\n", encoding="utf-8")

    kit = TASKKIT_DIR
    spec_text = f"""
project: {{name: "Planted leak", slug: "leak_demo"}}
run: {{goal: "improve the prompt", task_type: "prompt_tune", max_rounds: 3, max_retries_per_round: 0}}
data: {{source: "fixture", train_split: "train", eval_split: "eval"}}
model: {{type: "llm"}}
investigation: {{samples: 20, access_scope: "train_only"}}
evaluation:
  primary_metric: "accuracy"
  min_delta: 0.02
  eval_cmd: "{PY} {kit}/prompt_task/evaluate.py"
drivers:
  baseline_executor: {{command: ["{PY}", "{kit}/drivers/baseline_prompt.py"]}}
  investigator: {{command: ["{PY}", "{kit}/drivers/investigator.py"]}}
  executor: {{command: ["{PY}", "{kit}/drivers/leak_executor.py"]}}
"""
    spec_path = tmp_path / "leak_demo_run.yaml"
    spec_path.write_text(spec_text)
    proc = subprocess.run([PY, "-m", "epoch", "run", str(spec_path),
                           "--workspace", str(ws)],
                          capture_output=True, text=True,
                          cwd=TASKS_DIR.parent)
    assert proc.returncode == 0, proc.stderr
    assert "guard_violation(leakage)" in proc.stdout

    run_dir = next(p for p in (ws / "leak_demo").iterdir()
                   if p.is_dir() and p.name not in ("src", "data"))
    doc = json.loads((run_dir / "delta_round_2.json").read_text())
    assert doc["verdict"]["reason"] == "guard_violation"
    assert doc["verdict"]["guard"] == "leakage"

    assert time.perf_counter() - start < 30.0
