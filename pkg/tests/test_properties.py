"""Randomized property suites.

Each property the acceptance criteria call out runs at >= 1000 cases:
budget invariants, accepted-metric monotonicity, never-accept-on-guard-
failure, canonicalization injectivity, task-spec round-trip, and total
access-scope filtering. All properties drive the real engine functions;
the only test-local code is sequencing.
"""

import dataclasses

from hypothesis import given, settings, strategies as st

from epoch.drivers import filter_visible_paths
from epoch.metrics import MetricsArtifact, TestCounts, artifact_from_dict, canonicalize
from epoch.protocol import (
    BaselineReady,
    CandidateReady,
    EvaluationReady,
    InvestigationReady,
    PHASE_2,
    VerdictReady,
    init_state,
    should_terminate,
    step,
    termination_round_for,
)
from epoch.review import (
    GuardOutcome,
    GuardReport,
    STAGE_SINGLE,
    Verdict,
    compute_delta,
    decide_verdict,
)
from epoch.taskspec import (
    DriverBinding,
    EvaluationConfig,
    ResolvedPolicy,
    TaskSpec,
    UNSET,
    parse_spec,
    serialize_spec,
)

THOROUGH = settings(max_examples=1000, deadline=None)


def make_policy(**over) -> ResolvedPolicy:
    base = dict(metric="accuracy", direction="maximize", delta_mode="absolute",
                min_delta=0.02, guards=(), max_rounds=4, max_retries_per_round=1,
                saturation_bound=None, access_scope="train_only", task_type="finetune",
                deterministic=False, multi_round=True)
    base.update(over)
    return ResolvedPolicy(**base)


def eval_art(value: float) -> MetricsArtifact:
    return MetricsArtifact(splits={"eval": {"accuracy": value}})


# --- protocol loop harness ------------------------------------------------------

metric_values = st.floats(min_value=0.0, max_value=1.0, allow_nan=False, width=64)

round_scripts = st.lists(
    st.tuples(metric_values,          # candidate eval value
              st.booleans(),          # investigator wants retry on reject
              st.booleans()),         # investigator has a hypothesis
    min_size=0, max_size=20)

budgets = st.tuples(st.integers(min_value=1, max_value=6),
                    st.integers(min_value=0, max_value=3))


def drive(policy: ResolvedPolicy, baseline_value: float, script) -> tuple:
    """Sequence the pure engine functions exactly the way the runner does."""
    state = step(init_state("prop"), BaselineReady(metrics=eval_art(baseline_value),
                                                   digest="d0"), policy)
    accepted_values = [baseline_value]
    cursor = 0
    while state.phase == PHASE_2:
        reason = should_terminate(state, policy)
        if reason is not None:
            state = step(state, VerdictReady(
                verdict=Verdict(kind="Terminate", reason=reason)), policy)
            break
        if cursor >= len(script):
            state = step(state, InvestigationReady(has_hypothesis=False), policy)
            break
        value, wants_retry, has_hypothesis = script[cursor]
        cursor += 1
        if not has_hypothesis:
            state = step(state, InvestigationReady(has_hypothesis=False), policy)
            break
        state = step(state, InvestigationReady(
            has_hypothesis=True, wants_retry_on_reject=wants_retry), policy)
        state = step(state, CandidateReady(change="c", digest=f"d{cursor}"), policy)
        state = step(state, EvaluationReady(metrics=eval_art(value)), policy)
        delta = compute_delta(state.accepted.metrics, eval_art(value), policy)
        verdict = decide_verdict(delta, GuardReport(outcomes=()), STAGE_SINGLE, policy)
        state = step(state, VerdictReady(verdict=verdict), policy)
        if verdict.kind == "Accept":
            accepted_values.append(value)
    return state, accepted_values


@THOROUGH
@given(budgets, metric_values, round_scripts)
def test_budget_invariants(budget, baseline_value, script):
    max_rounds, max_retries = budget
    policy = make_policy(max_rounds=max_rounds, max_retries_per_round=max_retries)
    state, _ = drive(policy, baseline_value, script)

    executed = [ref for ref in state.history if ref.round_index > 0
                and ref.verdict_kind in ("Accept", "Reject")]
    # rounds executed never exceed the optimization budget
    assert all(ref.round_index <= max_rounds - 1 for ref in executed) or max_rounds == 1
    assert len({ref.round_index for ref in executed}) <= max(0, max_rounds - 1)
    # per-round tries never exceed the initial try plus the retry budget
    per_round: dict[int, int] = {}
    for ref in executed:
        per_round[ref.round_index] = per_round.get(ref.round_index, 0) + 1
        assert ref.try_index <= max_retries
    assert all(n <= max_retries + 1 for n in per_round.values())
    assert state.phase == "Done"
    assert state.termination is not None


@THOROUGH
@given(budgets, metric_values, round_scripts, st.floats(min_value=0.001, max_value=0.3))
def test_accepted_metric_monotonicity(budget, baseline_value, script, min_delta):
    max_rounds, max_retries = budget
    policy = make_policy(max_rounds=max_rounds, max_retries_per_round=max_retries,
                         min_delta=min_delta)
    _, accepted_values = drive(policy, baseline_value, script)
    for prev, nxt in zip(accepted_values, accepted_values[1:]):
        assert nxt - prev >= min_delta


guard_reports = st.lists(
    st.tuples(st.sampled_from(["overfit_gap", "leakage", "staged_correctness",
                               "determinism_cache"]),
              st.booleans()),
    min_size=0, max_size=4).map(
    lambda pairs: GuardReport(outcomes=tuple(
        GuardOutcome(name, passed, "detail") for name, passed in pairs)))


@THOROUGH
@given(metric_values, metric_values, guard_reports,
       st.floats(min_value=0.0, max_value=0.5))
def test_never_accept_on_guard_failure(accepted, candidate, guards, min_delta):
    policy = make_policy(min_delta=min_delta)
    delta = compute_delta(eval_art(accepted), eval_art(candidate), policy)
    verdict = decide_verdict(delta, guards, STAGE_SINGLE, policy)
    if verdict.kind == "Accept":
        assert guards.overall_pass
        assert delta.meets_min_delta
    if not guards.overall_pass:
        assert verdict.kind == "Reject"
        assert verdict.reason == "guard_violation"


# --- canonicalization -------------------------------------------------------------

metric_names = st.sampled_from(["accuracy", "loss", "score", "f1", "items"])


def _metric_value(name: str):
    if name in ("accuracy", "f1"):
        return st.floats(min_value=0, max_value=1, allow_nan=False, width=64)
    return st.floats(min_value=-1e9, max_value=1e9, allow_nan=False, width=64)


split_maps = st.dictionaries(
    st.sampled_from(["train", "eval", "dev"]),
    st.dictionaries(metric_names, st.none(), min_size=1, max_size=3).flatmap(
        lambda names: st.fixed_dictionaries(
            {name: _metric_value(name) for name in names})),
    max_size=3)

artifacts = st.builds(
    MetricsArtifact,
    splits=split_maps,
    tests=st.one_of(st.none(), st.tuples(
        st.integers(min_value=0, max_value=50),
        st.integers(min_value=0, max_value=50)).map(
        lambda t: TestCounts(min(t), max(t)))),
    timings_ms=st.one_of(st.none(), st.dictionaries(
        st.sampled_from(["t1", "t2"]),
        st.floats(min_value=0, max_value=1e6, allow_nan=False, width=64), max_size=2)),
    notes=st.one_of(st.none(), st.text(max_size=20)),
)


@THOROUGH
@given(artifacts, artifacts)
def test_canonicalization_injective(a, b):
    assert (canonicalize(a) == canonicalize(b)) == (a == b)


@THOROUGH
@given(artifacts)
def test_canonicalization_round_trip(a):
    import json

    reparsed = artifact_from_dict(json.loads(canonicalize(a).decode("utf-8")))
    assert reparsed == a
    assert canonicalize(reparsed) == canonicalize(a)


# --- task-spec round-trip -----------------------------------------------------------

slugs = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_", min_size=1, max_size=12)
safe_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc")), max_size=40)

driver_bindings = st.one_of(
    st.builds(lambda n: DriverBinding(kind="builtin", builtin=n),
              st.sampled_from(["rule_hillclimb", "noop_planner", "synth_eval"])),
    st.builds(lambda argv, t: DriverBinding(kind="command", command=tuple(argv), timeout_s=t),
              st.lists(st.sampled_from(["python3", "driver.py", "--flag"]),
                       min_size=1, max_size=3),
              st.floats(min_value=1, max_value=900, allow_nan=False, width=64)),
    st.builds(lambda p: DriverBinding(kind="replay", trace=p),
              st.sampled_from(["traces/a.json", "t.json"])),
)

evaluations = st.builds(
    EvaluationConfig,
    primary_metric=st.sampled_from(["accuracy", "latency_ms", "f1"]),
    metric_direction=st.sampled_from([None, "maximize", "minimize"]),
    min_delta=st.floats(min_value=0, max_value=10, allow_nan=False, width=64),
    delta_mode=st.sampled_from([None, "absolute", "relative"]),
    deterministic=st.booleans(),
    train_cmd=st.one_of(st.none(), st.just("python train.py")),
    eval_cmd=st.one_of(st.none(), st.just("python evaluate.py")),
    acceptance_rule=safe_text,
    max_train_eval_gap=st.one_of(st.none(), st.floats(
        min_value=0, max_value=1, allow_nan=False, width=64)),
    saturation_bound=st.one_of(st.just(UNSET), st.none(), st.floats(
        min_value=0, max_value=10, allow_nan=False, width=64)),
)

task_specs = st.builds(
    TaskSpec,
    project_name=safe_text.filter(bool),
    project_slug=slugs,
    goal=safe_text,
    task_type=st.sampled_from(["prompt_tune", "finetune", "rule_based",
                               "code_improvement", "custom"]),
    max_rounds=st.integers(min_value=1, max_value=50),
    max_retries_per_round=st.integers(min_value=0, max_value=9),
    evaluation=evaluations,
    drivers=st.dictionaries(
        st.sampled_from(["seed_planner", "baseline_executor", "investigator",
                         "executor", "reviewer", "evaluator"]),
        driver_bindings, max_size=4),
)


@THOROUGH
@given(task_specs)
def test_spec_serialize_parse_round_trip(spec):
    assert parse_spec(serialize_spec(spec)) == spec


# --- access scope -----------------------------------------------------------------

driver_requests = st.builds(
    __import__("epoch.drivers", fromlist=["DriverRequest"]).DriverRequest,
    role=st.sampled_from(["seed_planner", "baseline_executor", "investigator",
                          "executor", "reviewer"]),
    round_index=st.integers(min_value=0, max_value=50),
    try_index=st.integers(min_value=0, max_value=9),
    goal=st.text(max_size=30),
    accepted_summary=st.dictionaries(st.sampled_from(["digest", "note"]),
                                     st.text(max_size=10), max_size=2),
    visible_paths=st.lists(st.text(alphabet="abc/_.", min_size=1, max_size=10),
                           max_size=4).map(tuple),
    prior_reports=st.lists(st.text(alphabet="abc/_.", min_size=1, max_size=10),
                           max_size=4).map(tuple),
    constraints=st.dictionaries(st.sampled_from(["min_delta", "hypothesis"]),
                                st.one_of(st.floats(allow_nan=False, width=64),
                                          st.text(max_size=10)), max_size=2),
)


@THOROUGH
@given(driver_requests)
def test_driver_wire_format_round_trips(request):
    import json

    from epoch.drivers import request_from_wire, request_to_wire

    wire = json.loads(json.dumps(request_to_wire(request)))
    assert request_from_wire(wire) == request


path_sets = st.lists(st.text(alphabet="abcdef/_.", min_size=1, max_size=15),
                     max_size=6).map(tuple)


@THOROUGH
@given(path_sets, path_sets, path_sets, path_sets,
       st.sampled_from(["train_only", "eval_only", "full_visible_tests", "custom"]))
def test_access_scope_filtering_total(train, eval_, tests, other, scope):
    visible = filter_visible_paths(scope, train_paths=train, eval_paths=eval_,
                                   test_paths=tests, other_paths=other)
    if scope == "train_only":
        # the spec's invariant, verbatim: visible ∩ eval-split paths = ∅
        assert not set(visible) & set(eval_)
        assert set(train) - set(eval_) <= set(visible)
    if scope == "eval_only":
        assert not set(visible) & set(train)
    assert set(visible) <= set(train) | set(eval_) | set(tests) | set(other)
