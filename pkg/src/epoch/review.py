"""Metric-driven review: delta computation, guard checks and verdicts.

The reviewer never mutates anything; every function here is pure so that a
recorded round can be re-derived from its artifacts byte-for-byte.

Verdict precedence on a candidate: guard violation, then regression, then
insufficient gain, then accept. Code-improvement tasks run a staged
objective: while the accepted state still fails tests the effective metric
is the test pass ratio (any strict increase accepts); once all tests pass
the configured timing metric takes over with the configured threshold.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import MetricsSchemaError
from .metrics import MetricsArtifact
from .taskspec import (
    GUARD_DETERMINISM_CACHE,
    GUARD_LEAKAGE,
    GUARD_OVERFIT_GAP,
    GUARD_STAGED_CORRECTNESS,
    ResolvedPolicy,
)

STAGE_SINGLE = "single"
STAGE_CORRECTNESS = "correctness"
STAGE_PERFORMANCE = "performance"

VERDICT_BASELINE = "Baseline"
VERDICT_ACCEPT = "Accept"
VERDICT_REJECT = "Reject"
VERDICT_TERMINATE = "Terminate"

REJECT_REGRESSION = "regression"
REJECT_INSUFFICIENT_GAIN = "insufficient_gain"
REJECT_GUARD_VIOLATION = "guard_violation"
REJECT_ERROR = "error"

TERMINATE_NO_HYPOTHESIS = "no_hypothesis"
TERMINATE_BUDGET_EXHAUSTED = "budget_exhausted"
TERMINATE_SATURATED = "saturated"
TERMINATE_ERROR = "error"

# A leak counts when a normalized eval example of at least this many
# characters appears as a substring of an artifact; shorter examples only
# match as whole-text equality.
LEAK_SUBSTRING_FLOOR = 20

_WS_RUN = re.compile(r"\s+")


@dataclass(frozen=True)
class DeltaRecord:
    metric: str
    accepted_value: float
    candidate_value: float
    mode: str        # effective mode for this round (stage-adjusted)
    direction: str   # effective direction for this round
    improvement: float
    meets_min_delta: bool
    min_delta: float
    stage: str = STAGE_SINGLE


@dataclass(frozen=True)
class GuardOutcome:
    guard: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class GuardReport:
    outcomes: tuple[GuardOutcome, ...]

    @property
    def overall_pass(self) -> bool:
        return all(o.passed for o in self.outcomes)

    def failing(self) -> GuardOutcome | None:
        for o in self.outcomes:
            if not o.passed:
                return o
        return None


@dataclass(frozen=True)
class Verdict:
    kind: str                 # Baseline | Accept | Reject | Terminate
    reason: str | None = None
    guard: str | None = None  # set for guard_violation rejects
    rationale: str = ""

    def __post_init__(self) -> None:
        if self.kind in (VERDICT_REJECT, VERDICT_TERMINATE) and not self.reason:
            raise ValueError(f"{self.kind} verdict requires a reason")
        if self.kind in (VERDICT_BASELINE, VERDICT_ACCEPT) and self.reason:
            raise ValueError(f"{self.kind} verdict must not carry a reason")

    @property
    def reason_label(self) -> str | None:
        """Reason as rendered in reports, e.g. guard_violation(leakage)."""
        if self.reason == REJECT_GUARD_VIOLATION and self.guard:
            return f"{self.reason}({self.guard})"
        return self.reason


@dataclass(frozen=True)
class GuardContext:
    """Everything guards may look at beyond the candidate artifact itself."""

    stage: str = STAGE_SINGLE
    eval_examples: tuple[str, ...] = ()
    artifact_texts: tuple[str, ...] = ()
    cache_hit: bool | None = None
    cache_consistent: bool | None = None


def current_stage(accepted: MetricsArtifact, policy: ResolvedPolicy) -> str:
    """Which objective applies to the next candidate, given the accepted state."""
    if policy.task_type != "code_improvement":
        return STAGE_SINGLE
    if accepted.tests is None:
        raise MetricsSchemaError(
            "code_improvement task requires a tests block in the accepted metrics artifact")
    return STAGE_CORRECTNESS if accepted.tests.passed < accepted.tests.total else STAGE_PERFORMANCE


def _primary_value(artifact: MetricsArtifact, policy: ResolvedPolicy, stage: str, side: str) -> float:
    if stage == STAGE_CORRECTNESS:
        if artifact.tests is None:
            raise MetricsSchemaError(f"{side} artifact lacks the tests block needed in correctness stage")
        return artifact.tests.ratio
    if stage == STAGE_PERFORMANCE:
        value = artifact.timing(policy.metric)
        if value is None:
            raise MetricsSchemaError(
                f"{side} artifact lacks timings_ms.{policy.metric} needed in performance stage")
        return value
    value = artifact.split_metric(policy.eval_split, policy.metric)
    if value is None:
        raise MetricsSchemaError(
            f"{side} artifact lacks splits.{policy.eval_split}.{policy.metric}")
    return value


def compute_delta(accepted: MetricsArtifact, candidate: MetricsArtifact,
                  policy: ResolvedPolicy) -> DeltaRecord:
    """Direction-normalized improvement of the candidate over the accepted state.

    maximize/absolute: candidate - accepted; minimize/absolute:
    accepted - candidate; relative: the absolute gain divided by
    |accepted|. In correctness stage the metric is the test pass ratio
    compared absolutely (maximize) with a zero threshold.
    """
    stage = current_stage(accepted, policy)
    if stage == STAGE_CORRECTNESS:
        metric, direction, mode, min_delta = "tests_pass_ratio", "maximize", "absolute", 0.0
    else:
        metric, direction, mode, min_delta = (
            policy.metric, policy.direction, policy.delta_mode, policy.min_delta)

    accepted_value = _primary_value(accepted, policy, stage, "accepted")
    candidate_value = _primary_value(candidate, policy, stage, "candidate")

    gain = candidate_value - accepted_value if direction == "maximize" else accepted_value - candidate_value
    if mode == "relative":
        if accepted_value == 0:
            raise MetricsSchemaError("relative delta is undefined for an accepted value of 0")
        improvement = gain / abs(accepted_value)
    else:
        improvement = gain

    return DeltaRecord(
        metric=metric,
        accepted_value=accepted_value,
        candidate_value=candidate_value,
        mode=mode,
        direction=direction,
        improvement=improvement,
        meets_min_delta=improvement >= min_delta,
        min_delta=min_delta,
        stage=stage,
    )


def normalize_text(text: str) -> str:
    return _WS_RUN.sub(" ", text).strip().lower()


def leakage_scan(eval_examples: list[str] | tuple[str, ...],
                 artifact_texts: list[str] | tuple[str, ...]) -> list[tuple[int, int]]:
    """Report (example_index, artifact_index) pairs where eval content leaked."""
    normalized_artifacts = [normalize_text(t) for t in artifact_texts]
    hits: list[tuple[int, int]] = []
    for ei, example in enumerate(eval_examples):
        needle = normalize_text(example)
        if not needle:
            continue
        for ai, haystack in enumerate(normalized_artifacts):
            if len(needle) >= LEAK_SUBSTRING_FLOOR:
                if needle in haystack:
                    hits.append((ei, ai))
            elif needle == haystack:
                hits.append((ei, ai))
    return hits


def _check_overfit_gap(candidate: MetricsArtifact, policy: ResolvedPolicy, max_gap: float) -> GuardOutcome:
    train = candidate.split_metric(policy.train_split, policy.metric)
    eval_ = candidate.split_metric(policy.eval_split, policy.metric)
    if train is None or eval_ is None:
        return GuardOutcome(GUARD_OVERFIT_GAP, False, "inputs missing")
    gap = train - eval_
    passed = gap < max_gap
    return GuardOutcome(
        GUARD_OVERFIT_GAP, passed,
        f"train-eval gap {gap:.4f} {'<' if passed else '>='} {max_gap:.4f}")


def _check_leakage(ctx: GuardContext) -> GuardOutcome:
    hits = leakage_scan(ctx.eval_examples, ctx.artifact_texts)
    if hits:
        return GuardOutcome(GUARD_LEAKAGE, False,
                            f"{len(hits)} eval example(s) found in candidate artifacts")
    return GuardOutcome(GUARD_LEAKAGE, True,
                        f"no eval content in candidate artifacts ({len(ctx.eval_examples)} examples scanned)")


def _check_staged_correctness(candidate: MetricsArtifact, ctx: GuardContext) -> GuardOutcome:
    if ctx.stage != STAGE_PERFORMANCE:
        return GuardOutcome(GUARD_STAGED_CORRECTNESS, True, f"stage {ctx.stage}: not enforced")
    if candidate.tests is None:
        return GuardOutcome(GUARD_STAGED_CORRECTNESS, False, "inputs missing")
    ok = candidate.tests.passed == candidate.tests.total
    return GuardOutcome(GUARD_STAGED_CORRECTNESS, ok,
                        f"tests {candidate.tests.passed}/{candidate.tests.total}")


def _check_determinism_cache(ctx: GuardContext) -> GuardOutcome:
    # The pass detail must not reveal hit vs miss: a resumed run may hit the
    # cache where the original run evaluated fresh, and canonical artifacts
    # must stay byte-identical either way.
    if ctx.cache_consistent is False:
        return GuardOutcome(GUARD_DETERMINISM_CACHE, False,
                            "stored artifact for this digest differs from fresh evaluation")
    return GuardOutcome(GUARD_DETERMINISM_CACHE, True, "metrics bound to candidate digest")


def check_guards(candidate: MetricsArtifact, policy: ResolvedPolicy,
                 ctx: GuardContext) -> GuardReport:
    """Evaluate exactly the policy's active guards, in policy order."""
    outcomes: list[GuardOutcome] = []
    for guard in policy.guards:
        if guard.name == GUARD_OVERFIT_GAP:
            outcomes.append(_check_overfit_gap(candidate, policy, guard.max_gap or 0.0))
        elif guard.name == GUARD_LEAKAGE:
            outcomes.append(_check_leakage(ctx))
        elif guard.name == GUARD_STAGED_CORRECTNESS:
            outcomes.append(_check_staged_correctness(candidate, ctx))
        elif guard.name == GUARD_DETERMINISM_CACHE:
            outcomes.append(_check_determinism_cache(ctx))
        else:  # pragma: no cover - resolve_policy only emits known guards
            outcomes.append(GuardOutcome(guard.name, False, "unknown guard"))
    return GuardReport(outcomes=tuple(outcomes))


def delta_to_dict(delta: DeltaRecord) -> dict:
    return {
        "metric": delta.metric,
        "accepted_value": delta.accepted_value,
        "candidate_value": delta.candidate_value,
        "mode": delta.mode,
        "direction": delta.direction,
        "improvement": delta.improvement,
        "meets_min_delta": delta.meets_min_delta,
        "min_delta": delta.min_delta,
        "stage": delta.stage,
    }


def delta_from_dict(doc: dict) -> DeltaRecord:
    return DeltaRecord(
        metric=str(doc["metric"]),
        accepted_value=float(doc["accepted_value"]),
        candidate_value=float(doc["candidate_value"]),
        mode=str(doc["mode"]),
        direction=str(doc["direction"]),
        improvement=float(doc["improvement"]),
        meets_min_delta=bool(doc["meets_min_delta"]),
        min_delta=float(doc["min_delta"]),
        stage=str(doc.get("stage", STAGE_SINGLE)),
    )


def guards_to_dict(report: GuardReport) -> dict:
    return {
        "overall_pass": report.overall_pass,
        "outcomes": [
            {"guard": o.guard, "pass": o.passed, "detail": o.detail}
            for o in report.outcomes
        ],
    }


def guards_from_dict(doc: dict) -> GuardReport:
    return GuardReport(outcomes=tuple(
        GuardOutcome(guard=str(o["guard"]), passed=bool(o["pass"]), detail=str(o["detail"]))
        for o in doc["outcomes"]
    ))


def verdict_to_dict(verdict: Verdict) -> dict:
    return {
        "kind": verdict.kind,
        "reason": verdict.reason,
        "guard": verdict.guard,
        "rationale": verdict.rationale,
    }


def verdict_from_dict(doc: dict) -> Verdict:
    return Verdict(
        kind=str(doc["kind"]),
        reason=doc.get("reason"),
        guard=doc.get("guard"),
        rationale=str(doc.get("rationale", "")),
    )


def decide_verdict(delta: DeltaRecord, guards: GuardReport, stage: str,
                   policy: ResolvedPolicy, investigation_summary: str = "") -> Verdict:
    """Accept/reject decision for one candidate; termination is not decided here."""
    failing = guards.failing()
    if failing is not None:
        return Verdict(
            kind=VERDICT_REJECT, reason=REJECT_GUARD_VIOLATION, guard=failing.guard,
            rationale=f"guard {failing.guard} failed: {failing.detail}")

    if delta.improvement < 0:
        return Verdict(
            kind=VERDICT_REJECT, reason=REJECT_REGRESSION,
            rationale=f"{delta.metric} moved {delta.improvement:+.6g} against the objective")

    if stage == STAGE_CORRECTNESS:
        if delta.improvement > 0:
            return Verdict(kind=VERDICT_ACCEPT,
                           rationale=f"test pass ratio rose {delta.accepted_value:.4f} -> {delta.candidate_value:.4f}")
        return Verdict(kind=VERDICT_REJECT, reason=REJECT_INSUFFICIENT_GAIN,
                       rationale="no new tests pass")

    if delta.improvement < delta.min_delta:
        return Verdict(
            kind=VERDICT_REJECT, reason=REJECT_INSUFFICIENT_GAIN,
            rationale=f"improvement {delta.improvement:+.6g} below threshold {delta.min_delta:g}")

    rationale = f"{delta.metric} improved {delta.improvement:+.6g} (threshold {delta.min_delta:g})"
    if investigation_summary:
        rationale += f"; hypothesis: {investigation_summary}"
    return Verdict(kind=VERDICT_ACCEPT, rationale=rationale)
