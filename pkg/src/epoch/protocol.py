"""The protocol state machine.

`step` is a pure function from (state, event, policy) to a new state; all
I/O lives in the runner. Rounds are 0-indexed internally with round 0 the
baseline; reports and file names render round r as r+1 so the baseline
reads as round 1.

Per-round event order is fixed: Investigation -> Candidate -> Evaluation ->
Verdict. On Accept the candidate becomes the accepted state and the round
advances with the retry counter reset. On Reject the round either retries
(retry budget left and the investigator wanted a retry) or advances. On
Terminate the run is Done and every further event is an error.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import IllegalEventError
from .metrics import MetricsArtifact
from .review import (
    REJECT_ERROR,
    TERMINATE_BUDGET_EXHAUSTED,
    TERMINATE_NO_HYPOTHESIS,
    TERMINATE_SATURATED,
    VERDICT_ACCEPT,
    VERDICT_BASELINE,
    VERDICT_REJECT,
    VERDICT_TERMINATE,
    Verdict,
)
from .taskspec import ResolvedPolicy

PHASE_INIT = "Init"
PHASE_1 = "Phase1"
PHASE_2 = "Phase2"
PHASE_DONE = "Done"

STAGE_BASELINE = "awaiting_baseline"
STAGE_INVESTIGATION = "awaiting_investigation"
STAGE_CANDIDATE = "awaiting_candidate"
STAGE_EVALUATION = "awaiting_evaluation"
STAGE_VERDICT = "awaiting_verdict"

# Recorded when a baseline-only run finishes; not a reviewer verdict reason.
TERMINATE_BASELINE_ONLY = "baseline_only"


def render_round(round_index: int, try_index: int = 0) -> str:
    """Human-facing round label: state round 2 try 1 renders as 3R1."""
    label = str(round_index + 1)
    if try_index > 0:
        label += f"R{try_index}"
    return label


def artifact_round_suffix(round_index: int, try_index: int = 0) -> str:
    """File-name round component: state round 2 try 1 -> '3r1'."""
    suffix = str(round_index + 1)
    if try_index > 0:
        suffix += f"r{try_index}"
    return suffix


@dataclass(frozen=True)
class AcceptedState:
    digest: str
    metrics: MetricsArtifact
    round_index: int


@dataclass(frozen=True)
class PendingCandidate:
    change: str = ""
    digest: str = ""
    metrics: MetricsArtifact | None = None
    wants_retry_on_reject: bool = False
    investigation_summary: str = ""


@dataclass(frozen=True)
class Termination:
    reason: str
    round_index: int


@dataclass(frozen=True)
class RoundRef:
    """Reference to a committed round record (the delta artifact)."""

    round_index: int
    try_index: int
    verdict_kind: str
    verdict_reason: str | None


@dataclass(frozen=True)
class RunState:
    run_id: str
    phase: str = PHASE_INIT
    stage: str = STAGE_BASELINE
    accepted: AcceptedState | None = None
    round_index: int = 0
    tries_used_this_round: int = 0
    pending: PendingCandidate | None = None
    history: tuple[RoundRef, ...] = ()
    termination: Termination | None = None


# --- events -------------------------------------------------------------------

@dataclass(frozen=True)
class BaselineReady:
    metrics: MetricsArtifact
    digest: str
    change: str = ""


@dataclass(frozen=True)
class InvestigationReady:
    has_hypothesis: bool
    summary: str = ""
    wants_retry_on_reject: bool = False


@dataclass(frozen=True)
class CandidateReady:
    change: str
    digest: str


@dataclass(frozen=True)
class EvaluationReady:
    metrics: MetricsArtifact


@dataclass(frozen=True)
class VerdictReady:
    verdict: Verdict


Event = BaselineReady | InvestigationReady | CandidateReady | EvaluationReady | VerdictReady


def _illegal(state: RunState, event: Event, expected: tuple[str, ...]) -> IllegalEventError:
    return IllegalEventError(
        f"illegal event {type(event).__name__} in phase {state.phase}/{state.stage}; "
        f"expected {' or '.join(expected) if expected else 'no further events'}",
        expected=expected,
    )


def init_state(run_id: str) -> RunState:
    return RunState(run_id=run_id)


def step(state: RunState, event: Event, policy: ResolvedPolicy) -> RunState:
    """Advance the state machine by one event. Pure; raises IllegalEventError
    when the event is not legal for the current phase and sub-stage."""
    if state.phase == PHASE_DONE:
        raise _illegal(state, event, ())

    if state.phase in (PHASE_INIT, PHASE_1):
        if not isinstance(event, BaselineReady):
            raise _illegal(state, event, ("BaselineReady",))
        accepted = AcceptedState(digest=event.digest, metrics=event.metrics, round_index=0)
        ref = RoundRef(0, 0, VERDICT_BASELINE, None)
        if not policy.multi_round:
            return replace(
                state, phase=PHASE_DONE, stage=STAGE_BASELINE, accepted=accepted,
                history=state.history + (ref,),
                termination=Termination(TERMINATE_BASELINE_ONLY, 0))
        return replace(
            state, phase=PHASE_2, stage=STAGE_INVESTIGATION, accepted=accepted,
            round_index=1, tries_used_this_round=0, history=state.history + (ref,))

    # Phase 2
    if isinstance(event, InvestigationReady):
        if state.stage != STAGE_INVESTIGATION:
            raise _illegal(state, event, (_expected_for(state.stage),))
        if not event.has_hypothesis:
            verdict = Verdict(kind=VERDICT_TERMINATE, reason=TERMINATE_NO_HYPOTHESIS,
                              rationale="investigator produced no hypothesis")
            return _apply_verdict(state, verdict, policy)
        pending = PendingCandidate(
            wants_retry_on_reject=event.wants_retry_on_reject,
            investigation_summary=event.summary)
        return replace(state, stage=STAGE_CANDIDATE, pending=pending)

    if isinstance(event, CandidateReady):
        if state.stage != STAGE_CANDIDATE or state.pending is None:
            raise _illegal(state, event, (_expected_for(state.stage),))
        return replace(state, stage=STAGE_EVALUATION,
                       pending=replace(state.pending, change=event.change, digest=event.digest))

    if isinstance(event, EvaluationReady):
        if state.stage != STAGE_EVALUATION or state.pending is None:
            raise _illegal(state, event, (_expected_for(state.stage),))
        return replace(state, stage=STAGE_VERDICT,
                       pending=replace(state.pending, metrics=event.metrics))

    if isinstance(event, VerdictReady):
        # Terminations and error rejects may interrupt a round at any
        # sub-stage (budget/saturation checks run between rounds; driver or
        # evaluation crashes can happen mid-round). Ordinary Accept/Reject
        # verdicts require a fully evaluated candidate.
        interrupting = (event.verdict.kind == VERDICT_TERMINATE
                        or (event.verdict.kind == VERDICT_REJECT
                            and event.verdict.reason == REJECT_ERROR))
        if interrupting:
            return _apply_verdict(state, event.verdict, policy)
        if state.stage != STAGE_VERDICT or state.pending is None:
            raise _illegal(state, event, (_expected_for(state.stage),))
        return _apply_verdict(state, event.verdict, policy)

    raise _illegal(state, event, (_expected_for(state.stage),))  # pragma: no cover


def _expected_for(stage: str) -> str:
    return {
        STAGE_BASELINE: "BaselineReady",
        STAGE_INVESTIGATION: "InvestigationReady",
        STAGE_CANDIDATE: "CandidateReady",
        STAGE_EVALUATION: "EvaluationReady",
        STAGE_VERDICT: "VerdictReady",
    }[stage]


def _apply_verdict(state: RunState, verdict: Verdict, policy: ResolvedPolicy) -> RunState:
    ref = RoundRef(state.round_index, state.tries_used_this_round, verdict.kind, verdict.reason)
    history = state.history + (ref,)

    if verdict.kind == VERDICT_TERMINATE:
        return replace(
            state, phase=PHASE_DONE, stage=STAGE_INVESTIGATION, pending=None, history=history,
            termination=Termination(verdict.reason or "", state.round_index))

    if verdict.kind == VERDICT_ACCEPT:
        if state.pending is None or state.pending.metrics is None:
            raise IllegalEventError("Accept verdict without a fully evaluated candidate")
        accepted = AcceptedState(
            digest=state.pending.digest,
            metrics=state.pending.metrics,
            round_index=state.round_index)
        return replace(
            state, accepted=accepted, pending=None, history=history,
            round_index=state.round_index + 1, tries_used_this_round=0,
            stage=STAGE_INVESTIGATION)

    if verdict.kind == VERDICT_REJECT:
        # Crash rejects always retry while budget remains; ordinary rejects
        # retry only when the investigator flagged a fresh hypothesis.
        if verdict.reason == REJECT_ERROR:
            wants_retry = True
        else:
            wants_retry = state.pending.wants_retry_on_reject if state.pending else False
        if wants_retry and state.tries_used_this_round < policy.max_retries_per_round:
            return replace(
                state, pending=None, history=history,
                tries_used_this_round=state.tries_used_this_round + 1,
                stage=STAGE_INVESTIGATION)
        return replace(
            state, pending=None, history=history,
            round_index=state.round_index + 1, tries_used_this_round=0,
            stage=STAGE_INVESTIGATION)

    raise IllegalEventError(f"verdict kind {verdict.kind!r} cannot be applied mid-run")


def accepted_primary_value(state: RunState, policy: ResolvedPolicy) -> float | None:
    """Current accepted value of the policy's primary metric, if recorded."""
    if state.accepted is None:
        return None
    artifact = state.accepted.metrics
    if policy.task_type == "code_improvement":
        value = artifact.timing(policy.metric)
        if value is None and artifact.tests is not None:
            return artifact.tests.ratio
        return value
    return artifact.split_metric(policy.eval_split, policy.metric)


def should_terminate(state: RunState, policy: ResolvedPolicy) -> str | None:
    """Budget and saturation checks between rounds.

    no_hypothesis termination arises through `step` when an investigation
    comes back empty, never from here.
    """
    if state.phase != PHASE_2:
        return None
    if state.round_index >= policy.max_rounds:
        return TERMINATE_BUDGET_EXHAUSTED
    if policy.saturation_bound is not None:
        value = accepted_primary_value(state, policy)
        if value is not None:
            if policy.direction == "maximize" and value >= policy.saturation_bound:
                return TERMINATE_SATURATED
            if policy.direction == "minimize" and value <= policy.saturation_bound:
                return TERMINATE_SATURATED
    return None


def termination_round_for(reason: str, state: RunState, policy: ResolvedPolicy) -> int:
    """Round index recorded with a termination decided between rounds."""
    if reason == TERMINATE_BUDGET_EXHAUSTED:
        return policy.max_rounds - 1
    # saturated: credit the round that reached the bound.
    return max(state.round_index - 1, 0)
