"""Run orchestration: Phase 1 baseline work, Phase 2 rounds, resume.

The state machine in `protocol` stays pure; everything with side effects
(driver calls, command execution, artifact commits, candidate promotion)
happens here, in a fixed per-round order:

    investigate -> execute -> evaluate -> review -> record -> step

Driver or evaluation crashes inside a round consume a retry when one is
left and otherwise terminate the run with reason `error`. A Phase 1
failure never produces a terminated run; it raises RunError, because
there is no optimization without an accepted baseline.
"""

from __future__ import annotations

import dataclasses
import secrets
import shutil
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import drivers as drv
from . import protocol, tracking
from .errors import (
    CommandError,
    DriverError,
    EpochError,
    MetricsError,
    ReplayTraceError,
    RunError,
    SpecSchemaError,
)
from .harness import Harness, snapshot_digest
from .metrics import MetricsArtifact, artifact_to_dict
from .review import (
    GuardContext,
    REJECT_ERROR,
    TERMINATE_ERROR,
    VERDICT_ACCEPT,
    VERDICT_BASELINE,
    VERDICT_TERMINATE,
    Verdict,
    check_guards,
    compute_delta,
    current_stage,
    decide_verdict,
)
from .taskspec import DriverBinding, ResolvedPolicy, TaskSpec, resolve_policy, serialize_spec, validate_spec
from .tracking import RoundRecord, RunLock, Store, utc_now_iso


def new_run_id() -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return f"{stamp}-{secrets.token_hex(3)}"


_ADMISSIBLE_CHANGES = {
    "prompt_tune": "modify prompt artifacts only; the underlying model stays fixed",
    "finetune": "adjust the declared hyperparameters only; model architecture stays fixed",
    "rule_based": "modify rule thresholds, conditions and precedence only",
    "code_improvement": "modify program source; the test suite stays fixed",
}


def _admissible_changes(spec: TaskSpec) -> str:
    return _ADMISSIBLE_CHANGES.get(
        spec.task_type, spec.evaluation.acceptance_rule or spec.goal)


@dataclass
class DriverContext:
    """Engine-side context handed to builtin drivers (not on the wire)."""

    store: Store
    spec: TaskSpec
    policy: ResolvedPolicy
    accepted_dir: Path
    candidate_dir: Path | None = None
    accepted_metrics: MetricsArtifact | None = None
    prior_records: list[RoundRecord] = field(default_factory=list)
    baseline_metrics: MetricsArtifact | None = None


@dataclass(frozen=True)
class RoundInputs:
    has_hypothesis: bool
    investigation_text: str = ""
    hypothesis_summary: str = ""
    wants_retry: bool = False
    change: str = ""
    metrics_override: MetricsArtifact | None = None


@dataclass
class RunResult:
    state: protocol.RunState
    verdict_lines: list[str]
    summary_path: Path | None
    run_dir: Path


_REPLAYABLE_ROLES = ("seed_planner", "baseline_executor", "investigator",
                     "executor", "evaluator")


def _bind_all_roles_to_trace(spec: TaskSpec, trace: str) -> TaskSpec:
    """Rebind every executable role to one replay trace.

    Used by `replay`, and materialized into the effective spec so the
    recorded config reflects what actually ran and an interrupted replay
    resumes with replay drivers, not the spec's original bindings.
    """
    drivers = dict(spec.drivers)
    for role in _REPLAYABLE_ROLES:
        drivers[role] = DriverBinding(kind="replay", trace=trace)
    return dataclasses.replace(spec, drivers=drivers)


def _absolutize_trace_paths(spec: TaskSpec, spec_dir: Path | None) -> tuple[TaskSpec, bool]:
    """Resolve relative replay-trace paths against the spec file's directory.

    The effective spec copy recorded in the workspace then carries absolute
    paths, so resumed runs find their traces regardless of cwd.
    """
    base = spec_dir if spec_dir is not None else Path.cwd()
    rewritten = {}
    for role, binding in spec.drivers.items():
        if binding.kind == "replay" and binding.trace and not Path(binding.trace).is_absolute():
            rewritten[role] = dataclasses.replace(
                binding, trace=str((base / binding.trace).resolve()))
    if not rewritten:
        return spec, False
    drivers = dict(spec.drivers)
    drivers.update(rewritten)
    return dataclasses.replace(spec, drivers=drivers), True


class Runner:
    """Executes one run of one task to termination."""

    def __init__(self, spec: TaskSpec, workspace: str | Path, *,
                 run_id: str | None = None, trace_override: str | Path | None = None,
                 spec_text: str | None = None, spec_dir: str | Path | None = None) -> None:
        violations = validate_spec(spec)
        if violations:
            raise SpecSchemaError(violations[0].path, violations[0].message)
        rewrote = False
        if trace_override is not None:
            spec = _bind_all_roles_to_trace(spec, str(Path(trace_override).resolve()))
            rewrote = True
        spec, rewrote_paths = _absolutize_trace_paths(
            spec, Path(spec_dir) if spec_dir is not None else None)
        self.spec = spec
        self.policy = resolve_policy(spec)
        self.workspace = Path(workspace)
        self.store = tracking.open_store(self.workspace, spec.project_slug,
                                         run_id or new_run_id(), spec.tracking.backend)
        if spec_text is not None and not (rewrote or rewrote_paths):
            self.spec_text = spec_text
        else:
            self.spec_text = serialize_spec(spec)
        self._traces: dict[str, drv.ReplayTrace] = {}
        self.prior_records: list[RoundRecord] = []
        self.verdict_lines: list[str] = []
        self.harness: Harness | None = None

    # -- driver plumbing ----------------------------------------------------

    def _binding(self, role: str) -> DriverBinding | None:
        return self.spec.drivers.get(role)

    def _trace_for(self, binding: DriverBinding) -> drv.ReplayTrace:
        path = binding.trace or ""
        if path not in self._traces:
            resolved = Path(path)
            if not resolved.is_absolute():
                resolved = self.workspace / path
            self._traces[path] = drv.load_trace(resolved)
        return self._traces[path]

    def _visible_paths(self) -> tuple[str, ...]:
        data_dir = self.store.task_dir / "data"
        train: list[str] = []
        eval_: list[str] = []
        other: list[str] = []
        if data_dir.is_dir():
            for path in sorted(data_dir.iterdir()):
                name = path.name
                stem = path.stem
                if stem == (self.spec.data.train_split or "train") or name.startswith("train"):
                    train.append(str(path))
                elif stem == (self.spec.data.eval_split or "eval") or name.startswith("eval"):
                    eval_.append(str(path))
                else:
                    other.append(str(path))
        tests_dir = self.store.task_dir / "tests"
        tests = [str(p) for p in sorted(tests_dir.rglob("*")) if p.is_file()] \
            if tests_dir.is_dir() else []
        return drv.filter_visible_paths(
            self.policy.access_scope,
            train_paths=tuple(train), eval_paths=tuple(eval_),
            test_paths=tuple(tests), other_paths=tuple(other))

    def _prior_report_paths(self) -> tuple[str, ...]:
        names: list[str] = []
        for record in self.prior_records:
            suffix = protocol.artifact_round_suffix(record.round_index, record.try_index)
            if record.investigation_text:
                names.append(f"investigation_report_round_{suffix}.md")
            if record.metrics is not None:
                names.append(f"proposed_metrics_round_{suffix}.json")
            names.append(f"delta_round_{suffix}.json")
        return tuple(str(self.store.run_dir / n) for n in names)

    def _request(self, role: str, state: protocol.RunState,
                 extra_constraints: dict | None = None) -> drv.DriverRequest:
        accepted_summary: dict = {}
        if state.accepted is not None:
            accepted_summary = {
                "metrics": artifact_to_dict(state.accepted.metrics),
                "digest": state.accepted.digest,
            }
        constraints = {
            "task_type": self.spec.task_type,
            "admissible_changes": _admissible_changes(self.spec),
            "access_scope": self.policy.access_scope,
            "min_delta": self.policy.min_delta,
            "max_rounds": self.spec.max_rounds,
            "max_retries_per_round": self.spec.max_retries_per_round,
            "investigation_samples": self.spec.investigation.samples,
        }
        if extra_constraints:
            constraints.update(extra_constraints)
        return drv.DriverRequest(
            role=role,
            round_index=state.round_index,
            try_index=state.tries_used_this_round,
            goal=self.spec.goal,
            accepted_summary=accepted_summary,
            visible_paths=self._visible_paths(),
            prior_reports=self._prior_report_paths(),
            constraints=constraints,
        )

    def _driver_env(self, state: protocol.RunState, candidate_dir: Path | None,
                    phase: str) -> dict[str, str]:
        env = {
            "EPOCH_RUN_DIR": str(self.store.run_dir),
            "EPOCH_ROUND": protocol.render_round(state.round_index, state.tries_used_this_round),
            "EPOCH_TRY": str(state.tries_used_this_round),
            "EPOCH_PHASE": phase,
        }
        if candidate_dir is not None:
            env["EPOCH_CANDIDATE_DIR"] = str(candidate_dir)
        return env

    def _invoke(self, role: str, state: protocol.RunState, ctx: DriverContext,
                phase: str = "Phase2",
                extra_constraints: dict | None = None) -> drv.DriverResponse:
        binding = self._binding(role)
        if binding is None:
            raise DriverError(f"no driver bound for role {role}")
        request = self._request(role, state, extra_constraints)
        if binding.kind == "builtin":
            return drv.builtin_driver(binding.builtin or "", request, ctx)
        if binding.kind == "command":
            return drv.invoke_external(
                binding.command or (), request, binding.timeout_s,
                env=self._driver_env(state, ctx.candidate_dir, phase),
                cwd=self.store.task_dir)
        raise DriverError(f"role {role} is replay-bound; replay is handled by the round loop")

    # -- initialization ------------------------------------------------------

    def init_run(self) -> protocol.RunState:
        """Create the run skeleton and materialize any demo task data."""
        try:
            self.store.create_skeleton(self.spec, self.spec_text)
        except OSError as exc:
            raise RunError(f"cannot create run workspace: {exc}") from exc
        # Interrupted writes leave .part files and tmp/ leftovers; they are
        # not committed artifacts and must not survive into a resumed run.
        for stray in self.store.run_dir.glob("*.part"):
            stray.unlink()
        tmp_dir = self.store.run_dir / "tmp"
        if tmp_dir.is_dir():
            shutil.rmtree(tmp_dir)
        from .demos import setup_task  # late import; demos register builtins
        setup_task(self.store, self.spec)

        builtin_eval = None
        eval_binding = self.spec.drivers.get("evaluator")
        if eval_binding and eval_binding.kind == "builtin":
            evaluator = drv.builtin_evaluator(eval_binding.builtin or "")
            store, spec = self.store, self.spec
            builtin_eval = lambda candidate_dir: evaluator(candidate_dir, store, spec)  # noqa: E731

        self.harness = Harness(
            run_dir=self.store.run_dir,
            train_cmd=self.spec.evaluation.train_cmd,
            eval_cmd=self.spec.evaluation.eval_cmd,
            deterministic=self.spec.evaluation.deterministic,
            builtin_evaluator=builtin_eval,
        )
        return protocol.init_state(self.store.run_id)

    def _ctx(self, state: protocol.RunState, candidate_dir: Path | None) -> DriverContext:
        return DriverContext(
            store=self.store,
            spec=self.spec,
            policy=self.policy,
            accepted_dir=self.store.artifact_dir(self.spec),
            candidate_dir=candidate_dir,
            accepted_metrics=state.accepted.metrics if state.accepted else None,
            prior_records=self.prior_records,
            baseline_metrics=self.store.baseline_metrics(),
        )

    # -- phase 1 ---------------------------------------------------------------

    def run_phase1(self, state: protocol.RunState) -> protocol.RunState:
        started = utc_now_iso()
        try:
            return self._run_phase1_inner(state, started)
        except ReplayTraceError:
            raise  # a malformed trace is a spec-level problem, not a run failure
        except (DriverError, CommandError, MetricsError, OSError) as exc:
            raise RunError(f"baseline phase failed: {exc}") from exc

    def _run_phase1_inner(self, state: protocol.RunState, started: str) -> protocol.RunState:
        assert self.harness is not None
        candidate_dir = self.store.candidate_dir(0, 0)
        replay_binding = self._binding("baseline_executor")
        replay_mode = replay_binding is not None and replay_binding.kind == "replay"
        seed_design = ""
        change = "Baseline"
        metrics_override = None

        if self.spec.phases.baseline_construction:
            candidate_dir.mkdir(parents=True, exist_ok=True)
            if replay_mode:
                entry = self._trace_for(replay_binding).lookup(0, 0)
                if entry is None or entry.metrics is None:
                    raise RunError("replay trace has no baseline entry (round 0)")
                change = entry.change or change
                seed_design = entry.investigation
                (candidate_dir / "change.md").write_text(
                    f"round 1: {change}\n", encoding="utf-8")
                metrics_override = entry.metrics
            else:
                ctx = self._ctx(state, candidate_dir)
                if self.spec.roles.seed_planner and self._binding("seed_planner") is not None:
                    planner = self._invoke("seed_planner", state, ctx, phase="Phase1")
                    seed_design = str(planner.payload.get("design", ""))
                executor = self._invoke("baseline_executor", state, ctx, phase="Phase1",
                                        extra_constraints={"seed_design": seed_design})
                change = str(executor.payload.get("change", change))
        else:
            # Validate the pre-existing baseline in the task artifact dir.
            candidate_dir = self.store.artifact_dir(self.spec)
            if replay_mode:
                entry = self._trace_for(replay_binding).lookup(0, 0)
                if entry is None or entry.metrics is None:
                    raise RunError("replay trace has no baseline entry (round 0)")
                change = entry.change or change
                metrics_override = entry.metrics

        outcome = self.harness.evaluate_candidate(
            candidate_dir, round_label="1", try_index=0, phase="Phase1",
            metrics_override=metrics_override)

        self.store.record_baseline(outcome.artifact, started_at=started, ended_at=utc_now_iso())
        baseline_record = RoundRecord(
            round_index=0, try_index=0, change=change, digest=outcome.digest,
            wants_retry_on_reject=False, investigation_text=seed_design,
            metrics=None, delta=None, guards=None,
            verdict=Verdict(kind=VERDICT_BASELINE, rationale="baseline accepted"),
            started_at=started, ended_at=utc_now_iso())
        self.store.record_round(baseline_record)
        self.prior_records.append(baseline_record)

        if self.spec.phases.baseline_construction:
            self._promote(candidate_dir)

        state = protocol.step(state, protocol.BaselineReady(
            metrics=outcome.artifact, digest=outcome.digest, change=change), self.policy)
        self._emit_line(0, 0, baseline_record.verdict, self._primary_of(outcome.artifact))
        return state

    # -- phase 2 -----------------------------------------------------------------

    def _gather_inputs(self, state: protocol.RunState) -> RoundInputs:
        inv_binding = self._binding("investigator")
        if inv_binding is not None and inv_binding.kind == "replay":
            entry = self._trace_for(inv_binding).lookup(
                state.round_index, state.tries_used_this_round)
            if entry is None:
                return RoundInputs(has_hypothesis=False,
                                   investigation_text="Replay trace exhausted; no further hypothesis.")
            if entry.directive == drv.DIRECTIVE_NO_HYPOTHESIS:
                return RoundInputs(has_hypothesis=False,
                                   investigation_text=entry.investigation)
            return RoundInputs(
                has_hypothesis=True,
                investigation_text=entry.investigation,
                hypothesis_summary=entry.change,
                wants_retry=entry.directive == drv.DIRECTIVE_RETRY,
                change=entry.change,
                metrics_override=entry.metrics)

        ctx = self._ctx(state, None)
        inv = self._invoke("investigator", state, ctx)
        if not inv.has_hypothesis:
            return RoundInputs(has_hypothesis=False, investigation_text=inv.report)
        return RoundInputs(
            has_hypothesis=True,
            investigation_text=inv.report,
            hypothesis_summary=inv.hypothesis,
            wants_retry=inv.wants_retry_on_reject)

    def _execute_candidate(self, state: protocol.RunState, inputs: RoundInputs) -> tuple[Path, str]:
        candidate_dir = self.store.candidate_dir(state.round_index, state.tries_used_this_round)
        if candidate_dir.exists():
            shutil.rmtree(candidate_dir)
        candidate_dir.mkdir(parents=True)

        exec_binding = self._binding("executor")
        if exec_binding is not None and exec_binding.kind == "replay":
            label = protocol.render_round(state.round_index, state.tries_used_this_round)
            (candidate_dir / "change.md").write_text(
                f"round {label}: {inputs.change}\n", encoding="utf-8")
            return candidate_dir, inputs.change

        # Start every candidate from a copy of the accepted snapshot.
        accepted_dir = self.store.artifact_dir(self.spec)
        if accepted_dir.is_dir():
            shutil.copytree(accepted_dir, candidate_dir, dirs_exist_ok=True)

        ctx = self._ctx(state, candidate_dir)
        response = self._invoke("executor", state, ctx,
                                extra_constraints={"hypothesis": inputs.hypothesis_summary,
                                                   "investigation": inputs.investigation_text})
        return candidate_dir, response.change or inputs.hypothesis_summary

    def _guard_context(self, stage: str, candidate_dir: Path,
                       outcome) -> GuardContext:
        artifact_texts: list[str] = []
        if candidate_dir.is_dir():
            for path in sorted(candidate_dir.rglob("*")):
                if path.is_file():
                    try:
                        artifact_texts.append(path.read_text(encoding="utf-8"))
                    except (UnicodeDecodeError, OSError):
                        continue
        return GuardContext(
            stage=stage,
            eval_examples=self._eval_examples(),
            artifact_texts=tuple(artifact_texts),
            cache_hit=outcome.cache_hit,
            cache_consistent=outcome.cache_consistent,
        )

    def _eval_examples(self) -> tuple[str, ...]:
        """Eval-split texts for the leakage guard, when materialized on disk."""
        import json as _json

        name = self.spec.data.eval_split or "eval"
        data_dir = self.store.task_dir / "data"
        for candidate in (data_dir / name, data_dir / f"{name}.json", data_dir / f"{name}.txt"):
            if not candidate.is_file():
                continue
            if candidate.suffix == ".json":
                try:
                    doc = _json.loads(candidate.read_text(encoding="utf-8"))
                except ValueError:
                    return ()
                if isinstance(doc, list):
                    texts = []
                    for item in doc:
                        if isinstance(item, str):
                            texts.append(item)
                        elif isinstance(item, dict) and "text" in item:
                            texts.append(str(item["text"]))
                    return tuple(texts)
                return ()
            return tuple(l for l in candidate.read_text(encoding="utf-8").splitlines() if l.strip())
        return ()

    def _consult_critic(self, state: protocol.RunState, delta, candidate_metrics) -> dict | None:
        if self.spec.roles.reviewer.mode != "llm_critic":
            return None
        binding = self._binding("reviewer")
        if binding is None or binding.kind == "replay":
            return None
        from .review import delta_to_dict
        ctx = self._ctx(state, None)
        response = self._invoke(
            "reviewer", state, ctx,
            extra_constraints={"candidate_metrics": artifact_to_dict(candidate_metrics),
                               "delta": delta_to_dict(delta)})
        return {"suggestion": str(response.payload.get("verdict_suggestion", "")),
                "rationale": str(response.payload.get("rationale", ""))}

    def run_round(self, state: protocol.RunState) -> protocol.RunState:
        """One investigation -> execution -> evaluation -> review cycle."""
        assert self.harness is not None
        assert state.accepted is not None
        started = utc_now_iso()
        round_index, try_index = state.round_index, state.tries_used_this_round

        try:
            inputs = self._gather_inputs(state)

            if not inputs.has_hypothesis:
                verdict = Verdict(kind=VERDICT_TERMINATE, reason="no_hypothesis",
                                  rationale="investigator produced no hypothesis")
                record = RoundRecord(
                    round_index=round_index, try_index=try_index, change="", digest="",
                    wants_retry_on_reject=False,
                    investigation_text=inputs.investigation_text
                    or "No further improvement hypothesis.",
                    metrics=None, delta=None, guards=None, verdict=verdict,
                    started_at=started, ended_at=utc_now_iso())
                self.store.record_round(record)
                self.prior_records.append(record)
                state = protocol.step(state, protocol.InvestigationReady(has_hypothesis=False),
                                      self.policy)
                self._emit_line(round_index, try_index, verdict,
                                self._primary_of(state.accepted.metrics if state.accepted else None))
                return state

            state = protocol.step(state, protocol.InvestigationReady(
                has_hypothesis=True, summary=inputs.hypothesis_summary,
                wants_retry_on_reject=inputs.wants_retry), self.policy)

            candidate_dir, change = self._execute_candidate(state, inputs)
            digest = snapshot_digest(candidate_dir)
            state = protocol.step(state, protocol.CandidateReady(change=change, digest=digest),
                                  self.policy)

            label = protocol.render_round(round_index, try_index)
            outcome = self.harness.evaluate_candidate(
                candidate_dir, round_label=label, try_index=try_index,
                phase="Phase2", metrics_override=inputs.metrics_override)
            state = protocol.step(state, protocol.EvaluationReady(metrics=outcome.artifact),
                                  self.policy)

            accepted_metrics = state.accepted.metrics
            stage = current_stage(accepted_metrics, self.policy)
            delta = compute_delta(accepted_metrics, outcome.artifact, self.policy)
            guards = check_guards(outcome.artifact, self.policy,
                                  self._guard_context(stage, candidate_dir, outcome))
            critic = self._consult_critic(state, delta, outcome.artifact)
            verdict = decide_verdict(delta, guards, stage, self.policy,
                                     investigation_summary=inputs.hypothesis_summary)

            record = RoundRecord(
                round_index=round_index, try_index=try_index, change=change, digest=digest,
                wants_retry_on_reject=inputs.wants_retry,
                investigation_text=inputs.investigation_text,
                metrics=outcome.artifact, delta=delta, guards=guards, verdict=verdict,
                critic=critic, started_at=started, ended_at=utc_now_iso())
            self.store.record_round(record)
            self.prior_records.append(record)

            state = protocol.step(state, protocol.VerdictReady(verdict=verdict), self.policy)
            if verdict.kind == VERDICT_ACCEPT:
                self._promote(candidate_dir)
            self._emit_line(round_index, try_index, verdict, self._primary_of(outcome.artifact))
            return state

        except (DriverError, CommandError, MetricsError) as exc:
            retries_left = state.tries_used_this_round < self.policy.max_retries_per_round
            if retries_left:
                verdict = Verdict(kind="Reject", reason=REJECT_ERROR,
                                  rationale=f"round failed: {exc}")
            else:
                verdict = Verdict(kind=VERDICT_TERMINATE, reason=TERMINATE_ERROR,
                                  rationale=f"round failed with no retries left: {exc}")
            record = RoundRecord(
                round_index=round_index, try_index=try_index, change="", digest="",
                wants_retry_on_reject=retries_left, investigation_text="",
                metrics=None, delta=None, guards=None, verdict=verdict,
                started_at=started, ended_at=utc_now_iso())
            self.store.record_round(record)
            self.prior_records.append(record)
            state = protocol.step(state, protocol.VerdictReady(verdict=verdict), self.policy)
            self._emit_line(round_index, try_index, verdict,
                            self._primary_of(state.accepted.metrics if state.accepted else None))
            return state

    # -- promotion and rendering ----------------------------------------------

    def _promote(self, candidate_dir: Path) -> None:
        """Make the candidate the accepted snapshot in the task artifact dir."""
        accepted_dir = self.store.artifact_dir(self.spec)
        if accepted_dir.resolve() == candidate_dir.resolve():
            return
        if accepted_dir.exists():
            shutil.rmtree(accepted_dir)
        shutil.copytree(candidate_dir, accepted_dir)

    def _primary_of(self, artifact: MetricsArtifact | None) -> float | None:
        if artifact is None:
            return None
        if self.policy.task_type == "code_improvement":
            value = artifact.timing(self.policy.metric)
            if value is None and artifact.tests is not None:
                value = artifact.tests.ratio
            return value
        return artifact.split_metric(self.policy.eval_split, self.policy.metric)

    def _emit_line(self, round_index: int, try_index: int, verdict: Verdict,
                   primary: float | None) -> None:
        parts = [f"round={protocol.render_round(round_index, try_index)}",
                 f"verdict={verdict.kind}"]
        if verdict.reason:
            parts.append(f"reason={verdict.reason_label}")
        if primary is not None:
            timing = self.policy.task_type == "code_improvement"
            parts.append(f"primary={tracking.format_metric_value(primary, timing=timing)}")
        self.verdict_lines.append(" ".join(parts))

    def _finalize(self, state: protocol.RunState) -> Path:
        termination = None
        if state.termination is not None:
            termination = (state.termination.reason,
                           protocol.render_round(state.termination.round_index))
        final_accepted = None
        if state.accepted is not None:
            final_accepted = (self._primary_of(state.accepted.metrics),
                              state.accepted.round_index)
        text = tracking.render_summary(
            self.spec, self.policy, self.store.baseline_metrics(),
            self.prior_records, termination, final_accepted)
        return self.store.write_summary(text)

    # -- top-level flows --------------------------------------------------------

    def _acquire_lock(self) -> RunLock:
        lock = RunLock(self.store.run_dir)
        try:
            lock.acquire()
        except OSError as exc:
            raise RunError(f"cannot create run workspace: {exc}") from exc
        return lock

    def run_to_completion(self) -> RunResult:
        lock = self._acquire_lock()
        try:
            state = self.init_run()
            state = self.run_phase1(state)
            state = self._loop(state)
            summary = self._finalize(state)
        finally:
            lock.release()
        return RunResult(state=state, verdict_lines=self.verdict_lines,
                         summary_path=summary, run_dir=self.store.run_dir)

    def _loop(self, state: protocol.RunState) -> protocol.RunState:
        while state.phase == protocol.PHASE_2:
            reason = protocol.should_terminate(state, self.policy)
            if reason is not None:
                round_index = protocol.termination_round_for(reason, state, self.policy)
                verdict = Verdict(kind=VERDICT_TERMINATE, reason=reason,
                                  rationale=f"terminated between rounds: {reason}")
                state = protocol.step(
                    state, protocol.VerdictReady(verdict=verdict), self.policy)
                state = dataclasses.replace(
                    state, termination=protocol.Termination(reason, round_index))
                self._emit_line(round_index, 0, verdict,
                                self._primary_of(state.accepted.metrics if state.accepted else None))
                break
            state = self.run_round(state)
        return state

    def resume(self) -> RunResult:
        """Continue a run from its committed artifacts to termination."""
        lock = self._acquire_lock()
        try:
            self.init_run()
            state = tracking.load_state(self.store, self.spec, self.policy)
            self._restore_prior_records()
            if state.phase == protocol.PHASE_INIT:
                state = self.run_phase1(state)
            else:
                self._restore_accepted(state)
            if state.phase == protocol.PHASE_2:
                state = self._loop(state)
            summary = self._finalize(state)
        finally:
            lock.release()
        return RunResult(state=state, verdict_lines=self.verdict_lines,
                         summary_path=summary, run_dir=self.store.run_dir)

    def _restore_prior_records(self) -> None:
        self.prior_records = [self.store.load_record(doc)
                              for doc in self.store.committed_rounds()]

    def _restore_accepted(self, state: protocol.RunState) -> None:
        if state.accepted is None:
            return
        accepted_round = state.accepted.round_index
        # Find the try that produced the accepted state (baseline has try 0).
        try_index = 0
        for record in self.prior_records:
            if record.round_index == accepted_round and record.verdict.kind in (
                    VERDICT_ACCEPT, VERDICT_BASELINE):
                try_index = record.try_index
        candidate_dir = self.store.candidate_dir(accepted_round, try_index)
        if candidate_dir.is_dir():
            self._promote(candidate_dir)


def run_task(spec: TaskSpec, workspace: str | Path, *, run_id: str | None = None,
             trace_override: str | Path | None = None,
             spec_text: str | None = None) -> RunResult:
    runner = Runner(spec, workspace, run_id=run_id, trace_override=trace_override,
                    spec_text=spec_text)
    return runner.run_to_completion()


def resume_run(run_dir: str | Path) -> RunResult:
    """Rebuild a Runner from an existing run directory and continue it."""
    run_dir = Path(run_dir)
    task_dir = run_dir.parent
    workspace = task_dir.parent
    slug = task_dir.name
    spec_path = workspace / f"{slug}_run.yaml"
    if not spec_path.is_file():
        raise EpochError(f"no task spec found at {spec_path}")
    from .taskspec import parse_spec
    spec_text = spec_path.read_text(encoding="utf-8")
    spec = parse_spec(spec_text)
    runner = Runner(spec, workspace, run_id=run_dir.name, spec_text=spec_text)
    return runner.resume()
