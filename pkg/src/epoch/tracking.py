"""Round-level artifact store: run directory layout, resume and summaries.

Workspace layout (one task per slug):

    <workspace>/
      <slug>_run.yaml                 effective task specification
      <slug>/
        src/ | rules/ | tests/        task artifacts (accepted state)
        data/                         materialized splits (demo tasks)
        <run_id>/
          baseline_metrics.json
          investigation_report_round_<N>[r<k>].md
          proposed_metrics_round_<N>[r<k>].json
          delta_round_<N>[r<k>].json
          run_summary.md
          timestamps.json             wall-clock sidecar (non-canonical)
          candidates/round_<N>[r<k>]/ candidate snapshots
          cache/<digest>.json         deterministic evaluation cache
          logs/*.log                  full command output copies
          events.log                  append-only log (local_logs backend)

A round commits atomically: the investigation report and proposed metrics
are renamed into place first and the delta file last, so a round exists
exactly when its delta file parses. Timestamps live in a sidecar file so
every canonical artifact is byte-reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import os
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import protocol
from .errors import IllegalEventError, ResumeError, StoreLockError, UnsupportedBackendError
from .metrics import MetricsArtifact, canonical_json_bytes, canonicalize, read_metrics
from .review import (
    DeltaRecord,
    GuardReport,
    VERDICT_ACCEPT,
    VERDICT_BASELINE,
    VERDICT_REJECT,
    Verdict,
    delta_from_dict,
    delta_to_dict,
    guards_from_dict,
    guards_to_dict,
    verdict_from_dict,
    verdict_to_dict,
)
from .taskspec import ResolvedPolicy, TaskSpec
from .protocol import (
    BaselineReady,
    CandidateReady,
    EvaluationReady,
    InvestigationReady,
    PHASE_DONE,
    RunState,
    VerdictReady,
    artifact_round_suffix,
    render_round,
)

BACKEND_STRUCTURED = "structured_files"
BACKEND_LOCAL_LOGS = "local_logs"

_ROUND_SUFFIX = r"(?P<round>\d+)(?:r(?P<retry>\d+))?"
DELTA_RE = re.compile(rf"^delta_round_{_ROUND_SUFFIX}\.json$")
INVESTIGATION_RE = re.compile(rf"^investigation_report_round_{_ROUND_SUFFIX}\.md$")
PROPOSED_RE = re.compile(rf"^proposed_metrics_round_{_ROUND_SUFFIX}\.json$")

# Every path in <run_id>/ must match one of these (relative, POSIX form).
ARTIFACT_PATTERNS = (
    re.compile(r"^baseline_metrics\.json$"),
    INVESTIGATION_RE,
    PROPOSED_RE,
    DELTA_RE,
    re.compile(r"^run_summary\.md$"),
    re.compile(r"^timestamps\.json$"),
    re.compile(r"^events\.log$"),
    re.compile(rf"^candidates/round_{_ROUND_SUFFIX}/.+$"),
    re.compile(r"^cache/[0-9a-f]{64}\.json$"),
    re.compile(r"^logs/[^/]+\.log$"),
)

_TERMINATION_RE = re.compile(r"^Termination: (?P<reason>[a-z_]+) \(round (?P<round>[0-9R]+)\)$",
                             re.MULTILINE)


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def parse_round_label(label: str) -> int:
    """Rendered round label back to the 0-based state index ('3R1' -> 2)."""
    head = label.split("R", 1)[0]
    return int(head) - 1


@dataclass(frozen=True)
class RoundRecord:
    """One try's full outcome, as committed to disk."""

    round_index: int
    try_index: int
    change: str
    digest: str
    wants_retry_on_reject: bool
    investigation_text: str
    metrics: MetricsArtifact | None
    delta: DeltaRecord | None
    guards: GuardReport | None
    verdict: Verdict
    critic: dict | None = None
    started_at: str = ""
    ended_at: str = ""


class RunLock:
    """Exclusive per-run-directory lock; stale locks from dead pids are stolen."""

    def __init__(self, run_dir: Path) -> None:
        self.path = Path(run_dir) / ".lock"
        self.acquired = False

    def acquire(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self._steal_if_stale():
                    continue
                raise StoreLockError(f"run directory is locked: {self.path}") from None
            with os.fdopen(fd, "w") as fh:
                fh.write(str(os.getpid()))
            self.acquired = True
            return
        raise StoreLockError(f"run directory is locked: {self.path}")

    def _steal_if_stale(self) -> bool:
        try:
            pid = int(self.path.read_text().strip())
        except (OSError, ValueError):
            pid = -1
        if pid > 0:
            try:
                os.kill(pid, 0)
                return False  # holder is alive
            except ProcessLookupError:
                pass
            except PermissionError:
                return False
        try:
            self.path.unlink()
        except OSError:
            pass
        return True

    def release(self) -> None:
        if self.acquired:
            try:
                self.path.unlink()
            except OSError:
                pass
            self.acquired = False

    def __enter__(self) -> "RunLock":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class Store:
    """Artifact store for one run of one task."""

    def __init__(self, workspace: str | Path, slug: str, run_id: str,
                 backend: str = BACKEND_STRUCTURED) -> None:
        if backend not in (BACKEND_STRUCTURED, BACKEND_LOCAL_LOGS):
            raise UnsupportedBackendError(
                f"tracking backend {backend!r} is not supported by this engine "
                f"(only {BACKEND_STRUCTURED} and {BACKEND_LOCAL_LOGS})")
        self.workspace = Path(workspace)
        self.slug = slug
        self.run_id = run_id
        self.backend = backend
        self.task_dir = self.workspace / slug
        self.run_dir = self.task_dir / run_id

    # -- layout -----------------------------------------------------------

    def create_skeleton(self, spec: TaskSpec, spec_text: str) -> None:
        self.task_dir.mkdir(parents=True, exist_ok=True)
        artifact_sub = "rules" if spec.task_type == "rule_based" else "src"
        (self.task_dir / artifact_sub).mkdir(exist_ok=True)
        if spec.task_type == "code_improvement":
            (self.task_dir / "tests").mkdir(exist_ok=True)
        (self.task_dir / "data").mkdir(exist_ok=True)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        spec_copy = self.workspace / f"{self.slug}_run.yaml"
        _atomic_write(spec_copy, spec_text.encode("utf-8"))

    def artifact_dir(self, spec: TaskSpec) -> Path:
        return self.task_dir / ("rules" if spec.task_type == "rule_based" else "src")

    def candidate_dir(self, round_index: int, try_index: int) -> Path:
        return self.run_dir / "candidates" / f"round_{artifact_round_suffix(round_index, try_index)}"

    def _event(self, kind: str, detail: dict) -> None:
        if self.backend != BACKEND_LOCAL_LOGS:
            return
        line = json.dumps({"ts": utc_now_iso(), "event": kind, **detail}, sort_keys=True)
        with open(self.run_dir / "events.log", "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def _stamp(self, filename: str, started_at: str, ended_at: str) -> None:
        path = self.run_dir / "timestamps.json"
        stamps: dict = {}
        if path.is_file():
            try:
                stamps = json.loads(path.read_text(encoding="utf-8"))
            except ValueError:
                stamps = {}
        stamps[filename] = {"start": started_at, "end": ended_at}
        _atomic_write(path, json.dumps(stamps, sort_keys=True, indent=1).encode("utf-8"))

    # -- writes -----------------------------------------------------------

    def record_baseline(self, metrics: MetricsArtifact, *, started_at: str = "",
                        ended_at: str = "") -> Path:
        path = self.run_dir / "baseline_metrics.json"
        _atomic_write(path, canonicalize(metrics))
        self._stamp(path.name, started_at or utc_now_iso(), ended_at or utc_now_iso())
        self._event("baseline_recorded", {"file": path.name})
        return path

    def record_round(self, record: RoundRecord) -> Path:
        """Commit one round try; the delta file rename is the commit point."""
        suffix = artifact_round_suffix(record.round_index, record.try_index)
        inv_name = f"investigation_report_round_{suffix}.md"
        metrics_name = f"proposed_metrics_round_{suffix}.json"
        delta_name = f"delta_round_{suffix}.json"

        record_doc: dict = {
            "round": record.round_index,
            "try": record.try_index,
            "change": record.change,
            "digest": record.digest,
            "wants_retry_on_reject": record.wants_retry_on_reject,
            "investigation_file": None,
            "metrics_file": None,
        }
        if record.critic is not None:
            record_doc["critic"] = record.critic

        if record.investigation_text:
            _atomic_write(self.run_dir / inv_name, record.investigation_text.encode("utf-8"))
            record_doc["investigation_file"] = inv_name
        if record.metrics is not None:
            _atomic_write(self.run_dir / metrics_name, canonicalize(record.metrics))
            record_doc["metrics_file"] = metrics_name

        delta_doc = {
            "schema_version": 1,
            "record": record_doc,
            "delta": delta_to_dict(record.delta) if record.delta else None,
            "guards": guards_to_dict(record.guards) if record.guards else None,
            "verdict": verdict_to_dict(record.verdict),
        }
        delta_path = self.run_dir / delta_name
        _atomic_write(delta_path, canonical_json_bytes(delta_doc))
        self._stamp(delta_name, record.started_at or utc_now_iso(),
                    record.ended_at or utc_now_iso())
        self._event("round_recorded", {"file": delta_name,
                                       "verdict": record.verdict.kind,
                                       "reason": record.verdict.reason})
        return delta_path

    def write_summary(self, text: str) -> Path:
        path = self.run_dir / "run_summary.md"
        _atomic_write(path, text.encode("utf-8"))
        self._event("summary_written", {"file": path.name})
        return path

    # -- reads ------------------------------------------------------------

    def baseline_metrics(self) -> MetricsArtifact | None:
        path = self.run_dir / "baseline_metrics.json"
        if not path.is_file():
            return None
        try:
            return read_metrics(path)
        except Exception as exc:
            raise ResumeError(f"cannot load {path.name}: {exc}",
                              offending_file=path.name) from exc

    def committed_rounds(self) -> list[dict]:
        """All committed delta documents, ordered by (round, try)."""
        found: list[tuple[int, int, Path]] = []
        if not self.run_dir.is_dir():
            return []
        for path in self.run_dir.iterdir():
            m = DELTA_RE.match(path.name)
            if m:
                rendered = int(m.group("round"))
                retry = int(m.group("retry") or 0)
                found.append((rendered - 1, retry, path))
        found.sort(key=lambda t: (t[0], t[1]))
        docs = []
        for round_index, try_index, path in found:
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
            except ValueError as exc:
                raise ResumeError(f"corrupt round artifact {path.name}: {exc}",
                                  offending_file=path.name) from exc
            if not isinstance(doc, dict) or "record" not in doc or "verdict" not in doc:
                raise ResumeError(f"corrupt round artifact {path.name}: missing sections",
                                  offending_file=path.name)
            if doc["record"].get("round") != round_index or doc["record"].get("try") != try_index:
                raise ResumeError(
                    f"corrupt round artifact {path.name}: name does not match record indices",
                    offending_file=path.name)
            docs.append(doc)
        return docs

    def load_record(self, doc: dict) -> RoundRecord:
        rec = doc["record"]
        metrics = None
        if rec.get("metrics_file"):
            metrics_path = self.run_dir / rec["metrics_file"]
            try:
                metrics = read_metrics(metrics_path)
            except Exception as exc:
                raise ResumeError(f"cannot load {rec['metrics_file']}: {exc}",
                                  offending_file=rec["metrics_file"]) from exc
        investigation = ""
        if rec.get("investigation_file"):
            inv_path = self.run_dir / rec["investigation_file"]
            if not inv_path.is_file():
                raise ResumeError(f"missing {rec['investigation_file']}",
                                  offending_file=rec["investigation_file"])
            investigation = inv_path.read_text(encoding="utf-8")
        try:
            return RoundRecord(
                round_index=int(rec["round"]),
                try_index=int(rec["try"]),
                change=str(rec.get("change", "")),
                digest=str(rec.get("digest", "")),
                wants_retry_on_reject=bool(rec.get("wants_retry_on_reject", False)),
                investigation_text=investigation,
                metrics=metrics,
                delta=delta_from_dict(doc["delta"]) if doc.get("delta") else None,
                guards=guards_from_dict(doc["guards"]) if doc.get("guards") else None,
                verdict=verdict_from_dict(doc["verdict"]),
                critic=rec.get("critic"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ResumeError(f"corrupt round record for round {rec.get('round')}: {exc}") from exc

    def summary_termination(self) -> tuple[str, str] | None:
        path = self.run_dir / "run_summary.md"
        if not path.is_file():
            return None
        m = _TERMINATION_RE.search(path.read_text(encoding="utf-8"))
        if not m:
            raise ResumeError("run_summary.md lacks a termination line",
                              offending_file="run_summary.md")
        return m.group("reason"), m.group("round")


def open_store(workspace: str | Path, slug: str, run_id: str, backend: str) -> Store:
    """Open (creating directories lazily) the store for one run."""
    return Store(workspace, slug, run_id, backend)


def load_state(store: Store, spec: TaskSpec, policy: ResolvedPolicy) -> RunState:
    """Rebuild the protocol state purely from committed artifacts.

    The recorded verdicts are replayed through the state machine, so the
    reconstructed counters agree with what the live run computed. A
    baseline is complete only when both baseline_metrics.json and its
    round record exist; otherwise Phase 1 reruns idempotently.
    """
    state = protocol.init_state(store.run_id)
    baseline = store.baseline_metrics()
    docs = store.committed_rounds()
    baseline_doc = docs[0] if docs and docs[0]["record"]["round"] == 0 else None

    if baseline is None or baseline_doc is None:
        if any(d["record"]["round"] != 0 for d in docs):
            raise ResumeError("round artifacts exist without a committed baseline",
                              offending_file="baseline_metrics.json")
        return state

    def _step(current: RunState, event) -> RunState:
        try:
            return protocol.step(current, event, policy)
        except IllegalEventError as exc:
            raise ResumeError(f"recorded artifacts do not replay cleanly: {exc}") from exc

    state = _step(state, BaselineReady(
        metrics=baseline,
        digest=str(baseline_doc["record"].get("digest", "")),
        change=str(baseline_doc["record"].get("change", ""))))

    for doc in docs[1:]:
        record = store.load_record(doc)
        if record.round_index != state.round_index or record.try_index != state.tries_used_this_round:
            raise ResumeError(
                f"round artifacts are inconsistent: found round {record.round_index} try "
                f"{record.try_index} while the state machine expected round "
                f"{state.round_index} try {state.tries_used_this_round}")
        if record.metrics is not None and record.verdict.kind in (VERDICT_ACCEPT, VERDICT_REJECT):
            state = _step(state, InvestigationReady(
                has_hypothesis=True,
                summary=record.change,
                wants_retry_on_reject=record.wants_retry_on_reject))
            state = _step(state, CandidateReady(change=record.change, digest=record.digest))
            state = _step(state, EvaluationReady(metrics=record.metrics))
        state = _step(state, VerdictReady(verdict=record.verdict))

    if state.phase != PHASE_DONE:
        summary = store.summary_termination()
        if summary is not None:
            reason, round_label = summary
            state = _step(state, VerdictReady(verdict=Verdict(
                kind="Terminate", reason=reason,
                rationale="termination recorded in run summary")))
            # preserve the originally recorded termination round so a
            # regenerated summary stays byte-identical
            state = dataclasses.replace(state, termination=protocol.Termination(
                reason, parse_round_label(round_label)))
    return state


# --- summary rendering ---------------------------------------------------------

def format_metric_value(value: float | None, *, timing: bool = False) -> str:
    if value is None:
        return "-"
    if timing:
        return f"{value:g}"
    return f"{value:.4f}"


def _verdict_cell(verdict: Verdict) -> str:
    label = VERDICT_BASELINE if verdict.kind == VERDICT_BASELINE else verdict.kind
    if verdict.reason:
        label += f" ({verdict.reason_label})"
    return label


def render_summary(spec: TaskSpec, policy: ResolvedPolicy,
                   baseline: MetricsArtifact | None,
                   records: list[RoundRecord],
                   termination: tuple[str, str] | None,
                   final_accepted: tuple[float | None, int] | None) -> str:
    """Deterministic per-round markdown table plus the termination line."""
    code_task = policy.task_type == "code_improvement"
    if code_task:
        header = ["Round", "Key change", "Tests", policy.metric, "Verdict"]
    else:
        header = ["Round", "Key change",
                  f"Train {policy.metric}", f"Eval {policy.metric}", "Verdict"]

    rows: list[list[str]] = []

    def metric_cells(artifact: MetricsArtifact | None) -> list[str]:
        if artifact is None:
            return ["-", "-"]
        if code_task:
            tests = f"{artifact.tests.passed}/{artifact.tests.total}" if artifact.tests else "-"
            return [tests, format_metric_value(artifact.timing(policy.metric), timing=True)]
        return [
            format_metric_value(artifact.split_metric(policy.train_split, policy.metric)),
            format_metric_value(artifact.split_metric(policy.eval_split, policy.metric)),
        ]

    if baseline is not None:
        baseline_change = next((r.change for r in records if r.round_index == 0), "") \
            or "Baseline"
        rows.append(["1", baseline_change, *metric_cells(baseline), VERDICT_BASELINE])

    for record in records:
        if record.round_index == 0:
            continue
        label = render_round(record.round_index, record.try_index)
        rows.append([label, record.change or "-", *metric_cells(record.metrics),
                     _verdict_cell(record.verdict)])

    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
              for i in range(len(header))]

    def fmt_row(cells: list[str]) -> str:
        return "| " + " | ".join(c.ljust(widths[i]) for i, c in enumerate(cells)) + " |"

    lines = [f"# Run summary: {spec.project_name} ({spec.project_slug})", ""]
    lines.append(fmt_row(list(header)))
    lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    for row in rows:
        lines.append(fmt_row(row))
    lines.append("")
    if termination is not None:
        reason, round_label = termination
        lines.append(f"Termination: {reason} (round {round_label})")
    if final_accepted is not None:
        value, round_index = final_accepted
        timing = code_task
        lines.append(
            f"Final accepted {policy.metric}: {format_metric_value(value, timing=timing)} "
            f"(round {render_round(round_index)})")
    lines.append("")
    return "\n".join(lines)


def check_artifact_layout(run_dir: str | Path) -> list[str]:
    """Paths under the run directory that match no documented pattern."""
    run_dir = Path(run_dir)
    offenders = []
    for path in sorted(run_dir.rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(run_dir).as_posix()
        if rel == ".lock" or rel.startswith("tmp/"):
            continue
        if not any(p.match(rel) for p in ARTIFACT_PATTERNS):
            offenders.append(rel)
    return offenders
