"""Role drivers: builtin heuristics, external subprocesses, replay traces.

External drivers speak a one-shot JSON protocol: the engine writes a single
request document to the driver's stdin and reads a single response document
from its stdout. Request keys: `protocol_version`, `role`, `round`, `try`,
`goal`, `accepted_summary`, `visible_paths`, `prior_reports`, `constraints`.
Response keys: `role`, `payload`. Timeouts, nonzero exits and schema-invalid
responses raise distinct errors.

Replay traces drive the whole pipeline deterministically: a trace is a JSON
file with an ordered `entries` array of
`{round, try, investigation, change, metrics, directive}` where `round` 0 is
the baseline and `directive` is one of retry | advance | no_hypothesis.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    DriverExitError,
    DriverProtocolError,
    DriverTimeoutError,
    ReplayTraceError,
    UnknownBuiltinError,
)
from .metrics import MetricsArtifact, artifact_from_dict, artifact_to_dict

PROTOCOL_VERSION = 1

ROLE_SEED_PLANNER = "seed_planner"
ROLE_BASELINE_EXECUTOR = "baseline_executor"
ROLE_INVESTIGATOR = "investigator"
ROLE_EXECUTOR = "executor"
ROLE_REVIEWER = "reviewer"

DIRECTIVE_RETRY = "retry"
DIRECTIVE_ADVANCE = "advance"
DIRECTIVE_NO_HYPOTHESIS = "no_hypothesis"


@dataclass(frozen=True)
class DriverRequest:
    role: str
    round_index: int
    try_index: int
    goal: str
    accepted_summary: dict
    visible_paths: tuple[str, ...] = ()
    prior_reports: tuple[str, ...] = ()
    constraints: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DriverResponse:
    role: str
    payload: dict

    # investigator payload accessors
    @property
    def has_hypothesis(self) -> bool:
        return bool(self.payload.get("has_hypothesis", True))

    @property
    def hypothesis(self) -> str:
        return str(self.payload.get("hypothesis", ""))

    @property
    def report(self) -> str:
        return str(self.payload.get("report", ""))

    @property
    def wants_retry_on_reject(self) -> bool:
        return bool(self.payload.get("wants_retry_on_reject", False))

    @property
    def change(self) -> str:
        return str(self.payload.get("change", ""))


def request_to_wire(request: DriverRequest) -> dict:
    return {
        "protocol_version": PROTOCOL_VERSION,
        "role": request.role,
        "round": request.round_index,
        "try": request.try_index,
        "goal": request.goal,
        "accepted_summary": request.accepted_summary,
        "visible_paths": list(request.visible_paths),
        "prior_reports": list(request.prior_reports),
        "constraints": request.constraints,
    }


def request_from_wire(doc: dict) -> DriverRequest:
    required = {"protocol_version", "role", "round", "try", "goal",
                "accepted_summary", "visible_paths", "constraints"}
    missing = required - set(doc)
    if missing:
        raise DriverProtocolError(f"request missing keys: {', '.join(sorted(missing))}")
    if doc["protocol_version"] != PROTOCOL_VERSION:
        raise DriverProtocolError(f"unsupported protocol_version {doc['protocol_version']!r}")
    return DriverRequest(
        role=str(doc["role"]),
        round_index=int(doc["round"]),
        try_index=int(doc["try"]),
        goal=str(doc["goal"]),
        accepted_summary=dict(doc["accepted_summary"]),
        visible_paths=tuple(str(p) for p in doc["visible_paths"]),
        prior_reports=tuple(str(p) for p in doc.get("prior_reports", [])),
        constraints=dict(doc["constraints"]),
    )


def response_to_wire(response: DriverResponse) -> dict:
    return {"role": response.role, "payload": response.payload}


def response_from_wire(doc: object, expected_role: str | None = None) -> DriverResponse:
    if not isinstance(doc, dict):
        raise DriverProtocolError("driver response must be a JSON object")
    if set(doc) != {"role", "payload"}:
        raise DriverProtocolError("driver response must have exactly the keys role, payload")
    role, payload = doc["role"], doc["payload"]
    if not isinstance(role, str) or not isinstance(payload, dict):
        raise DriverProtocolError("driver response fields have wrong types")
    if expected_role is not None and role != expected_role:
        raise DriverProtocolError(f"driver answered for role {role!r}, expected {expected_role!r}")
    if role == ROLE_INVESTIGATOR:
        if not payload.get("has_hypothesis", True) and payload.get("hypothesis"):
            raise DriverProtocolError("investigator with has_hypothesis=false must not carry a hypothesis")
    return DriverResponse(role=role, payload=payload)


def invoke_external(argv: tuple[str, ...] | list[str], request: DriverRequest,
                    timeout_s: float, env: dict[str, str] | None = None,
                    cwd: str | Path | None = None) -> DriverResponse:
    """Spawn an external driver: JSON request on stdin, JSON response on stdout."""
    import os

    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    payload = json.dumps(request_to_wire(request))
    try:
        proc = subprocess.run(
            list(argv), input=payload.encode("utf-8"), capture_output=True,
            timeout=timeout_s, env=full_env, cwd=str(cwd) if cwd else None)
    except subprocess.TimeoutExpired as exc:
        raise DriverTimeoutError(f"driver {argv[0]} exceeded {timeout_s}s") from exc
    except OSError as exc:
        raise DriverExitError(f"cannot spawn driver {argv[0]}: {exc}", exit_code=-1) from exc
    if proc.returncode != 0:
        raise DriverExitError(
            f"driver {argv[0]} exited {proc.returncode}",
            exit_code=proc.returncode,
            stderr=proc.stderr.decode("utf-8", errors="replace")[:2000])
    try:
        doc = json.loads(proc.stdout.decode("utf-8"))
    except ValueError as exc:
        raise DriverProtocolError(f"driver {argv[0]} wrote invalid JSON: {exc}") from exc
    return response_from_wire(doc, expected_role=request.role)


# --- builtin registry ----------------------------------------------------------

_BUILTIN_DRIVERS: dict[str, object] = {}
_BUILTIN_EVALUATORS: dict[str, object] = {}


def register_builtin(name: str, fn) -> None:
    _BUILTIN_DRIVERS[name] = fn


def register_evaluator(name: str, fn) -> None:
    _BUILTIN_EVALUATORS[name] = fn


def builtin_driver(name: str, request: DriverRequest, ctx) -> DriverResponse:
    """Dispatch to a registered deterministic heuristic."""
    try:
        fn = _BUILTIN_DRIVERS[name]
    except KeyError:
        raise UnknownBuiltinError(f"no builtin driver named {name!r}") from None
    return fn(request, ctx)


def builtin_evaluator(name: str):
    try:
        return _BUILTIN_EVALUATORS[name]
    except KeyError:
        raise UnknownBuiltinError(f"no builtin evaluator named {name!r}") from None


def builtin_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTIN_DRIVERS))


# --- access scope ---------------------------------------------------------------

def filter_visible_paths(scope: str, *, train_paths: tuple[str, ...] = (),
                         eval_paths: tuple[str, ...] = (),
                         test_paths: tuple[str, ...] = (),
                         other_paths: tuple[str, ...] = ()) -> tuple[str, ...]:
    """Paths a driver may observe under the given access scope.

    The exclusion is total: under train_only the visible set never
    intersects the eval-split paths even if a path was (mis)declared in
    both sets, and symmetrically for eval_only. full_visible_tests
    reveals test paths plus other task files; custom reveals everything
    declared.
    """
    if scope == "train_only":
        hidden = set(eval_paths)
        return tuple(p for p in tuple(train_paths) + tuple(other_paths) if p not in hidden)
    if scope == "eval_only":
        hidden = set(train_paths)
        return tuple(p for p in tuple(eval_paths) + tuple(other_paths) if p not in hidden)
    if scope == "full_visible_tests":
        return tuple(test_paths) + tuple(other_paths)
    return tuple(train_paths) + tuple(eval_paths) + tuple(test_paths) + tuple(other_paths)


# --- replay --------------------------------------------------------------------

@dataclass(frozen=True)
class ReplayEntry:
    round_index: int
    try_index: int
    investigation: str
    change: str
    metrics: MetricsArtifact | None
    directive: str | None = None


@dataclass(frozen=True)
class ReplayTrace:
    entries: tuple[ReplayEntry, ...]

    def lookup(self, round_index: int, try_index: int) -> ReplayEntry | None:
        for entry in self.entries:
            if entry.round_index == round_index and entry.try_index == try_index:
                return entry
        return None


def load_trace(path: str | Path) -> ReplayTrace:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ReplayTraceError(f"cannot read trace {path}: {exc}") from exc
    except ValueError as exc:
        raise ReplayTraceError(f"trace {path} is not valid JSON: {exc}") from exc
    return trace_from_dict(doc, source=str(path))


def trace_from_dict(doc: object, source: str = "<trace>") -> ReplayTrace:
    if not isinstance(doc, dict) or doc.get("schema_version") != 1 \
            or not isinstance(doc.get("entries"), list):
        raise ReplayTraceError(f"{source}: trace must be an object with schema_version 1 and entries")
    entries: list[ReplayEntry] = []
    last_key: tuple[int, int] | None = None
    for i, raw in enumerate(doc["entries"]):
        if not isinstance(raw, dict):
            raise ReplayTraceError(f"{source}: entries[{i}] must be an object")
        unknown = set(raw) - {"round", "try", "investigation", "change", "metrics", "directive"}
        if unknown:
            raise ReplayTraceError(f"{source}: entries[{i}] has unknown keys {sorted(unknown)}")
        try:
            round_index = int(raw["round"])
            try_index = int(raw.get("try", 0))
        except (KeyError, TypeError, ValueError):
            raise ReplayTraceError(f"{source}: entries[{i}] needs integer round/try") from None
        directive = raw.get("directive")
        if directive is not None and directive not in (DIRECTIVE_RETRY, DIRECTIVE_ADVANCE,
                                                       DIRECTIVE_NO_HYPOTHESIS):
            raise ReplayTraceError(f"{source}: entries[{i}] has unknown directive {directive!r}")
        metrics = None
        if "metrics" in raw and raw["metrics"] is not None:
            metrics = artifact_from_dict(raw["metrics"], source=f"{source}: entries[{i}].metrics")
        if metrics is None and directive != DIRECTIVE_NO_HYPOTHESIS:
            raise ReplayTraceError(
                f"{source}: entries[{i}] lacks metrics but is not a no_hypothesis entry")
        key = (round_index, try_index)
        if last_key is not None and key <= last_key:
            raise ReplayTraceError(f"{source}: entries must be strictly ordered by (round, try)")
        last_key = key
        entries.append(ReplayEntry(
            round_index=round_index,
            try_index=try_index,
            investigation=str(raw.get("investigation", "")),
            change=str(raw.get("change", "")),
            metrics=metrics,
            directive=directive,
        ))
    return ReplayTrace(entries=tuple(entries))


def trace_to_dict(trace: ReplayTrace) -> dict:
    entries = []
    for e in trace.entries:
        raw: dict = {"round": e.round_index, "try": e.try_index,
                     "investigation": e.investigation, "change": e.change}
        if e.metrics is not None:
            raw["metrics"] = artifact_to_dict(e.metrics)
        if e.directive is not None:
            raw["directive"] = e.directive
        entries.append(raw)
    return {"schema_version": 1, "entries": entries}


@dataclass(frozen=True)
class ReplayStep:
    investigation: str
    change: str
    metrics: MetricsArtifact | None
    directive: str | None
    cursor: int


def replay_next(trace: ReplayTrace, cursor: int) -> ReplayStep:
    """Next pre-recorded step; an exhausted cursor signals no_hypothesis."""
    if cursor >= len(trace.entries):
        return ReplayStep(investigation="", change="", metrics=None,
                          directive=DIRECTIVE_NO_HYPOTHESIS, cursor=cursor)
    entry = trace.entries[cursor]
    return ReplayStep(investigation=entry.investigation, change=entry.change,
                      metrics=entry.metrics, directive=entry.directive, cursor=cursor + 1)
