"""Task specification: parsing, validation, defaulting and policy resolution.

The on-disk form is a YAML document with the sections `project`, `run`,
`phases`, `roles`, `data`, `model`, `investigation`, `evaluation`,
`tracking`, `git` plus an engine-specific `drivers` section binding each
role to a builtin heuristic, an external command, or a replay trace.

Parsing is strict: unknown keys and out-of-domain values are hard errors
reported with a dotted field path (`evaluation.min_delta`). Cross-field
rules are checked by `validate_spec`, which returns violations as data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import yaml

from .errors import SpecParseError, SpecSchemaError
from .metrics import is_bounded_metric

TASK_TYPES = ("prompt_tune", "finetune", "rule_based", "code_improvement", "custom")
REVIEWER_MODES = ("metric_driven", "llm_critic")
MODEL_TYPES = ("llm", "ml_model", "rule_system", "code")
ACCESS_SCOPES = ("train_only", "eval_only", "full_visible_tests", "custom")
METRIC_DIRECTIONS = ("maximize", "minimize")
DELTA_MODES = ("absolute", "relative")
TRACKING_BACKENDS = ("local_logs", "structured_files", "github_prs", "custom")
DRIVER_ROLES = ("seed_planner", "baseline_executor", "investigator", "executor", "reviewer", "evaluator")

GUARD_OVERFIT_GAP = "overfit_gap"
GUARD_LEAKAGE = "leakage"
GUARD_STAGED_CORRECTNESS = "staged_correctness"
GUARD_DETERMINISM_CACHE = "determinism_cache"

DEFAULT_MAX_GAP = 0.15
DEFAULT_DRIVER_TIMEOUT_S = 300.0


class _Unset:
    """Marker distinguishing an absent field from an explicit null."""

    _instance: "_Unset | None" = None

    def __new__(cls) -> "_Unset":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return "UNSET"


UNSET = _Unset()


@dataclass(frozen=True)
class DriverBinding:
    """One of builtin(name) | command(argv) | replay(trace path)."""

    kind: str  # "builtin" | "command" | "replay"
    builtin: str | None = None
    command: tuple[str, ...] | None = None
    trace: str | None = None
    timeout_s: float = DEFAULT_DRIVER_TIMEOUT_S


@dataclass(frozen=True)
class PhasesConfig:
    baseline_construction: bool = True
    multi_round_optimization: bool = True


@dataclass(frozen=True)
class ReviewerConfig:
    enabled: bool = True
    mode: str = "metric_driven"


@dataclass(frozen=True)
class RolesConfig:
    seed_planner: bool = True
    baseline_executor: bool = True
    orchestrator: bool = True
    investigator: bool = True
    executor: bool = True
    reviewer: ReviewerConfig = field(default_factory=ReviewerConfig)


@dataclass(frozen=True)
class DataConfig:
    source: str = "local"
    train_split: str | None = None
    eval_split: str | None = None


@dataclass(frozen=True)
class ModelConfig:
    type: str = "ml_model"
    name: str | None = None


@dataclass(frozen=True)
class InvestigationConfig:
    samples: int = 0
    access_scope: str = "train_only"


@dataclass(frozen=True)
class EvaluationConfig:
    primary_metric: str = "accuracy"
    metric_direction: str | None = None   # None -> resolved by task type
    min_delta: float = 0.0
    delta_mode: str | None = None         # None -> resolved by task type
    deterministic: bool = False
    train_cmd: str | None = None
    eval_cmd: str | None = None
    acceptance_rule: str = ""
    max_train_eval_gap: float | None = None
    # UNSET -> default (1.0 for bounded metrics); None -> explicitly disabled.
    saturation_bound: float | None | _Unset = UNSET


@dataclass(frozen=True)
class TrackingConfig:
    backend: str = "structured_files"


@dataclass(frozen=True)
class GitConfig:
    enabled: bool = False
    target_branch: str | None = None


@dataclass(frozen=True)
class TaskSpec:
    project_name: str
    project_slug: str
    goal: str = ""
    task_type: str = "custom"
    max_rounds: int = 5
    max_retries_per_round: int = 1
    phases: PhasesConfig = field(default_factory=PhasesConfig)
    roles: RolesConfig = field(default_factory=RolesConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    investigation: InvestigationConfig = field(default_factory=InvestigationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    git: GitConfig = field(default_factory=GitConfig)
    drivers: dict[str, DriverBinding] = field(default_factory=dict)

    def __post_init__(self) -> None:
        # dicts are not hashable; normalize to a plain dict and keep the
        # dataclass frozen for everything else.
        object.__setattr__(self, "drivers", dict(self.drivers))


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class GuardSpec:
    name: str
    max_gap: float | None = None  # overfit_gap only


@dataclass(frozen=True)
class ResolvedPolicy:
    """Concrete acceptance policy derived from a valid TaskSpec."""

    metric: str
    direction: str
    delta_mode: str
    min_delta: float
    guards: tuple[GuardSpec, ...]
    max_rounds: int
    max_retries_per_round: int
    saturation_bound: float | None
    access_scope: str
    task_type: str
    deterministic: bool
    multi_round: bool
    eval_split: str = "eval"
    train_split: str = "train"

    def guard(self, name: str) -> GuardSpec | None:
        for g in self.guards:
            if g.name == name:
                return g
        return None


# --- schema walking ----------------------------------------------------------

class _Section:
    """Typed accessor over one mapping of the YAML document."""

    def __init__(self, data: Any, path: str) -> None:
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise SpecSchemaError(path or "<root>", "expected a mapping")
        self.data = data
        self.path = path

    def _p(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def reject_unknown(self, allowed: tuple[str, ...]) -> None:
        for key in self.data:
            if key not in allowed:
                raise SpecSchemaError(self._p(str(key)), "unknown key")

    def has(self, key: str) -> bool:
        return key in self.data

    def section(self, key: str) -> "_Section":
        return _Section(self.data.get(key), self._p(key))

    def string(self, key: str, default: str | None = None, *, required: bool = False) -> str | None:
        if key not in self.data or self.data[key] is None:
            if required:
                raise SpecSchemaError(self._p(key), "required field is missing")
            return default
        value = self.data[key]
        if not isinstance(value, str):
            raise SpecSchemaError(self._p(key), f"expected a string, got {type(value).__name__}")
        return value

    def boolean(self, key: str, default: bool) -> bool:
        if key not in self.data or self.data[key] is None:
            return default
        value = self.data[key]
        if not isinstance(value, bool):
            raise SpecSchemaError(self._p(key), f"expected a boolean, got {type(value).__name__}")
        return value

    def integer(self, key: str, default: int, *, minimum: int | None = None) -> int:
        if key not in self.data or self.data[key] is None:
            value = default
        else:
            value = self.data[key]
            if isinstance(value, bool) or not isinstance(value, int):
                raise SpecSchemaError(self._p(key), f"expected an integer, got {type(value).__name__}")
        if minimum is not None and value < minimum:
            raise SpecSchemaError(self._p(key), f"must be >= {minimum}, got {value}")
        return value

    def number(self, key: str, default: float | None = None, *, minimum: float | None = None) -> float | None:
        if key not in self.data or self.data[key] is None:
            return default
        value = self.data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SpecSchemaError(self._p(key), f"expected a number, got {type(value).__name__}")
        value = float(value)
        if minimum is not None and value < minimum:
            raise SpecSchemaError(self._p(key), f"must be >= {minimum}, got {value}")
        return value

    def enum(self, key: str, allowed: tuple[str, ...], default: str | None = None) -> str | None:
        value = self.string(key, default)
        if value is not None and value not in allowed:
            raise SpecSchemaError(self._p(key), f"must be one of {', '.join(allowed)}; got {value!r}")
        return value


def _parse_driver_binding(raw: Any, path: str) -> DriverBinding:
    sec = _Section(raw, path)
    sec.reject_unknown(("builtin", "command", "replay", "timeout"))
    kinds = [k for k in ("builtin", "command", "replay") if sec.has(k)]
    if len(kinds) != 1:
        raise SpecSchemaError(path, "exactly one of builtin|command|replay is required")
    timeout = sec.number("timeout", DEFAULT_DRIVER_TIMEOUT_S, minimum=0.0)
    kind = kinds[0]
    if kind == "builtin":
        name = sec.string("builtin", required=True)
        return DriverBinding(kind="builtin", builtin=name, timeout_s=timeout)
    if kind == "replay":
        trace = sec.string("replay", required=True)
        return DriverBinding(kind="replay", trace=trace, timeout_s=timeout)
    argv = sec.data["command"]
    if not isinstance(argv, list) or not argv or not all(isinstance(a, str) for a in argv):
        raise SpecSchemaError(f"{path}.command", "expected a non-empty list of strings")
    return DriverBinding(kind="command", command=tuple(argv), timeout_s=timeout)


def _default_model_type(task_type: str) -> str:
    return {
        "prompt_tune": "llm",
        "finetune": "ml_model",
        "rule_based": "rule_system",
        "code_improvement": "code",
    }.get(task_type, "ml_model")


def _default_access_scope(task_type: str) -> str:
    return "full_visible_tests" if task_type == "code_improvement" else "train_only"


def parse_spec(text: str) -> TaskSpec:
    """Parse a YAML task specification into a fully defaulted TaskSpec."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecParseError(f"malformed spec document: {exc}") from exc
    if doc is None:
        raise SpecParseError("empty spec document")

    root = _Section(doc, "")
    root.reject_unknown(("project", "run", "phases", "roles", "data", "model",
                         "investigation", "evaluation", "tracking", "git", "drivers"))

    project = root.section("project")
    project.reject_unknown(("name", "slug"))
    name = project.string("name", required=True)
    slug = project.string("slug", required=True)
    if not slug or not all(c.isalnum() or c in "_-" for c in slug) or slug[0] in "-":
        raise SpecSchemaError("project.slug", f"not a valid slug: {slug!r}")

    run = root.section("run")
    run.reject_unknown(("goal", "task_type", "max_rounds", "max_retries_per_round"))
    task_type = run.enum("task_type", TASK_TYPES, default=None)
    if task_type is None:
        raise SpecSchemaError("run.task_type", "required field is missing")
    goal = run.string("goal", "")
    max_rounds = run.integer("max_rounds", 5, minimum=1)
    max_retries = run.integer("max_retries_per_round", 1, minimum=0)

    phases_sec = root.section("phases")
    phases_sec.reject_unknown(("baseline_construction", "multi_round_optimization"))
    phases = PhasesConfig(
        baseline_construction=phases_sec.boolean("baseline_construction", True),
        multi_round_optimization=phases_sec.boolean("multi_round_optimization", True),
    )

    roles_sec = root.section("roles")
    roles_sec.reject_unknown(("seed_planner", "baseline_executor", "orchestrator",
                              "investigator", "executor", "reviewer"))
    reviewer_sec = roles_sec.section("reviewer")
    reviewer_sec.reject_unknown(("enabled", "mode"))
    reviewer = ReviewerConfig(
        enabled=reviewer_sec.boolean("enabled", True),
        mode=reviewer_sec.enum("mode", REVIEWER_MODES, "metric_driven"),
    )
    roles = RolesConfig(
        seed_planner=roles_sec.boolean("seed_planner", True),
        baseline_executor=roles_sec.boolean("baseline_executor", True),
        orchestrator=roles_sec.boolean("orchestrator", True),
        investigator=roles_sec.boolean("investigator", True),
        executor=roles_sec.boolean("executor", True),
        reviewer=reviewer,
    )

    data_sec = root.section("data")
    data_sec.reject_unknown(("source", "train_split", "eval_split"))
    data = DataConfig(
        source=data_sec.string("source", "local"),
        train_split=data_sec.string("train_split", None),
        eval_split=data_sec.string("eval_split", None),
    )

    model_sec = root.section("model")
    model_sec.reject_unknown(("type", "name"))
    model = ModelConfig(
        type=model_sec.enum("type", MODEL_TYPES, _default_model_type(task_type)),
        name=model_sec.string("name", None),
    )

    inv_sec = root.section("investigation")
    inv_sec.reject_unknown(("samples", "access_scope"))
    investigation = InvestigationConfig(
        samples=inv_sec.integer("samples", 0, minimum=0),
        access_scope=inv_sec.enum("access_scope", ACCESS_SCOPES, _default_access_scope(task_type)),
    )

    eval_sec = root.section("evaluation")
    eval_sec.reject_unknown(("primary_metric", "metric_direction", "min_delta", "delta_mode",
                             "deterministic", "train_cmd", "eval_cmd", "acceptance_rule",
                             "max_train_eval_gap", "saturation_bound"))
    saturation: float | None | _Unset
    if not eval_sec.has("saturation_bound"):
        saturation = UNSET
    else:
        saturation = eval_sec.number("saturation_bound", None, minimum=0.0)
    evaluation = EvaluationConfig(
        primary_metric=eval_sec.string("primary_metric", required=True),
        metric_direction=eval_sec.enum("metric_direction", METRIC_DIRECTIONS, None),
        min_delta=eval_sec.number("min_delta", 0.0, minimum=0.0),
        delta_mode=eval_sec.enum("delta_mode", DELTA_MODES, None),
        deterministic=eval_sec.boolean("deterministic", False),
        train_cmd=eval_sec.string("train_cmd", None),
        eval_cmd=eval_sec.string("eval_cmd", None),
        acceptance_rule=eval_sec.string("acceptance_rule", ""),
        max_train_eval_gap=eval_sec.number("max_train_eval_gap", None, minimum=0.0),
        saturation_bound=saturation,
    )

    tracking_sec = root.section("tracking")
    tracking_sec.reject_unknown(("backend",))
    tracking = TrackingConfig(backend=tracking_sec.enum("backend", TRACKING_BACKENDS, "structured_files"))

    git_sec = root.section("git")
    git_sec.reject_unknown(("enabled", "target_branch"))
    git = GitConfig(
        enabled=git_sec.boolean("enabled", False),
        target_branch=git_sec.string("target_branch", None),
    )

    drivers_sec = root.section("drivers")
    drivers_sec.reject_unknown(DRIVER_ROLES)
    drivers = {
        role: _parse_driver_binding(drivers_sec.data[role], f"drivers.{role}")
        for role in DRIVER_ROLES
        if drivers_sec.has(role) and drivers_sec.data[role] is not None
    }

    return TaskSpec(
        project_name=name,
        project_slug=slug,
        goal=goal,
        task_type=task_type,
        max_rounds=max_rounds,
        max_retries_per_round=max_retries,
        phases=phases,
        roles=roles,
        data=data,
        model=model,
        investigation=investigation,
        evaluation=evaluation,
        tracking=tracking,
        git=git,
        drivers=drivers,
    )


def serialize_spec(spec: TaskSpec) -> str:
    """Render a TaskSpec back to YAML; parse_spec(serialize_spec(s)) == s."""
    ev = spec.evaluation
    evaluation: dict[str, Any] = {
        "primary_metric": ev.primary_metric,
        "min_delta": ev.min_delta,
        "deterministic": ev.deterministic,
        "train_cmd": ev.train_cmd,
        "eval_cmd": ev.eval_cmd,
        "acceptance_rule": ev.acceptance_rule,
    }
    if ev.metric_direction is not None:
        evaluation["metric_direction"] = ev.metric_direction
    if ev.delta_mode is not None:
        evaluation["delta_mode"] = ev.delta_mode
    if ev.max_train_eval_gap is not None:
        evaluation["max_train_eval_gap"] = ev.max_train_eval_gap
    if not isinstance(ev.saturation_bound, _Unset):
        evaluation["saturation_bound"] = ev.saturation_bound

    drivers: dict[str, Any] = {}
    for role, binding in spec.drivers.items():
        entry: dict[str, Any] = {}
        if binding.kind == "builtin":
            entry["builtin"] = binding.builtin
        elif binding.kind == "command":
            entry["command"] = list(binding.command or ())
        else:
            entry["replay"] = binding.trace
        if binding.timeout_s != DEFAULT_DRIVER_TIMEOUT_S:
            entry["timeout"] = binding.timeout_s
        drivers[role] = entry

    doc: dict[str, Any] = {
        "project": {"name": spec.project_name, "slug": spec.project_slug},
        "run": {
            "goal": spec.goal,
            "task_type": spec.task_type,
            "max_rounds": spec.max_rounds,
            "max_retries_per_round": spec.max_retries_per_round,
        },
        "phases": {
            "baseline_construction": spec.phases.baseline_construction,
            "multi_round_optimization": spec.phases.multi_round_optimization,
        },
        "roles": {
            "seed_planner": spec.roles.seed_planner,
            "baseline_executor": spec.roles.baseline_executor,
            "orchestrator": spec.roles.orchestrator,
            "investigator": spec.roles.investigator,
            "executor": spec.roles.executor,
            "reviewer": {"enabled": spec.roles.reviewer.enabled, "mode": spec.roles.reviewer.mode},
        },
        "data": {
            "source": spec.data.source,
            "train_split": spec.data.train_split,
            "eval_split": spec.data.eval_split,
        },
        "model": {"type": spec.model.type, "name": spec.model.name},
        "investigation": {
            "samples": spec.investigation.samples,
            "access_scope": spec.investigation.access_scope,
        },
        "evaluation": evaluation,
        "tracking": {"backend": spec.tracking.backend},
        "git": {"enabled": spec.git.enabled, "target_branch": spec.git.target_branch},
    }
    if drivers:
        doc["drivers"] = drivers
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)


def validate_spec(spec: TaskSpec) -> list[Violation]:
    """Check every cross-field invariant; violations are data, not errors."""
    out: list[Violation] = []

    if spec.max_rounds < 1:
        out.append(Violation("run.max_rounds", "must be >= 1"))
    if spec.max_retries_per_round < 0:
        out.append(Violation("run.max_retries_per_round", "must be >= 0"))
    if spec.evaluation.min_delta < 0:
        out.append(Violation("evaluation.min_delta", "must be >= 0"))
    if spec.task_type not in TASK_TYPES:
        out.append(Violation("run.task_type", f"unknown task type {spec.task_type!r}"))

    if spec.investigation.access_scope == "train_only" and spec.data.train_split is None:
        out.append(Violation("investigation.access_scope",
                             "train_only requires data.train_split to be set"))

    if spec.roles.reviewer.mode == "llm_critic" and "reviewer" not in spec.drivers:
        out.append(Violation("roles.reviewer.mode",
                             "llm_critic requires a drivers.reviewer binding"))

    def _evaluator_available() -> bool:
        if spec.evaluation.eval_cmd:
            return True
        if "evaluator" in spec.drivers:
            return True
        return any(b.kind == "replay" for b in spec.drivers.values())

    if not spec.phases.baseline_construction and not _evaluator_available():
        out.append(Violation("phases.baseline_construction",
                             "disabled baseline construction requires evaluation.eval_cmd "
                             "or a bound evaluator to validate the existing baseline"))

    if spec.evaluation.eval_cmd is None:
        external = [role for role, b in spec.drivers.items() if b.kind == "command"]
        if external:
            out.append(Violation("evaluation.eval_cmd",
                                 f"required when non-builtin drivers are bound ({', '.join(sorted(external))})"))
        elif not _evaluator_available():
            out.append(Violation("evaluation.eval_cmd",
                                 "required unless a builtin or replay evaluator is bound"))

    if spec.phases.multi_round_optimization:
        for role_name, enabled in (("investigator", spec.roles.investigator),
                                   ("executor", spec.roles.executor),
                                   ("reviewer", spec.roles.reviewer.enabled)):
            if not enabled:
                out.append(Violation(f"roles.{role_name}",
                                     "required while phases.multi_round_optimization is enabled"))

    if spec.phases.baseline_construction and not spec.roles.baseline_executor:
        out.append(Violation("roles.baseline_executor",
                             "required while phases.baseline_construction is enabled"))

    return out


def resolve_policy(spec: TaskSpec) -> ResolvedPolicy:
    """Turn a valid TaskSpec into the concrete acceptance policy.

    Task-type defaults: finetune adds the overfit-gap guard; prompt_tune adds
    the leakage guard; code_improvement adds staged correctness and flips the
    delta semantics to relative/minimize. Explicit spec values always win.
    """
    ev = spec.evaluation
    tt = spec.task_type

    if tt == "code_improvement":
        direction = ev.metric_direction or "minimize"
        delta_mode = ev.delta_mode or "relative"
    else:
        direction = ev.metric_direction or "maximize"
        delta_mode = ev.delta_mode or "absolute"

    guards: list[GuardSpec] = []
    max_gap = ev.max_train_eval_gap
    if tt == "finetune" or max_gap is not None:
        guards.append(GuardSpec(GUARD_OVERFIT_GAP, max_gap=max_gap if max_gap is not None else DEFAULT_MAX_GAP))
    if tt == "prompt_tune":
        guards.append(GuardSpec(GUARD_LEAKAGE))
    if tt == "code_improvement":
        guards.append(GuardSpec(GUARD_STAGED_CORRECTNESS))
    if ev.deterministic:
        guards.append(GuardSpec(GUARD_DETERMINISM_CACHE))

    if isinstance(ev.saturation_bound, _Unset):
        saturation = 1.0 if (is_bounded_metric(ev.primary_metric) and direction == "maximize") else None
    else:
        saturation = ev.saturation_bound

    return ResolvedPolicy(
        metric=ev.primary_metric,
        direction=direction,
        delta_mode=delta_mode,
        min_delta=ev.min_delta,
        guards=tuple(guards),
        max_rounds=spec.max_rounds,
        max_retries_per_round=spec.max_retries_per_round,
        saturation_bound=saturation,
        access_scope=spec.investigation.access_scope,
        task_type=tt,
        deterministic=ev.deterministic,
        multi_round=spec.phases.multi_round_optimization,
    )


def with_max_rounds(spec: TaskSpec, max_rounds: int) -> TaskSpec:
    """CLI override hook; the effective spec is what gets recorded."""
    return replace(spec, max_rounds=max_rounds)
