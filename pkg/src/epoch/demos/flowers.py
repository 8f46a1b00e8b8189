"""Rule-optimization demo on the classic three-species flower measurements.

The 150-row dataset is embedded verbatim so demo runs need no network or
external files. The train/eval split is derived from a documented 64-bit
integer mixer over the row index (lowest 45 hash ranks form the eval
split), so it is identical on every platform: no floating-point ordering
is involved.

Rule sets are ordered first-match lists of conjunctive threshold
conditions with a default class, stored as JSON:

    {"rules": [{"conditions": [{"feature": "petal_length", "op": "<",
                                "threshold": 2.5}], "class": "setosa"}],
     "default_class": "virginica"}

The investigator performs an exhaustive single-step search over threshold
adjustments and added boundary conditions, scored by training-split error
count alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..drivers import DriverRequest, DriverResponse, ROLE_BASELINE_EXECUTOR, ROLE_EXECUTOR, ROLE_INVESTIGATOR
from ..errors import ScopeViolationError
from ..metrics import MetricsArtifact

FEATURE_NAMES = ("sepal_length", "sepal_width", "petal_length", "petal_width")
CLASSES = ("setosa", "versicolor", "virginica")

EVAL_FRACTION = 45  # lowest 45 hash ranks of 150 rows

# (sepal_length, sepal_width, petal_length, petal_width, species)
ROWS: tuple[tuple[float, float, float, float, str], ...] = (
    (5.1, 3.5, 1.4, 0.2, "setosa"), (4.9, 3.0, 1.4, 0.2, "setosa"), (4.7, 3.2, 1.3, 0.2, "setosa"),
    (4.6, 3.1, 1.5, 0.2, "setosa"), (5.0, 3.6, 1.4, 0.2, "setosa"), (5.4, 3.9, 1.7, 0.4, "setosa"),
    (4.6, 3.4, 1.4, 0.3, "setosa"), (5.0, 3.4, 1.5, 0.2, "setosa"), (4.4, 2.9, 1.4, 0.2, "setosa"),
    (4.9, 3.1, 1.5, 0.1, "setosa"), (5.4, 3.7, 1.5, 0.2, "setosa"), (4.8, 3.4, 1.6, 0.2, "setosa"),
    (4.8, 3.0, 1.4, 0.1, "setosa"), (4.3, 3.0, 1.1, 0.1, "setosa"), (5.8, 4.0, 1.2, 0.2, "setosa"),
    (5.7, 4.4, 1.5, 0.4, "setosa"), (5.4, 3.9, 1.3, 0.4, "setosa"), (5.1, 3.5, 1.4, 0.3, "setosa"),
    (5.7, 3.8, 1.7, 0.3, "setosa"), (5.1, 3.8, 1.5, 0.3, "setosa"), (5.4, 3.4, 1.7, 0.2, "setosa"),
    (5.1, 3.7, 1.5, 0.4, "setosa"), (4.6, 3.6, 1.0, 0.2, "setosa"), (5.1, 3.3, 1.7, 0.5, "setosa"),
    (4.8, 3.4, 1.9, 0.2, "setosa"), (5.0, 3.0, 1.6, 0.2, "setosa"), (5.0, 3.4, 1.6, 0.4, "setosa"),
    (5.2, 3.5, 1.5, 0.2, "setosa"), (5.2, 3.4, 1.4, 0.2, "setosa"), (4.7, 3.2, 1.6, 0.2, "setosa"),
    (4.8, 3.1, 1.6, 0.2, "setosa"), (5.4, 3.4, 1.5, 0.4, "setosa"), (5.2, 4.1, 1.5, 0.1, "setosa"),
    (5.5, 4.2, 1.4, 0.2, "setosa"), (4.9, 3.1, 1.5, 0.2, "setosa"), (5.0, 3.2, 1.2, 0.2, "setosa"),
    (5.5, 3.5, 1.3, 0.2, "setosa"), (4.9, 3.6, 1.4, 0.1, "setosa"), (4.4, 3.0, 1.3, 0.2, "setosa"),
    (5.1, 3.4, 1.5, 0.2, "setosa"), (5.0, 3.5, 1.3, 0.3, "setosa"), (4.5, 2.3, 1.3, 0.3, "setosa"),
    (4.4, 3.2, 1.3, 0.2, "setosa"), (5.0, 3.5, 1.6, 0.6, "setosa"), (5.1, 3.8, 1.9, 0.4, "setosa"),
    (4.8, 3.0, 1.4, 0.3, "setosa"), (5.1, 3.8, 1.6, 0.2, "setosa"), (4.6, 3.2, 1.4, 0.2, "setosa"),
    (5.3, 3.7, 1.5, 0.2, "setosa"), (5.0, 3.3, 1.4, 0.2, "setosa"), (7.0, 3.2, 4.7, 1.4, "versicolor"),
    (6.4, 3.2, 4.5, 1.5, "versicolor"), (6.9, 3.1, 4.9, 1.5, "versicolor"), (5.5, 2.3, 4.0, 1.3, "versicolor"),
    (6.5, 2.8, 4.6, 1.5, "versicolor"), (5.7, 2.8, 4.5, 1.3, "versicolor"), (6.3, 3.3, 4.7, 1.6, "versicolor"),
    (4.9, 2.4, 3.3, 1.0, "versicolor"), (6.6, 2.9, 4.6, 1.3, "versicolor"), (5.2, 2.7, 3.9, 1.4, "versicolor"),
    (5.0, 2.0, 3.5, 1.0, "versicolor"), (5.9, 3.0, 4.2, 1.5, "versicolor"), (6.0, 2.2, 4.0, 1.0, "versicolor"),
    (6.1, 2.9, 4.7, 1.4, "versicolor"), (5.6, 2.9, 3.6, 1.3, "versicolor"), (6.7, 3.1, 4.4, 1.4, "versicolor"),
    (5.6, 3.0, 4.5, 1.5, "versicolor"), (5.8, 2.7, 4.1, 1.0, "versicolor"), (6.2, 2.2, 4.5, 1.5, "versicolor"),
    (5.6, 2.5, 3.9, 1.1, "versicolor"), (5.9, 3.2, 4.8, 1.8, "versicolor"), (6.1, 2.8, 4.0, 1.3, "versicolor"),
    (6.3, 2.5, 4.9, 1.5, "versicolor"), (6.1, 2.8, 4.7, 1.2, "versicolor"), (6.4, 2.9, 4.3, 1.3, "versicolor"),
    (6.6, 3.0, 4.4, 1.4, "versicolor"), (6.8, 2.8, 4.8, 1.4, "versicolor"), (6.7, 3.0, 5.0, 1.7, "versicolor"),
    (6.0, 2.9, 4.5, 1.5, "versicolor"), (5.7, 2.6, 3.5, 1.0, "versicolor"), (5.5, 2.4, 3.8, 1.1, "versicolor"),
    (5.5, 2.4, 3.7, 1.0, "versicolor"), (5.8, 2.7, 3.9, 1.2, "versicolor"), (6.0, 2.7, 5.1, 1.6, "versicolor"),
    (5.4, 3.0, 4.5, 1.5, "versicolor"), (6.0, 3.4, 4.5, 1.6, "versicolor"), (6.7, 3.1, 4.7, 1.5, "versicolor"),
    (6.3, 2.3, 4.4, 1.3, "versicolor"), (5.6, 3.0, 4.1, 1.3, "versicolor"), (5.5, 2.5, 4.0, 1.3, "versicolor"),
    (5.5, 2.6, 4.4, 1.2, "versicolor"), (6.1, 3.0, 4.6, 1.4, "versicolor"), (5.8, 2.6, 4.0, 1.2, "versicolor"),
    (5.0, 2.3, 3.3, 1.0, "versicolor"), (5.6, 2.7, 4.2, 1.3, "versicolor"), (5.7, 3.0, 4.2, 1.2, "versicolor"),
    (5.7, 2.9, 4.2, 1.3, "versicolor"), (6.2, 2.9, 4.3, 1.3, "versicolor"), (5.1, 2.5, 3.0, 1.1, "versicolor"),
    (5.7, 2.8, 4.1, 1.3, "versicolor"), (6.3, 3.3, 6.0, 2.5, "virginica"), (5.8, 2.7, 5.1, 1.9, "virginica"),
    (7.1, 3.0, 5.9, 2.1, "virginica"), (6.3, 2.9, 5.6, 1.8, "virginica"), (6.5, 3.0, 5.8, 2.2, "virginica"),
    (7.6, 3.0, 6.6, 2.1, "virginica"), (4.9, 2.5, 4.5, 1.7, "virginica"), (7.3, 2.9, 6.3, 1.8, "virginica"),
    (6.7, 2.5, 5.8, 1.8, "virginica"), (7.2, 3.6, 6.1, 2.5, "virginica"), (6.5, 3.2, 5.1, 2.0, "virginica"),
    (6.4, 2.7, 5.3, 1.9, "virginica"), (6.8, 3.0, 5.5, 2.1, "virginica"), (5.7, 2.5, 5.0, 2.0, "virginica"),
    (5.8, 2.8, 5.1, 2.4, "virginica"), (6.4, 3.2, 5.3, 2.3, "virginica"), (6.5, 3.0, 5.5, 1.8, "virginica"),
    (7.7, 3.8, 6.7, 2.2, "virginica"), (7.7, 2.6, 6.9, 2.3, "virginica"), (6.0, 2.2, 5.0, 1.5, "virginica"),
    (6.9, 3.2, 5.7, 2.3, "virginica"), (5.6, 2.8, 4.9, 2.0, "virginica"), (7.7, 2.8, 6.7, 2.0, "virginica"),
    (6.3, 2.7, 4.9, 1.8, "virginica"), (6.7, 3.3, 5.7, 2.1, "virginica"), (7.2, 3.2, 6.0, 1.8, "virginica"),
    (6.2, 2.8, 4.8, 1.8, "virginica"), (6.1, 3.0, 4.9, 1.8, "virginica"), (6.4, 2.8, 5.6, 2.1, "virginica"),
    (7.2, 3.0, 5.8, 1.6, "virginica"), (7.4, 2.8, 6.1, 1.9, "virginica"), (7.9, 3.8, 6.4, 2.0, "virginica"),
    (6.4, 2.8, 5.6, 2.2, "virginica"), (6.3, 2.8, 5.1, 1.5, "virginica"), (6.1, 2.6, 5.6, 1.4, "virginica"),
    (7.7, 3.0, 6.1, 2.3, "virginica"), (6.3, 3.4, 5.6, 2.4, "virginica"), (6.4, 3.1, 5.5, 1.8, "virginica"),
    (6.0, 3.0, 4.8, 1.8, "virginica"), (6.9, 3.1, 5.4, 2.1, "virginica"), (6.7, 3.1, 5.6, 2.4, "virginica"),
    (6.9, 3.1, 5.1, 2.3, "virginica"), (5.8, 2.7, 5.1, 1.9, "virginica"), (6.8, 3.2, 5.9, 2.3, "virginica"),
    (6.7, 3.3, 5.7, 2.5, "virginica"), (6.7, 3.0, 5.2, 2.3, "virginica"), (6.3, 2.5, 5.0, 1.9, "virginica"),
    (6.5, 3.0, 5.2, 2.0, "virginica"), (6.2, 3.4, 5.4, 2.3, "virginica"), (5.9, 3.0, 5.1, 1.8, "virginica"),)


MASK64 = (1 << 64) - 1


def mix64(x: int) -> int:
    """SplitMix64 finalizer; pure integer arithmetic, platform-stable."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return (x ^ (x >> 31)) & MASK64


@dataclass(frozen=True)
class Condition:
    feature: str
    op: str  # "<" or ">="
    threshold: float

    def holds(self, values: dict[str, float]) -> bool:
        v = values[self.feature]
        return v < self.threshold if self.op == "<" else v >= self.threshold


@dataclass(frozen=True)
class Rule:
    conditions: tuple[Condition, ...]
    predicted_class: str


@dataclass(frozen=True)
class RuleSet:
    """Ordered first-match rules; the default class guarantees totality."""

    rules: tuple[Rule, ...]
    default_class: str

    def predict(self, values: dict[str, float]) -> str:
        for rule in self.rules:
            if all(c.holds(values) for c in rule.conditions):
                return rule.predicted_class
        return self.default_class


@dataclass(frozen=True)
class LabeledDataset:
    feature_names: tuple[str, ...]
    rows: tuple[tuple[tuple[float, ...], str], ...]
    eval_indices: frozenset[int]

    def split_rows(self, split: str) -> list[tuple[dict[str, float], str]]:
        picked = []
        for i, (features, label) in enumerate(self.rows):
            in_eval = i in self.eval_indices
            if (split == "eval") == in_eval:
                picked.append((dict(zip(self.feature_names, features)), label))
        return picked


def embedded_dataset() -> LabeledDataset:
    order = sorted(range(len(ROWS)), key=mix64)
    eval_indices = frozenset(order[:EVAL_FRACTION])
    rows = tuple(((r[0], r[1], r[2], r[3]), r[4]) for r in ROWS)
    return LabeledDataset(feature_names=FEATURE_NAMES, rows=rows, eval_indices=eval_indices)


_DATASET = embedded_dataset()

BASELINE_RULES = RuleSet(
    rules=(
        Rule(conditions=(Condition("petal_length", "<", 2.5),), predicted_class="setosa"),
        Rule(conditions=(Condition("petal_width", "<", 1.65),), predicted_class="versicolor"),
    ),
    default_class="virginica",
)


# --- rule set JSON codec --------------------------------------------------------

def ruleset_to_dict(ruleset: RuleSet) -> dict:
    return {
        "rules": [
            {
                "conditions": [
                    {"feature": c.feature, "op": c.op, "threshold": c.threshold}
                    for c in rule.conditions
                ],
                "class": rule.predicted_class,
            }
            for rule in ruleset.rules
        ],
        "default_class": ruleset.default_class,
    }


def ruleset_from_dict(doc: dict) -> RuleSet:
    if not isinstance(doc, dict) or "rules" not in doc or "default_class" not in doc:
        raise ValueError("rule set document needs keys rules, default_class")
    rules = []
    for raw in doc["rules"]:
        conditions = []
        for c in raw["conditions"]:
            if c["op"] not in ("<", ">="):
                raise ValueError(f"unknown rule operator {c['op']!r}")
            if c["feature"] not in FEATURE_NAMES:
                raise ValueError(f"unknown feature {c['feature']!r}")
            conditions.append(Condition(str(c["feature"]), str(c["op"]), float(c["threshold"])))
        rules.append(Rule(conditions=tuple(conditions), predicted_class=str(raw["class"])))
    return RuleSet(rules=tuple(rules), default_class=str(doc["default_class"]))


def write_ruleset(path: Path, ruleset: RuleSet) -> None:
    path.write_text(json.dumps(ruleset_to_dict(ruleset), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def read_ruleset(path: Path) -> RuleSet:
    return ruleset_from_dict(json.loads(path.read_text(encoding="utf-8")))


# --- evaluation -----------------------------------------------------------------

def eval_rules(ruleset: RuleSet, dataset: LabeledDataset | None = None,
               splits: tuple[str, ...] = ("train", "eval")) -> MetricsArtifact:
    """Accuracy of a rule set per split; unknown features raise ValueError."""
    dataset = dataset or _DATASET
    for rule in ruleset.rules:
        for cond in rule.conditions:
            if cond.feature not in dataset.feature_names:
                raise ValueError(f"unknown feature {cond.feature!r}")
    out: dict[str, dict[str, float]] = {}
    for split in splits:
        rows = dataset.split_rows(split)
        correct = sum(ruleset.predict(values) == label for values, label in rows)
        out[split] = {"accuracy": correct / len(rows)}
    return MetricsArtifact(splits=out)


def _train_errors(ruleset: RuleSet, dataset: LabeledDataset) -> int:
    rows = dataset.split_rows("train")
    return sum(ruleset.predict(values) != label for values, label in rows)


# --- single-step hypothesis search ------------------------------------------------

def _midpoints(dataset: LabeledDataset, feature: str) -> list[float]:
    """Candidate thresholds: midpoints of consecutive train-split values."""
    train_values = sorted({v[feature] for v, _ in dataset.split_rows("train")})
    return [round((a + b) / 2, 3) for a, b in zip(train_values, train_values[1:])]


def _apply_action(ruleset: RuleSet, action: dict) -> RuleSet:
    rules = [ [list(r.conditions), r.predicted_class] for r in ruleset.rules ]
    kind = action["action"]
    if kind == "set_threshold":
        ri, ci = action["rule_index"], action["condition_index"]
        old = rules[ri][0][ci]
        rules[ri][0][ci] = Condition(old.feature, old.op, float(action["threshold"]))
    elif kind == "add_condition":
        ri = action["rule_index"]
        rules[ri][0] = list(rules[ri][0]) + [
            Condition(str(action["feature"]), str(action["op"]), float(action["threshold"]))]
    else:
        raise ValueError(f"unknown rule action {kind!r}")
    return RuleSet(
        rules=tuple(Rule(conditions=tuple(conds), predicted_class=cls) for conds, cls in rules),
        default_class=ruleset.default_class)


def ranked_single_steps(ruleset: RuleSet, dataset: LabeledDataset | None = None) -> list[dict]:
    """Every single-step change that strictly reduces training errors.

    Sorted best-first by (remaining train errors, deterministic action key);
    entirely independent of eval-split content.
    """
    dataset = dataset or _DATASET
    base_errors = _train_errors(ruleset, dataset)
    candidates: list[tuple[tuple, dict]] = []

    for ri, rule in enumerate(ruleset.rules):
        for ci, cond in enumerate(rule.conditions):
            for threshold in _midpoints(dataset, cond.feature):
                if threshold == cond.threshold:
                    continue
                action = {"action": "set_threshold", "rule_index": ri, "condition_index": ci,
                          "feature": cond.feature, "op": cond.op, "threshold": threshold}
                errors = _train_errors(_apply_action(ruleset, action), dataset)
                if errors < base_errors:
                    key = (errors, 0, ri, ci, cond.feature, cond.op, threshold)
                    candidates.append((key, action))

    for ri, rule in enumerate(ruleset.rules):
        used = {(c.feature, c.op) for c in rule.conditions}
        for feature in dataset.feature_names:
            for op in ("<", ">="):
                if (feature, op) in used:
                    continue
                for threshold in _midpoints(dataset, feature):
                    action = {"action": "add_condition", "rule_index": ri,
                              "feature": feature, "op": op, "threshold": threshold}
                    errors = _train_errors(_apply_action(ruleset, action), dataset)
                    if errors < base_errors:
                        key = (errors, 1, ri, -1, feature, op, threshold)
                        candidates.append((key, action))

    candidates.sort(key=lambda pair: pair[0])
    return [action for _, action in candidates]


def _describe_action(action: dict) -> str:
    if action["action"] == "set_threshold":
        return (f"move rule {action['rule_index']} threshold: "
                f"{action['feature']} {action['op']} {action['threshold']}")
    return (f"add boundary condition to rule {action['rule_index']}: "
            f"{action['feature']} {action['op']} {action['threshold']}")


PROPOSAL_FENCE = "```proposal"


def embed_proposal(report: str, action: dict) -> str:
    return f"{report}\n\n{PROPOSAL_FENCE}\n{json.dumps(action, sort_keys=True)}\n```\n"


def extract_proposal(text: str) -> dict:
    if PROPOSAL_FENCE not in text:
        raise ValueError("investigation report carries no proposal block")
    block = text.rsplit(PROPOSAL_FENCE, 1)[1]
    body = block.split("```", 1)[0]
    return json.loads(body)


# --- drivers ----------------------------------------------------------------------

def _check_train_only_scope(request: DriverRequest) -> None:
    for path in request.visible_paths:
        if Path(path).name.startswith("eval"):
            raise ScopeViolationError(
                f"investigator restricted to the training split was handed {path}")


def rule_hillclimb(request: DriverRequest, ctx) -> DriverResponse:
    """Investigator: best single-step rule change by training error count."""
    _check_train_only_scope(request)
    accepted = read_ruleset(ctx.accepted_dir / "rules.json")
    ranked = ranked_single_steps(accepted)
    if request.try_index >= len(ranked):
        return DriverResponse(role=ROLE_INVESTIGATOR, payload={
            "report": "No single-step rule change reduces training errors further.",
            "has_hypothesis": False,
        })
    action = ranked[request.try_index]
    summary = _describe_action(action)
    errors_now = _train_errors(accepted, _DATASET)
    errors_then = _train_errors(_apply_action(accepted, action), _DATASET)
    report = (
        f"# Rule investigation (round {request.round_index + 1}, try {request.try_index})\n\n"
        f"Current rule set makes {errors_now} training errors. Best single-step change\n"
        f"reduces them to {errors_then}: {summary}.")
    return DriverResponse(role=ROLE_INVESTIGATOR, payload={
        "report": embed_proposal(report, action),
        "hypothesis": summary,
        "has_hypothesis": True,
        "wants_retry_on_reject": request.try_index + 1 < len(ranked),
    })


def rule_apply(request: DriverRequest, ctx) -> DriverResponse:
    """Executor: apply the proposal from the current investigation report."""
    action = extract_proposal(str(request.constraints.get("investigation", "")))
    rules_path = Path(ctx.candidate_dir) / "rules.json"
    current = read_ruleset(rules_path)
    write_ruleset(rules_path, _apply_action(current, action))
    return DriverResponse(role=ROLE_EXECUTOR, payload={
        "change": _describe_action(action),
        "files_written": ["rules.json"],
    })


def rule_baseline(request: DriverRequest, ctx) -> DriverResponse:
    """Baseline executor: materialize the shipped petal-threshold rules."""
    write_ruleset(Path(ctx.candidate_dir) / "rules.json", BASELINE_RULES)
    return DriverResponse(role=ROLE_BASELINE_EXECUTOR, payload={
        "change": "petal-threshold baseline rules",
        "files_written": ["rules.json"],
    })


def rule_eval(candidate_dir: Path, store, spec) -> MetricsArtifact:
    """Builtin evaluator: candidate rules.json against the embedded split."""
    return eval_rules(read_ruleset(Path(candidate_dir) / "rules.json"))


def setup_rule_task(store, spec) -> None:
    """Materialize the split data files so access scoping is observable."""
    data_dir = store.task_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    for split in ("train", "eval"):
        rows = _DATASET.split_rows(split)
        doc = {
            "feature_names": list(FEATURE_NAMES),
            "rows": [{"features": values, "label": label} for values, label in rows],
        }
        (data_dir / f"{split}.json").write_text(
            json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
