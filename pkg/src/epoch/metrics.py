"""Canonical metrics artifact: the unit every evaluation must produce.

A metrics document is JSON with `schema_version` 1 and the layout

    {
      "schema_version": 1,
      "splits": {"train": {"accuracy": 0.705}, "eval": {"accuracy": 0.6667}},
      "tests": {"passed": 19, "total": 19},          # optional
      "timings_ms": {"fib_1e6": 34.3},               # optional
      "notes": "free text"                           # optional
    }

`canonicalize` renders an artifact as deterministic bytes (sorted keys,
no insignificant whitespace, shortest round-trip floats) so artifacts can
be compared, cached and committed byte-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MetricsSchemaError, MissingMetricsError

SCHEMA_VERSION = 1

# Metric names treated as bounded to [0, 1]. Bounded metrics get a default
# saturation bound of 1.0 during policy resolution.
BOUNDED_METRICS = frozenset({"accuracy", "f1", "precision", "recall", "auc"})


def is_bounded_metric(name: str) -> bool:
    return name in BOUNDED_METRICS or name.endswith("_accuracy")


@dataclass(frozen=True)
class TestCounts:
    passed: int
    total: int

    @property
    def ratio(self) -> float:
        return self.passed / self.total if self.total else 0.0


def _scrub_zero(value: float) -> float:
    # -0.0 == 0.0 but repr()s differently; normalize so equal artifacts
    # always canonicalize to equal bytes
    return 0.0 if value == 0 else value


@dataclass(frozen=True)
class MetricsArtifact:
    splits: dict[str, dict[str, float]] = field(default_factory=dict)
    tests: TestCounts | None = None
    timings_ms: dict[str, float] | None = None
    notes: str | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "splits", {
            split: {name: _scrub_zero(v) for name, v in metrics.items()}
            for split, metrics in self.splits.items()})
        if self.timings_ms is not None:
            object.__setattr__(self, "timings_ms", {
                name: _scrub_zero(v) for name, v in self.timings_ms.items()})

    def split_metric(self, split: str, metric: str) -> float | None:
        return self.splits.get(split, {}).get(metric)

    def timing(self, name: str) -> float | None:
        if self.timings_ms is None:
            return None
        return self.timings_ms.get(name)


def _check_number(value: object, path: str, *, nonnegative: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MetricsSchemaError(f"{path}: expected a number, got {type(value).__name__}")
    out = float(value)
    if not math.isfinite(out):
        raise MetricsSchemaError(f"{path}: non-finite number {value!r}")
    if nonnegative and out < 0:
        raise MetricsSchemaError(f"{path}: must be non-negative, got {out}")
    return out


def artifact_from_dict(doc: object, source: str = "<metrics>") -> MetricsArtifact:
    """Validate a parsed JSON document and build the typed artifact."""
    if not isinstance(doc, dict):
        raise MetricsSchemaError(f"{source}: metrics document must be a JSON object")
    allowed = {"schema_version", "splits", "tests", "timings_ms", "notes"}
    for key in doc:
        if key not in allowed:
            raise MetricsSchemaError(f"{source}: unknown key {key!r}")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise MetricsSchemaError(f"{source}: schema_version must be {SCHEMA_VERSION}, got {version!r}")

    splits: dict[str, dict[str, float]] = {}
    raw_splits = doc.get("splits", {})
    if not isinstance(raw_splits, dict):
        raise MetricsSchemaError(f"{source}: splits must be an object")
    for split, metrics in raw_splits.items():
        if not isinstance(metrics, dict):
            raise MetricsSchemaError(f"{source}: splits.{split} must be an object")
        splits[str(split)] = {}
        for name, value in metrics.items():
            num = _check_number(value, f"{source}: splits.{split}.{name}")
            if is_bounded_metric(str(name)) and not (0.0 <= num <= 1.0):
                raise MetricsSchemaError(
                    f"{source}: splits.{split}.{name}: bounded metric outside [0, 1]: {num}"
                )
            splits[str(split)][str(name)] = num

    tests = None
    if "tests" in doc:
        raw_tests = doc["tests"]
        if not isinstance(raw_tests, dict) or set(raw_tests) != {"passed", "total"}:
            raise MetricsSchemaError(f"{source}: tests must be an object with keys passed, total")
        passed, total = raw_tests["passed"], raw_tests["total"]
        if isinstance(passed, bool) or isinstance(total, bool) \
                or not isinstance(passed, int) or not isinstance(total, int):
            raise MetricsSchemaError(f"{source}: tests.passed/total must be integers")
        if not (0 <= passed <= total):
            raise MetricsSchemaError(f"{source}: tests requires 0 <= passed <= total")
        tests = TestCounts(passed=passed, total=total)

    timings = None
    if "timings_ms" in doc:
        raw_timings = doc["timings_ms"]
        if not isinstance(raw_timings, dict):
            raise MetricsSchemaError(f"{source}: timings_ms must be an object")
        timings = {
            str(name): _check_number(value, f"{source}: timings_ms.{name}", nonnegative=True)
            for name, value in raw_timings.items()
        }

    notes = None
    if "notes" in doc:
        if not isinstance(doc["notes"], str):
            raise MetricsSchemaError(f"{source}: notes must be a string")
        notes = doc["notes"]

    return MetricsArtifact(splits=splits, tests=tests, timings_ms=timings, notes=notes)


def artifact_to_dict(artifact: MetricsArtifact) -> dict:
    doc: dict = {
        "schema_version": artifact.schema_version,
        "splits": {s: dict(m) for s, m in artifact.splits.items()},
    }
    if artifact.tests is not None:
        doc["tests"] = {"passed": artifact.tests.passed, "total": artifact.tests.total}
    if artifact.timings_ms is not None:
        doc["timings_ms"] = dict(artifact.timings_ms)
    if artifact.notes is not None:
        doc["notes"] = artifact.notes
    return doc


def canonical_json_bytes(doc: object) -> bytes:
    """Deterministic JSON encoding: sorted keys, compact, shortest floats."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def canonicalize(artifact: MetricsArtifact) -> bytes:
    return canonical_json_bytes(artifact_to_dict(artifact))


def read_metrics(path: str | Path) -> MetricsArtifact:
    path = Path(path)
    if not path.is_file():
        raise MissingMetricsError(f"no metrics file at {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise MetricsSchemaError(f"{path}: cannot parse metrics JSON: {exc}") from exc
    return artifact_from_dict(doc, source=str(path))


def write_metrics(path: str | Path, artifact: MetricsArtifact) -> None:
    Path(path).write_bytes(canonicalize(artifact))
