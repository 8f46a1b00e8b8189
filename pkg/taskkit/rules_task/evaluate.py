#!/usr/bin/env python3
"""Evaluation entry point for the rule-classification task.

Engine contract: reads the candidate rule set from
$EPOCH_CANDIDATE_DIR/rules.json and writes a schema-version-1 metrics
document to $EPOCH_METRICS_OUT with train and eval accuracy.

The dataset ships beside this script (iris.json). The train/eval split is
the engine-documented rule reimplemented here from its definition: rank
row indices by the SplitMix64 finalizer; the lowest 45 ranks form the
eval split, the remaining 105 the train split. A malformed or missing
rule set exits nonzero with a message on stderr.
"""

import json
import os
import sys
from pathlib import Path

MASK64 = (1 << 64) - 1
EVAL_COUNT = 45


def mix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return (x ^ (x >> 31)) & MASK64


def load_dataset():
    doc = json.loads((Path(__file__).parent / "iris.json").read_text(encoding="utf-8"))
    rows = [(dict(zip(doc["feature_names"], r["features"])), r["label"])
            for r in doc["rows"]]
    order = sorted(range(len(rows)), key=mix64)
    eval_indices = set(order[:EVAL_COUNT])
    train = [rows[i] for i in range(len(rows)) if i not in eval_indices]
    eval_ = [rows[i] for i in range(len(rows)) if i in eval_indices]
    return train, eval_, set(doc["feature_names"])


def load_rules(path: Path):
    doc = json.loads(path.read_text(encoding="utf-8"))
    rules = []
    for raw in doc["rules"]:
        conditions = []
        for c in raw["conditions"]:
            if c["op"] not in ("<", ">="):
                raise ValueError(f"unknown operator {c['op']!r}")
            conditions.append((str(c["feature"]), str(c["op"]), float(c["threshold"])))
        rules.append((conditions, str(raw["class"])))
    return rules, str(doc["default_class"])


def predict(rules, default_class, values):
    for conditions, cls in rules:
        hit = True
        for feature, op, threshold in conditions:
            v = values[feature]
            if not (v < threshold if op == "<" else v >= threshold):
                hit = False
                break
        if hit:
            return cls
    return default_class


def accuracy(rules, default_class, rows):
    correct = sum(predict(rules, default_class, values) == label
                  for values, label in rows)
    return correct / len(rows)


def main() -> int:
    candidate_dir = os.environ.get("EPOCH_CANDIDATE_DIR")
    metrics_out = os.environ.get("EPOCH_METRICS_OUT")
    if not candidate_dir or not metrics_out:
        print("EPOCH_CANDIDATE_DIR and EPOCH_METRICS_OUT must be set", file=sys.stderr)
        return 2

    rules_path = Path(candidate_dir) / "rules.json"
    try:
        rules, default_class = load_rules(rules_path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"cannot load rule set {rules_path}: {exc}", file=sys.stderr)
        return 1

    train, eval_, features = load_dataset()
    for conditions, _ in rules:
        for feature, _, _ in conditions:
            if feature not in features:
                print(f"unknown feature {feature!r}", file=sys.stderr)
                return 1

    doc = {
        "schema_version": 1,
        "splits": {
            "train": {"accuracy": accuracy(rules, default_class, train)},
            "eval": {"accuracy": accuracy(rules, default_class, eval_)},
        },
    }
    with open(metrics_out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
