#!/usr/bin/env python3
"""Evaluation entry point for the prompt-tuning task.

Engine contract: reads the candidate prompt from
$EPOCH_CANDIDATE_DIR/prompt.txt, scores the shipped 20-train/12-eval
sentiment fixture with the deterministic mock scorer below, and writes a
schema-version-1 metrics document to $EPOCH_METRICS_OUT.

The mock scorer is intentionally simple and fully documented so prompt
edits form a real, if toy, optimization surface:

  * Sentences tokenize to lowercase alphanumeric words. Each token in the
    positive lexicon scores +1, each in the negative lexicon -1.
  * If the prompt mentions the word "negation", a lexicon token whose
    immediately preceding token is a negator (not, never, hardly, barely,
    no) contributes the opposite sign instead.
  * If the prompt contains the phrase "lean positive", ties (score 0)
    predict positive; otherwise ties predict negative.
  * Prompt lines of the form `example: <text> => <label>` short-circuit
    scoring for sentences whose normalized text matches exactly.

Missing prompt file exits nonzero.
"""

import json
import os
import re
import sys
from pathlib import Path

POSITIVE = {"great", "wonderful", "charming", "moving", "delightful", "fun",
            "smart", "beautiful", "gripping", "warm"}
NEGATIVE = {"dull", "boring", "mess", "flat", "tired", "lifeless", "clumsy",
            "bland", "tedious", "hollow"}
NEGATORS = {"not", "never", "hardly", "barely", "no"}

_TOKEN = re.compile(r"[a-z0-9]+")
_EXAMPLE = re.compile(r"^example:\s*(?P<text>.+?)\s*=>\s*(?P<label>positive|negative)\s*$")


def normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().lower()


def tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def parse_prompt(prompt: str):
    handle_negation = "negation" in prompt.lower()
    lean_positive = "lean positive" in prompt.lower()
    examples = {}
    for line in prompt.splitlines():
        m = _EXAMPLE.match(line.strip())
        if m:
            examples[normalize(m.group("text"))] = m.group("label")
    return handle_negation, lean_positive, examples


def predict(sentence: str, handle_negation: bool, lean_positive: bool,
            examples: dict) -> str:
    normalized = normalize(sentence)
    if normalized in examples:
        return examples[normalized]
    words = tokens(sentence)
    score = 0
    for i, word in enumerate(words):
        value = (1 if word in POSITIVE else 0) - (1 if word in NEGATIVE else 0)
        if value == 0:
            continue
        if handle_negation and i > 0 and words[i - 1] in NEGATORS:
            value = -value
        score += value
    if score > 0:
        return "positive"
    if score < 0:
        return "negative"
    return "positive" if lean_positive else "negative"


def split_accuracy(rows, prompt: str) -> float:
    handle_negation, lean_positive, examples = parse_prompt(prompt)
    correct = sum(
        predict(row["text"], handle_negation, lean_positive, examples) == row["label"]
        for row in rows)
    return correct / len(rows)


def main() -> int:
    candidate_dir = os.environ.get("EPOCH_CANDIDATE_DIR")
    metrics_out = os.environ.get("EPOCH_METRICS_OUT")
    if not candidate_dir or not metrics_out:
        print("EPOCH_CANDIDATE_DIR and EPOCH_METRICS_OUT must be set", file=sys.stderr)
        return 2

    prompt_path = Path(candidate_dir) / "prompt.txt"
    if not prompt_path.is_file():
        print(f"no prompt file at {prompt_path}", file=sys.stderr)
        return 1
    prompt = prompt_path.read_text(encoding="utf-8")

    data_dir = Path(__file__).parent / "data"
    train = json.loads((data_dir / "train.json").read_text(encoding="utf-8"))
    eval_ = json.loads((data_dir / "eval.json").read_text(encoding="utf-8"))

    doc = {
        "schema_version": 1,
        "splits": {
            "train": {"accuracy": split_accuracy(train, prompt)},
            "eval": {"accuracy": split_accuracy(eval_, prompt)},
        },
    }
    with open(metrics_out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
