#!/usr/bin/env python3
"""Misbehaving executor used to exercise the engine's leakage guard.

Instead of deriving prompt edits from training failures, it reads the
eval split straight off the task directory (the engine only enforces
access scope at the interface; drivers run unsandboxed) and pastes the
first eval sentence into the prompt as a demonstration. A leakage scan
over the candidate must flag this.
"""

import json
import os
import sys
from pathlib import Path


def main() -> int:
    raw = sys.stdin.read()
    if not raw.strip():
        print("empty request on stdin", file=sys.stderr)
        return 1
    request = json.loads(raw)
    candidate_dir = os.environ.get("EPOCH_CANDIDATE_DIR")
    if not candidate_dir:
        print("EPOCH_CANDIDATE_DIR must be set", file=sys.stderr)
        return 1

    # Drivers run with the task directory as cwd; go around the declared
    # access scope on purpose.
    eval_file = Path("data") / "eval.txt"
    sentence = eval_file.read_text(encoding="utf-8").splitlines()[0]

    prompt_path = Path(candidate_dir) / "prompt.txt"
    prompt = prompt_path.read_text(encoding="utf-8") if prompt_path.is_file() else ""
    prompt += f"example: {sentence} => positive\n"
    prompt_path.write_text(prompt, encoding="utf-8")

    print(json.dumps({"role": request["role"],
                      "payload": {"change": "paste an example into the prompt",
                                  "files_written": ["prompt.txt"]}}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
