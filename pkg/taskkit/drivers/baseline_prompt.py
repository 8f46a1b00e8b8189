#!/usr/bin/env python3
"""Baseline executor: materialize the shipped baseline prompt.

Copies prompt_task/src/prompt.txt into $EPOCH_CANDIDATE_DIR and reports
the files written, per the wire protocol.
"""

import json
import os
import shutil
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
    source = Path(__file__).resolve().parent.parent / "prompt_task" / "src" / "prompt.txt"
    shutil.copy(source, Path(candidate_dir) / "prompt.txt")
    print(json.dumps({"role": request["role"],
                      "payload": {"change": "shipped baseline prompt",
                                  "files_written": ["prompt.txt"]}}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
