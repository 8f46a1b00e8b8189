#!/usr/bin/env python3
"""Run the three builtin demos end-to-end and print their summaries."""

import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from epoch.runner import run_task  # noqa: E402
from epoch.taskspec import parse_spec  # noqa: E402

TASKS = Path(__file__).resolve().parent.parent / "tasks"
DEMOS = ("rule_demo", "tuning_demo", "ladder_demo")


def main() -> int:
    workspace = Path(tempfile.mkdtemp(prefix="epoch-demos-"))
    print(f"workspace: {workspace}\n")
    for name in DEMOS:
        spec = parse_spec((TASKS / f"{name}_run.yaml").read_text(encoding="utf-8"))
        result = run_task(spec, workspace, run_id=name)
        print(f"== {name}")
        for line in result.verdict_lines:
            print(line)
        print()
        print(result.summary_path.read_text(encoding="utf-8"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
