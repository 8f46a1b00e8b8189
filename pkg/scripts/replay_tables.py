#!/usr/bin/env python3
"""Replay every shipped trace into a scratch workspace and print the
verdict lines, one table per trace."""

import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from epoch.runner import Runner  # noqa: E402
from epoch.taskspec import parse_spec  # noqa: E402

TASKS = Path(__file__).resolve().parent.parent / "tasks"
REPLAYS = ("mnist_tuning", "fib_speedup", "sst2_prompt", "iris_rules", "synth_highgap")


def main() -> int:
    workspace = Path(tempfile.mkdtemp(prefix="epoch-replays-"))
    print(f"workspace: {workspace}\n")
    for name in REPLAYS:
        spec = parse_spec((TASKS / f"{name}_run.yaml").read_text(encoding="utf-8"))
        runner = Runner(spec, workspace, run_id=name,
                        trace_override=(TASKS / "traces" / f"{name}.json").resolve())
        result = runner.run_to_completion()
        print(f"== {name}")
        for line in result.verdict_lines:
            print(line)
        print(f"summary: {result.summary_path}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
