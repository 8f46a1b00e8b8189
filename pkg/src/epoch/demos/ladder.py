"""Staged code-improvement demo over a fixed implementation ladder.

Real micro-benchmarks are hardware-noisy, so the demo ships a deterministic
cost table: each ladder step has a test outcome and a simulated runtime.
Step 0 is the baseline with failing tests; step 1 reaches full correctness;
later steps trade nothing away while cutting simulated runtime by well over
the 5% acceptance threshold, and the ladder then runs out, exercising
no-hypothesis termination.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..drivers import DriverRequest, DriverResponse, ROLE_BASELINE_EXECUTOR, ROLE_EXECUTOR, ROLE_INVESTIGATOR
from ..metrics import MetricsArtifact, TestCounts

RUNTIME_METRIC = "runtime_ms"

# (change description, tests passed, tests total, simulated runtime ms)
LADDER: tuple[tuple[str, int, int, float], ...] = (
    ("straightforward nested-loop implementation", 15, 20, 1250.0),
    ("fix boundary handling and precompute the lookup table", 20, 20, 480.0),
    ("replace the inner loop with a rolling window", 20, 20, 180.0),
    ("reuse result buffers to avoid per-call allocation", 20, 20, 160.0),
)


def ladder_metrics(step: int) -> MetricsArtifact:
    change, passed, total, runtime = LADDER[step]
    return MetricsArtifact(
        tests=TestCounts(passed=passed, total=total),
        timings_ms={RUNTIME_METRIC: runtime},
        notes=change,
    )


def _write_step(candidate_dir: Path, step: int) -> None:
    doc = {"step": step, "change": LADDER[step][0]}
    (Path(candidate_dir) / "impl.json").write_text(
        json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def _read_step(directory: Path) -> int:
    doc = json.loads((Path(directory) / "impl.json").read_text(encoding="utf-8"))
    return int(doc["step"])


def code_ladder(request: DriverRequest, ctx) -> DriverResponse:
    """Investigator: propose the next ladder step, if any remain."""
    current = _read_step(ctx.accepted_dir)
    nxt = current + 1
    if nxt >= len(LADDER) or request.try_index > 0:
        return DriverResponse(role=ROLE_INVESTIGATOR, payload={
            "report": "Profiling shows no further candidate implementation on the ladder.",
            "has_hypothesis": False,
        })
    summary = LADDER[nxt][0]
    report = (
        f"# Ladder investigation (round {request.round_index + 1})\n\n"
        f"Current implementation is step {current}. Next candidate: {summary}.\n\n"
        f"```proposal\n{json.dumps({'step': nxt}, sort_keys=True)}\n```\n")
    return DriverResponse(role=ROLE_INVESTIGATOR, payload={
        "report": report,
        "hypothesis": summary,
        "has_hypothesis": True,
        "wants_retry_on_reject": False,
    })


def ladder_apply(request: DriverRequest, ctx) -> DriverResponse:
    text = str(request.constraints.get("investigation", ""))
    block = text.rsplit("```proposal", 1)[1]
    step = int(json.loads(block.split("```", 1)[0])["step"])
    _write_step(ctx.candidate_dir, step)
    return DriverResponse(role=ROLE_EXECUTOR, payload={
        "change": LADDER[step][0],
        "files_written": ["impl.json"],
    })


def ladder_baseline(request: DriverRequest, ctx) -> DriverResponse:
    _write_step(ctx.candidate_dir, 0)
    return DriverResponse(role=ROLE_BASELINE_EXECUTOR, payload={
        "change": LADDER[0][0],
        "files_written": ["impl.json"],
    })


def ladder_eval(candidate_dir: Path, store, spec) -> MetricsArtifact:
    return ladder_metrics(_read_step(candidate_dir))
