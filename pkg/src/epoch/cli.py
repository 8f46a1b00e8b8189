"""Command line entry point: validate | run | resume | replay | report.

Exit codes are stable: 0 success, 1 run error, 2 invalid spec or trace,
3 resume/artifact error, 4 usage error. The projects root comes from
--workspace, falling back to $EPOCH_HOME and then ./projects.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import tracking
from .errors import (
    EpochError,
    ReplayTraceError,
    ResumeError,
    RunError,
    SpecError,
    StoreError,
)
from .runner import Runner, resume_run
from .taskspec import parse_spec, resolve_policy, validate_spec, with_max_rounds

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_SPEC_INVALID = 2
EXIT_ARTIFACT_ERROR = 3
EXIT_USAGE = 4


def _workspace(args) -> Path:
    if args.workspace:
        return Path(args.workspace)
    env = os.environ.get("EPOCH_HOME")
    if env:
        return Path(env)
    return Path("projects")


def _read_spec(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read spec file {path}: {exc}") from exc
    return text, parse_spec(text)


class UsageError(Exception):
    pass


def _apply_overrides(spec, args):
    if getattr(args, "max_rounds", None) is not None:
        if args.max_rounds < 1:
            raise UsageError("--max-rounds must be >= 1")
        spec = with_max_rounds(spec, args.max_rounds)
    return spec


def _emit_result(result, args) -> None:
    if getattr(args, "json", False):
        doc = {
            "run_id": result.state.run_id,
            "run_dir": str(result.run_dir),
            "phase": result.state.phase,
            "termination": (
                {"reason": result.state.termination.reason,
                 "round": result.state.termination.round_index}
                if result.state.termination else None),
            "verdicts": result.verdict_lines,
            "summary": str(result.summary_path) if result.summary_path else None,
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
        return
    for line in result.verdict_lines:
        print(line)
    if result.summary_path:
        print(f"summary: {result.summary_path}")


def cmd_validate(args) -> int:
    _, spec = _read_spec(args.spec)
    violations = validate_spec(spec)
    for violation in violations:
        print(str(violation))
    if violations:
        return EXIT_SPEC_INVALID
    print("spec is valid")
    return EXIT_OK


def cmd_run(args) -> int:
    spec_text, spec = _read_spec(args.spec)
    spec = _apply_overrides(spec, args)
    violations = validate_spec(spec)
    if violations:
        for violation in violations:
            print(str(violation), file=sys.stderr)
        return EXIT_SPEC_INVALID
    runner = Runner(spec, _workspace(args),
                    spec_text=spec_text if args.max_rounds is None else None,
                    spec_dir=Path(args.spec).resolve().parent)
    result = runner.run_to_completion()
    _emit_result(result, args)
    return EXIT_OK


def cmd_resume(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise UsageError(f"run directory does not exist: {run_dir}")
    result = resume_run(run_dir)
    _emit_result(result, args)
    return EXIT_OK


def cmd_replay(args) -> int:
    spec_text, spec = _read_spec(args.spec)
    spec = _apply_overrides(spec, args)
    trace_path = Path(args.trace)
    if not trace_path.is_file():
        raise UsageError(f"trace file does not exist: {trace_path}")
    runner = Runner(spec, _workspace(args), trace_override=trace_path.resolve(),
                    spec_text=spec_text if args.max_rounds is None else None,
                    spec_dir=Path(args.spec).resolve().parent)
    result = runner.run_to_completion()
    _emit_result(result, args)
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise UsageError(f"run directory does not exist: {run_dir}")
    task_dir = run_dir.parent
    workspace = task_dir.parent
    spec_path = workspace / f"{task_dir.name}_run.yaml"
    try:
        spec = parse_spec(spec_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ResumeError(f"cannot read task spec {spec_path}: {exc}") from exc
    policy = resolve_policy(spec)
    store = tracking.open_store(workspace, task_dir.name, run_dir.name, spec.tracking.backend)

    state = tracking.load_state(store, spec, policy)
    records = [store.load_record(doc) for doc in store.committed_rounds()]
    baseline = store.baseline_metrics()
    if baseline is None and not records:
        raise ResumeError("empty store: no artifacts to report on")

    termination = None
    if state.termination is not None:
        from .protocol import render_round
        termination = (state.termination.reason, render_round(state.termination.round_index))
    final_accepted = None
    if state.accepted is not None:
        artifact = state.accepted.metrics
        if policy.task_type == "code_improvement":
            value = artifact.timing(policy.metric)
        else:
            value = artifact.split_metric(policy.eval_split, policy.metric)
        final_accepted = (value, state.accepted.round_index)

    text = tracking.render_summary(spec, policy, baseline, records, termination, final_accepted)
    if args.json:
        print(json.dumps({"run_id": run_dir.name, "summary": text,
                          "phase": state.phase}, indent=2, sort_keys=True))
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epoch",
        description="Round-based self-improvement orchestration engine")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workspace", help="projects root (default: $EPOCH_HOME or ./projects)")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--max-rounds", type=int, default=None,
                        help="override run.max_rounds; recorded in the effective spec")

    p = sub.add_parser("validate", parents=[common], help="check a task spec")
    p.add_argument("spec")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", parents=[common], help="run a task to termination")
    p.add_argument("spec")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("resume", parents=[common], help="continue an interrupted run")
    p.add_argument("run_dir")
    p.set_defaults(fn=cmd_resume)

    p = sub.add_parser("replay", parents=[common],
                       help="run a task with all roles bound to a replay trace")
    p.add_argument("spec")
    p.add_argument("trace")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("report", parents=[common], help="render the run summary table")
    p.add_argument("run_dir")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SpecError, ReplayTraceError) as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC_INVALID
    except (ResumeError, StoreError) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT_ERROR
    except (RunError, EpochError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
