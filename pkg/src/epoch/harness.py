"""Canonical command execution, candidate digests and the evaluation cache.

Every train/eval command runs under the same environment contract:

    EPOCH_RUN_DIR        run artifact directory
    EPOCH_ROUND          rendered round label (baseline = 1)
    EPOCH_TRY            try index within the round (0 = first attempt)
    EPOCH_PHASE          Phase1 | Phase2
    EPOCH_CANDIDATE_DIR  directory holding the candidate under evaluation
    EPOCH_METRICS_OUT    absolute path where the command must write the
                         metrics JSON document (schema_version 1)

Exit codes are data (recorded, never raised); only spawn failures and
timeouts raise. In deterministic mode evaluation results are cached under
the candidate's content digest inside the run directory, so re-evaluating
an unchanged candidate never launches a process.
"""

from __future__ import annotations

import hashlib
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    CommandError,
    CommandSpawnError,
    CommandTimeoutError,
    MissingMetricsError,
)
from .metrics import MetricsArtifact, canonicalize, read_metrics

CAPTURE_LIMIT = 8192  # bytes kept in memory; full copies always go to disk


@dataclass(frozen=True)
class CommandResult:
    exit_code: int
    stdout: str
    stderr: str
    duration_ms: float
    stdout_path: str | None = None
    stderr_path: str | None = None


def _truncate(data: bytes) -> str:
    text = data.decode("utf-8", errors="replace")
    if len(data) <= CAPTURE_LIMIT:
        return text
    return text[:CAPTURE_LIMIT] + f"... [truncated, {len(data)} bytes total]"


def run_command(cmd: str, env: dict[str, str], cwd: str | Path,
                timeout_s: float | None = None,
                log_dir: str | Path | None = None,
                log_name: str = "command") -> CommandResult:
    """Run a shell command string with the engine environment injected."""
    if not cmd or not cmd.strip():
        raise CommandError("empty command")
    import os

    full_env = dict(os.environ)
    full_env.update(env)
    start = time.monotonic()
    try:
        proc = subprocess.run(
            cmd, shell=True, cwd=str(cwd), env=full_env,
            capture_output=True, timeout=timeout_s)
    except subprocess.TimeoutExpired as exc:
        raise CommandTimeoutError(f"command exceeded {timeout_s}s: {cmd}") from exc
    except (OSError, subprocess.SubprocessError) as exc:
        raise CommandSpawnError(f"cannot spawn command {cmd!r}: {exc}") from exc
    duration_ms = (time.monotonic() - start) * 1000.0

    stdout_path = stderr_path = None
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        stdout_path = str(log_dir / f"{log_name}.out.log")
        stderr_path = str(log_dir / f"{log_name}.err.log")
        Path(stdout_path).write_bytes(proc.stdout)
        Path(stderr_path).write_bytes(proc.stderr)

    return CommandResult(
        exit_code=proc.returncode,
        stdout=_truncate(proc.stdout),
        stderr=_truncate(proc.stderr),
        duration_ms=duration_ms,
        stdout_path=stdout_path,
        stderr_path=stderr_path,
    )


def snapshot_digest(candidate_dir: str | Path) -> str:
    """Content digest over sorted relative paths plus file bytes.

    Mode bits and absolute location are excluded, so identical trees at
    different paths hash identically. The empty directory hashes to the
    SHA-256 of empty input.
    """
    root = Path(candidate_dir)
    if not root.is_dir():
        raise OSError(f"not a directory: {root}")
    hasher = hashlib.sha256()
    files = sorted(p for p in root.rglob("*") if p.is_file())
    for path in files:
        rel = path.relative_to(root).as_posix().encode("utf-8")
        content = path.read_bytes()
        hasher.update(len(rel).to_bytes(8, "big"))
        hasher.update(rel)
        hasher.update(len(content).to_bytes(8, "big"))
        hasher.update(content)
    return hasher.hexdigest()


class EvalCache:
    """Digest-keyed store of canonical metrics inside the run directory.

    Entries are never evicted within a run; resume sees the same cache.
    """

    def __init__(self, cache_dir: str | Path) -> None:
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, digest: str) -> Path:
        return self.cache_dir / f"{digest}.json"

    def get(self, digest: str) -> MetricsArtifact | None:
        path = self._path(digest)
        if not path.is_file():
            return None
        return read_metrics(path)

    def put(self, digest: str, artifact: MetricsArtifact) -> None:
        tmp = self._path(digest).with_suffix(".tmp")
        tmp.write_bytes(canonicalize(artifact))
        tmp.replace(self._path(digest))


@dataclass(frozen=True)
class EvalOutcome:
    artifact: MetricsArtifact
    digest: str
    cache_hit: bool
    executions: int
    cache_consistent: bool | None = None


class Harness:
    """Executes the candidate evaluation contract for one run."""

    def __init__(self, *, run_dir: Path, train_cmd: str | None, eval_cmd: str | None,
                 deterministic: bool, builtin_evaluator=None,
                 command_timeout_s: float | None = None) -> None:
        self.run_dir = Path(run_dir)
        self.train_cmd = train_cmd
        self.eval_cmd = eval_cmd
        self.deterministic = deterministic
        self.builtin_evaluator = builtin_evaluator
        self.command_timeout_s = command_timeout_s
        self.cache = EvalCache(self.run_dir / "cache")
        self.executions = 0

    def _base_env(self, candidate_dir: Path, round_label: str, try_index: int,
                  phase: str, metrics_out: Path) -> dict[str, str]:
        return {
            "EPOCH_RUN_DIR": str(self.run_dir),
            "EPOCH_ROUND": round_label,
            "EPOCH_TRY": str(try_index),
            "EPOCH_PHASE": phase,
            "EPOCH_CANDIDATE_DIR": str(candidate_dir),
            "EPOCH_METRICS_OUT": str(metrics_out),
        }

    def evaluate_candidate(self, candidate_dir: str | Path, *,
                           round_label: str = "1", try_index: int = 0,
                           phase: str = "Phase2",
                           metrics_override: MetricsArtifact | None = None) -> EvalOutcome:
        """Produce the metrics artifact for a candidate directory.

        Replay drivers supply `metrics_override`, which skips command
        execution entirely but still populates the digest cache. In
        deterministic mode a digest hit returns the stored artifact with
        zero executions.
        """
        candidate_dir = Path(candidate_dir)
        digest = snapshot_digest(candidate_dir)

        if self.deterministic:
            stored = self.cache.get(digest)
            if stored is not None:
                consistent = None
                if metrics_override is not None:
                    consistent = canonicalize(stored) == canonicalize(metrics_override)
                return EvalOutcome(artifact=stored, digest=digest, cache_hit=True,
                                   executions=0, cache_consistent=consistent)

        if metrics_override is not None:
            artifact = metrics_override
        elif self.builtin_evaluator is not None:
            artifact = self.builtin_evaluator(candidate_dir)
        else:
            artifact = self._evaluate_via_commands(candidate_dir, round_label, try_index, phase)

        if self.deterministic:
            self.cache.put(digest, artifact)
        return EvalOutcome(artifact=artifact, digest=digest, cache_hit=False,
                           executions=self.executions)

    def _evaluate_via_commands(self, candidate_dir: Path, round_label: str,
                               try_index: int, phase: str) -> MetricsArtifact:
        if not self.eval_cmd:
            raise CommandError("no eval_cmd configured and no builtin evaluator bound")
        tmp_dir = self.run_dir / "tmp"
        tmp_dir.mkdir(parents=True, exist_ok=True)
        metrics_out = tmp_dir / f"metrics_{round_label.lower()}_{try_index}.json"
        if metrics_out.exists():
            metrics_out.unlink()
        env = self._base_env(candidate_dir, round_label, try_index, phase, metrics_out)
        log_dir = self.run_dir / "logs"

        if self.train_cmd:
            self.executions += 1
            result = run_command(self.train_cmd, env, candidate_dir,
                                 timeout_s=self.command_timeout_s, log_dir=log_dir,
                                 log_name=f"train_round_{round_label.lower()}_{try_index}")
            if result.exit_code != 0:
                raise CommandError(
                    f"train_cmd exited {result.exit_code}: {result.stderr.strip() or result.stdout.strip()}")

        self.executions += 1
        result = run_command(self.eval_cmd, env, candidate_dir,
                             timeout_s=self.command_timeout_s, log_dir=log_dir,
                             log_name=f"eval_round_{round_label.lower()}_{try_index}")
        if result.exit_code != 0:
            raise CommandError(
                f"eval_cmd exited {result.exit_code}: {result.stderr.strip() or result.stdout.strip()}")
        if not metrics_out.is_file():
            raise MissingMetricsError(
                f"eval_cmd exited 0 but wrote no metrics file at {metrics_out}")
        artifact = read_metrics(metrics_out)
        metrics_out.unlink()
        return artifact
