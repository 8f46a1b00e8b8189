import json
import os
import subprocess
import sys
from pathlib import Path

KIT_ROOT = Path(__file__).resolve().parent.parent
RULES_EVAL = KIT_ROOT / "rules_task" / "evaluate.py"
PROMPT_EVAL = KIT_ROOT / "prompt_task" / "evaluate.py"
DRIVERS = KIT_ROOT / "drivers"

PY = sys.executable


def run_eval(script: Path, candidate_dir: Path, metrics_out: Path,
             extra_env: dict | None = None) -> subprocess.CompletedProcess:
    env = dict(os.environ)
    env["EPOCH_CANDIDATE_DIR"] = str(candidate_dir)
    env["EPOCH_METRICS_OUT"] = str(metrics_out)
    if extra_env:
        env.update(extra_env)
    return subprocess.run([PY, str(script)], capture_output=True, text=True, env=env)


def run_driver(script: Path, request: dict | None,
               env: dict | None = None) -> subprocess.CompletedProcess:
    stdin = json.dumps(request) if request is not None else ""
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run([PY, str(script)], input=stdin, capture_output=True,
                          text=True, env=full_env)


def driver_request(role: str, round_index: int = 1, visible_paths=("data/train.json",)) -> dict:
    return {
        "protocol_version": 1,
        "role": role,
        "round": round_index,
        "try": 0,
        "goal": "improve the prompt",
        "accepted_summary": {},
        "visible_paths": list(visible_paths),
        "prior_reports": [],
        "constraints": {},
    }
