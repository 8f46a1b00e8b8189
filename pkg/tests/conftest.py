from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
TASKS_DIR = REPO_ROOT / "tasks"
TRACES_DIR = TASKS_DIR / "traces"

# Files excluded from byte-level determinism comparisons: wall-clock sidecar,
# lock file, command logs, append-only event log and transient scratch.
NON_CANONICAL = ("timestamps.json", ".lock", "events.log")


def canonical_artifact_bytes(run_dir: Path) -> dict[str, bytes]:
    out: dict[str, bytes] = {}
    for path in sorted(Path(run_dir).rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(run_dir).as_posix()
        if rel in NON_CANONICAL or rel.startswith(("logs/", "tmp/")):
            continue
        out[rel] = path.read_bytes()
    return out


@pytest.fixture
def workspace(tmp_path):
    ws = tmp_path / "projects"
    ws.mkdir()
    return ws


def spec_text(name: str) -> str:
    return (TASKS_DIR / name).read_text(encoding="utf-8")


def load_spec(name: str):
    from epoch.taskspec import parse_spec

    return parse_spec(spec_text(name))

