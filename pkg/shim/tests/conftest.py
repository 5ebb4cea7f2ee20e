"""Harness for black-box shim runs: spawn, capture, and pick the envelope."""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

SRC_DIR = Path(__file__).resolve().parent.parent / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

import runner_shim  # noqa: E402

ENVELOPE_KEYS = {"status", "value", "error_kind", "stdout", "wall_ms"}


def run_shim(
    tmp_path: Path,
    source: str,
    *,
    timeout_s: float = 30.0,
    env: dict[str, str] | None = None,
    by_module: bool = False,
    argv_tail: list[str] | None = None,
) -> subprocess.CompletedProcess:
    solver = tmp_path / "solver.py"
    solver.write_text(source, encoding="utf-8")
    if by_module:
        argv = [sys.executable, "-m", "runner_shim", str(solver)]
    else:
        argv = [sys.executable, runner_shim.runner_file(), str(solver)]
    if argv_tail is not None:
        argv = argv[:-1] + argv_tail
    merged = {
        "PATH": "/usr/bin:/bin",
        "PYTHONPATH": str(SRC_DIR),
        "SOLVER_TIMEOUT_S": str(timeout_s),
        **(env or {}),
    }
    return subprocess.run(
        argv,
        capture_output=True,
        text=True,
        env=merged,
        cwd=tmp_path,
        timeout=timeout_s + 10.0,
    )


def envelope_lines(stdout: str) -> list[dict]:
    found = []
    for line in stdout.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            parsed = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(parsed, dict) and set(parsed) == ENVELOPE_KEYS:
            found.append(parsed)
    return found


def last_envelope(completed: subprocess.CompletedProcess) -> dict:
    """The contract: exit 0, final stdout line is the one and only envelope."""
    assert completed.returncode == 0, completed.stderr
    lines = [line for line in completed.stdout.splitlines() if line.strip()]
    assert lines, "no stdout at all"
    envelope = json.loads(lines[-1])
    assert set(envelope) == ENVELOPE_KEYS
    assert envelope_lines(completed.stdout) == [envelope]
    assert isinstance(envelope["wall_ms"], int) and envelope["wall_ms"] >= 0
    return envelope


@pytest.fixture()
def shim(tmp_path):
    def run(source: str, **kwargs) -> dict:
        return last_envelope(run_shim(tmp_path, source, **kwargs))

    return run
