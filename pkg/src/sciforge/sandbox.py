"""Subprocess execution of generated solver programs.

Each solver runs in its own process group under a runner script that emits
exactly one JSON envelope line on stdout; this module only spawns, enforces
the wall-clock limit, and maps envelopes onto ``SolverOutcome``. The runner
itself is a separate component wired in through ``SandboxConfig.runner_path``
so tests can substitute a stub with the same contract.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shlex
import signal
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .errors import ConfigError

log = logging.getLogger(__name__)

SOLVER_STATUSES = ("value", "error", "timeout")
ERROR_KINDS = ("syntax", "runtime", "no_numeric_output")

STDOUT_CAP_BYTES = 1024 * 1024
# The envelope line sits at the END of the raw stream and may itself carry
# up to STDOUT_CAP_BYTES of captured solver output, so raw truncation keeps
# the tail and leaves headroom beyond the per-field cap.
RAW_CAP_BYTES = 2 * STDOUT_CAP_BYTES + 4096
# The runner self-cancels at the solver timeout and reports it in the
# envelope; the parent allows it this long to do so before SIGKILLing the
# process group. Total wall per solver stays under timeout + 2 s.
ENVELOPE_GRACE_S = 1.0
REAP_GRACE_S = 0.9

_RESULT_MARKER_RE = re.compile(r"RESULT:\s*(.*)")
_LEADING_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


@dataclass
class SolverOutcome:
    """What one solver run produced: a value, an error, or a timeout."""

    source: str
    status: str
    value: float | None = None
    error_kind: str | None = None
    stdout: str = ""
    wall_ms: int = 0

    def __post_init__(self) -> None:
        if self.status not in SOLVER_STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == "value" and self.value is None:
            raise ValueError("status 'value' requires a value")
        if self.status == "error":
            if self.error_kind not in ERROR_KINDS:
                raise ValueError(f"status 'error' requires an error_kind, got {self.error_kind!r}")
        elif self.error_kind is not None:
            raise ValueError(f"status {self.status!r} must not carry an error_kind")

    def to_dict(self) -> dict[str, Any]:
        return {
            "source": self.source,
            "status": self.status,
            "value": self.value,
            "error_kind": self.error_kind,
            "stdout": self.stdout,
            "wall_ms": self.wall_ms,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SolverOutcome":
        return cls(
            source=str(data["source"]),
            status=str(data["status"]),
            value=None if data.get("value") is None else float(data["value"]),
            error_kind=data.get("error_kind"),
            stdout=str(data.get("stdout", "")),
            wall_ms=int(data.get("wall_ms", 0)),
        )


@dataclass
class SandboxConfig:
    timeout_s: float = 60.0
    max_concurrent: int = 4
    interpreter_command: str = sys.executable
    runner_path: str = ""
    memory_limit_mb: int | None = None  # advisory; passed to the runner, off by default

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ConfigError(f"timeout_s must be positive: {self.timeout_s}")
        if self.max_concurrent <= 0:
            raise ConfigError(f"max_concurrent must be positive: {self.max_concurrent}")

    def argv(self, solver_file: str) -> list[str]:
        if not self.runner_path:
            raise ConfigError("sandbox.runner_path is not configured")
        return [*shlex.split(self.interpreter_command), self.runner_path, solver_file]


def parse_numeric(stdout: str) -> float | None:
    """Extract the decimal after the last ``RESULT:`` marker, if any.

    The remainder of the marker line is tried whole first, then its leading
    numeric token (so trailing units do not spoil the parse). Returns None
    when no marker exists or nothing numeric follows the last one.
    """
    matches = _RESULT_MARKER_RE.findall(stdout)
    if not matches:
        return None
    tail = matches[-1].strip()
    try:
        return float(tail)
    except ValueError:
        pass
    lead = _LEADING_NUMBER_RE.match(tail)
    if lead:
        try:
            return float(lead.group(0))
        except ValueError:
            return None
    return None


def _sanitized_env(workdir: str, cfg: SandboxConfig) -> dict[str, str]:
    """Minimal child environment: no credentials, proxies pointed at a dead end."""
    env = {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "HOME": workdir,
        "TMPDIR": workdir,
        "LC_ALL": "C.UTF-8",
        "PYTHONIOENCODING": "utf-8",
        "PYTHONNOUSERSITE": "1",
        "PYTHONDONTWRITEBYTECODE": "1",
        # best-effort network cutoff for proxy-aware clients
        "http_proxy": "http://127.0.0.1:9",
        "https_proxy": "http://127.0.0.1:9",
        "HTTP_PROXY": "http://127.0.0.1:9",
        "HTTPS_PROXY": "http://127.0.0.1:9",
        "no_proxy": "",
        "SOLVER_TIMEOUT_S": str(cfg.timeout_s),
    }
    if cfg.memory_limit_mb is not None:
        env["SOLVER_MEMORY_LIMIT_MB"] = str(cfg.memory_limit_mb)
    return env


def execute_solver(source: str, cfg: SandboxConfig) -> SolverOutcome:
    """Run one solver source under the configured runner and classify it.

    The child gets its own session (process group) so a timeout kill reaps
    grandchildren too. The runner's last stdout line must be a JSON envelope;
    anything else is treated as a runtime failure of the solver run. Captured
    output is truncated to 1 MB.
    """
    started = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="sciforge-solver-") as workdir:
        solver_file = Path(workdir) / "solver.py"
        solver_file.write_text(source, encoding="utf-8")
        argv = cfg.argv(str(solver_file))
        try:
            proc = subprocess.Popen(
                argv,
                cwd=workdir,
                env=_sanitized_env(workdir, cfg),
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                start_new_session=True,
            )
        except OSError as exc:
            raise ConfigError(f"cannot spawn solver runner {argv!r}: {exc}") from exc
        try:
            raw_stdout, _ = proc.communicate(timeout=cfg.timeout_s + ENVELOPE_GRACE_S)
        except subprocess.TimeoutExpired:
            _kill_group(proc)
            try:
                raw_stdout, _ = proc.communicate(timeout=REAP_GRACE_S)
            except subprocess.TimeoutExpired:
                proc.kill()
                raw_stdout = b""
            wall_ms = int((time.monotonic() - started) * 1000)
            return SolverOutcome(
                source=source,
                status="timeout",
                stdout=_decode(raw_stdout)[:STDOUT_CAP_BYTES],
                wall_ms=wall_ms,
            )
    wall_ms = int((time.monotonic() - started) * 1000)
    stdout = _decode(raw_stdout)
    return _outcome_from_envelope(source, stdout, wall_ms)


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def _decode(raw: bytes) -> str:
    if len(raw) > RAW_CAP_BYTES:
        raw = raw[-RAW_CAP_BYTES:]
    return raw.decode("utf-8", errors="replace")


def _outcome_from_envelope(source: str, stdout: str, wall_ms: int) -> SolverOutcome:
    envelope = _last_json_line(stdout)
    if envelope is None:
        log.warning("runner emitted no parseable envelope; treating as runtime failure")
        return SolverOutcome(
            source=source,
            status="error",
            error_kind="runtime",
            stdout=stdout[:STDOUT_CAP_BYTES],
            wall_ms=wall_ms,
        )
    status = envelope.get("status")
    captured = str(envelope.get("stdout", ""))[:STDOUT_CAP_BYTES]
    if status == "ok":
        try:
            value = float(envelope.get("value"))
        except (TypeError, ValueError):
            return SolverOutcome(
                source=source,
                status="error",
                error_kind="no_numeric_output",
                stdout=captured,
                wall_ms=wall_ms,
            )
        return SolverOutcome(
            source=source, status="value", value=value, stdout=captured, wall_ms=wall_ms
        )
    if status == "timeout_internal":
        return SolverOutcome(source=source, status="timeout", stdout=captured, wall_ms=wall_ms)
    if status == "error":
        kind = envelope.get("error_kind")
        if kind not in ERROR_KINDS:
            kind = "runtime"
        return SolverOutcome(
            source=source, status="error", error_kind=kind, stdout=captured, wall_ms=wall_ms
        )
    log.warning("runner envelope carried unknown status %r", status)
    return SolverOutcome(
        source=source, status="error", error_kind="runtime", stdout=captured, wall_ms=wall_ms
    )


def _last_json_line(stdout: str) -> dict[str, Any] | None:
    for line in reversed(stdout.splitlines()):
        line = line.strip()
        if not line:
            continue
        if line.startswith("{") and line.endswith("}"):
            try:
                parsed = json.loads(line)
            except json.JSONDecodeError:
                return None
            return parsed if isinstance(parsed, dict) else None
        return None
    return None


def run_solvers(sources: Sequence[str], cfg: SandboxConfig) -> list[SolverOutcome]:
    """Execute many solvers concurrently, preserving input order."""
    if not sources:
        return []
    workers = min(cfg.max_concurrent, len(sources))
    if workers == 1:
        return [execute_solver(src, cfg) for src in sources]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda src: execute_solver(src, cfg), sources))
