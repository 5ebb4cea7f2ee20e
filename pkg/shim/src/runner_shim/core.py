"""Run one untrusted solver file and report through a single JSON envelope.

The parent process trusts nothing about the solver, so every path out of
here ends the same way: one envelope object printed as the final stdout
line, exit code zero. Solver prints are captured in-process while the real
stdout file descriptor points at /dev/null, which keeps direct fd writes
and forked children from ever corrupting the envelope.

Envelope fields: ``status`` (ok | error | timeout_internal), ``value``
(decimal text or null), ``error_kind`` (syntax | runtime |
no_numeric_output | null), ``stdout`` (captured text, truncated), and
``wall_ms``. A numeric result is the remainder of the last ``RESULT:``
marker line, tried whole first and then as its leading number token.
"""

from __future__ import annotations

import io
import json
import os
import re
import resource
import signal
import sys
import time
from contextlib import redirect_stdout

STDOUT_CAP_BYTES = 1024 * 1024
RESULT_MARKER_RE = re.compile(r"RESULT:\s*(.*)")
LEADING_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
DEFAULT_TIMEOUT_S = 60.0

_MAIN_PID = os.getpid()


class _InternalTimeout(BaseException):
    """Raised by the alarm handler; BaseException so solvers cannot catch it."""


def parse_result(stdout: str) -> str | None:
    """Return the decimal text after the last ``RESULT:`` marker, if any.

    The text is returned verbatim when it parses as a float, so the parent
    sees exactly what the solver printed (``62.77`` stays ``62.77``).
    Trailing units are tolerated by falling back to the leading number.
    """
    matches = RESULT_MARKER_RE.findall(stdout)
    if not matches:
        return None
    tail = matches[-1].strip()
    try:
        float(tail)
    except ValueError:
        lead = LEADING_NUMBER_RE.match(tail)
        return lead.group(0) if lead else None
    return tail


def emit(
    status: str,
    value: str | None = None,
    error_kind: str | None = None,
    stdout: str = "",
    wall_ms: int = 0,
    saved_fd: int | None = None,
) -> int:
    """Print the envelope on the real stdout and return the exit code (0).

    Forked solver children inherit this code; they must die silently rather
    than emit a second envelope.
    """
    if os.getpid() != _MAIN_PID:
        os._exit(0)
    if saved_fd is not None:
        os.dup2(saved_fd, 1)
    if len(stdout) > STDOUT_CAP_BYTES:
        stdout = stdout[:STDOUT_CAP_BYTES]
    envelope = {
        "status": status,
        "value": value,
        "error_kind": error_kind,
        "stdout": stdout,
        "wall_ms": wall_ms,
    }
    os.write(1, ("\n" + json.dumps(envelope) + "\n").encode("utf-8", "replace"))
    return 0


def _apply_memory_limit() -> None:
    """Honor SOLVER_MEMORY_LIMIT_MB when the parent sets it; off by default."""
    raw = os.environ.get("SOLVER_MEMORY_LIMIT_MB")
    if not raw:
        return
    try:
        cap = int(float(raw)) * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (cap, cap))
    except (ValueError, OSError):
        pass


def _execute(code: object, timeout_s: float) -> tuple[str, str | None, str]:
    """Exec compiled solver code; returns (status, error_kind, captured stdout)."""
    buffer = io.StringIO()

    def on_alarm(signum: int, frame: object) -> None:
        raise _InternalTimeout()

    signal.signal(signal.SIGALRM, on_alarm)
    signal.setitimer(signal.ITIMER_REAL, timeout_s)
    status, error_kind = "ok", None
    try:
        with redirect_stdout(buffer):
            exec(code, {"__name__": "__main__"})
    except _InternalTimeout:
        status = "timeout_internal"
    except SystemExit:
        pass
    except BaseException as exc:
        status, error_kind = "error", "runtime"
        buffer.write(f"\n{type(exc).__name__}: {exc}")
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
    return status, error_kind, buffer.getvalue()


def main(argv: list[str] | None = None) -> int:
    """Entry point; never raises and never exits nonzero."""
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 1:
        return emit("error", error_kind="runtime", stdout="usage: runner_shim <solver_file>")
    started = time.monotonic()
    try:
        with open(args[0], encoding="utf-8") as handle:
            source = handle.read()
    except OSError as exc:
        return emit("error", error_kind="runtime", stdout=str(exc))
    try:
        code = compile(source, "solver.py", "exec")
    except (SyntaxError, ValueError) as exc:
        wall_ms = int((time.monotonic() - started) * 1000)
        return emit("error", error_kind="syntax", stdout=str(exc), wall_ms=wall_ms)

    timeout_s = float(os.environ.get("SOLVER_TIMEOUT_S", str(DEFAULT_TIMEOUT_S)))
    _apply_memory_limit()
    saved_fd = os.dup(1)
    devnull = os.open(os.devnull, os.O_WRONLY)
    os.dup2(devnull, 1)

    status, error_kind, captured = _execute(code, timeout_s)
    wall_ms = int((time.monotonic() - started) * 1000)
    if status == "ok":
        value = parse_result(captured)
        if value is None:
            return emit(
                "error",
                error_kind="no_numeric_output",
                stdout=captured,
                wall_ms=wall_ms,
                saved_fd=saved_fd,
            )
        return emit("ok", value=value, stdout=captured, wall_ms=wall_ms, saved_fd=saved_fd)
    return emit(status, error_kind=error_kind, stdout=captured, wall_ms=wall_ms, saved_fd=saved_fd)


if __name__ == "__main__":
    sys.exit(main())
