"""Solver runner shim: one process, one solver file, one JSON envelope."""

from pathlib import Path

from .core import STDOUT_CAP_BYTES, emit, main, parse_result

__all__ = ["STDOUT_CAP_BYTES", "emit", "main", "parse_result", "runner_file"]


def runner_file() -> str:
    """Path of the runnable module, for orchestrators that spawn by file path."""
    return str(Path(__file__).with_name("core.py"))
