"""Unit coverage for result parsing and envelope emission."""

from __future__ import annotations

import json
import os

import pytest

from runner_shim import STDOUT_CAP_BYTES, emit, parse_result, runner_file


@pytest.mark.parametrize(
    ("stdout", "expected"),
    [
        ("RESULT: 62.77", "62.77"),
        ("noise\nRESULT: 1\nRESULT: 2.5", "2.5"),
        ("RESULT: 12 units", "12"),
        ("RESULT: -3.5e-2 approx", "-3.5e-2"),
        ("RESULT: .5", ".5"),
        ("RESULT: abc", None),
        ("RESULT:", None),
        ("no marker here", None),
        ("", None),
    ],
)
def test_parse_result_variants(stdout, expected):
    assert parse_result(stdout) == expected


def test_runner_file_points_at_the_executable_module():
    path = runner_file()
    assert os.path.isfile(path)
    assert path.endswith("core.py")


def capture_emit(tmp_path, **kwargs) -> tuple[int, str]:
    """Call emit with fd 1 temporarily pointed at a scratch file."""
    sink = tmp_path / "emitted"
    write_fd = os.open(sink, os.O_WRONLY | os.O_CREAT)
    saved = os.dup(1)
    os.dup2(write_fd, 1)
    try:
        rc = emit(**kwargs)
    finally:
        os.dup2(saved, 1)
        os.close(saved)
        os.close(write_fd)
    return rc, sink.read_text(encoding="utf-8")


def test_emit_truncates_and_exits_zero(tmp_path):
    rc, raw = capture_emit(tmp_path, status="ok", value="1", stdout="x" * (STDOUT_CAP_BYTES + 9))
    assert rc == 0
    envelope = json.loads(raw.strip().splitlines()[-1])
    assert len(envelope["stdout"]) == STDOUT_CAP_BYTES
    assert envelope["value"] == "1"
    assert envelope["error_kind"] is None
