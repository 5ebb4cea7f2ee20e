"""Command-line behavior: exit codes, option plumbing, and output files."""

from __future__ import annotations

import json
import subprocess
from pathlib import Path

import pytest
from click.testing import CliRunner

from conftest import CASSETTES_DIR, GOLDEN_DIR, ONTOLOGY, STUB_RUNNER
from sciforge.cli import main
from sciforge.store import read_jsonl


@pytest.fixture()
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture()
def config_file(tmp_path) -> Path:
    """Replay config pointing at the committed cassettes."""
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "mode": "replay",
                "cassette_dir": str(CASSETTES_DIR),
                "concept": {"hops": 2},
                "sandbox": {"runner_path": str(STUB_RUNNER), "timeout_s": 20.0},
            }
        )
    )
    return path


def golden(name: str) -> bytes:
    return (GOLDEN_DIR / name).read_bytes()


def invoke(runner: CliRunner, config_file: Path, *args: str):
    return runner.invoke(main, ["--config", str(config_file), *args])


def counts_from(result) -> dict:
    return json.loads(result.output.strip().splitlines()[-1])


def test_full_chain_through_cli(runner, config_file, tmp_path):
    seeds = tmp_path / "seeds.jsonl"
    result = invoke(
        runner, config_file, "seed", str(ONTOLOGY),
        "--out", str(seeds), "--run-dir", str(tmp_path / "r-seed"),
    )
    assert result.exit_code == 0, result.output
    assert seeds.read_bytes() == golden("seeds.jsonl")
    assert counts_from(result)["seed_kept"] == 2

    concept_out = tmp_path / "concept.jsonl"
    result = invoke(
        runner, config_file, "concept", str(seeds),
        "--out", str(concept_out), "--run-dir", str(tmp_path / "r-concept"),
    )
    assert result.exit_code == 0, result.output
    assert concept_out.read_bytes() == golden("concept.jsonl")

    compute_out = tmp_path / "compute.jsonl"
    result = invoke(
        runner, config_file, "compute", str(seeds),
        "--out", str(compute_out), "--run-dir", str(tmp_path / "r-compute"),
    )
    assert result.exit_code == 0, result.output
    assert compute_out.read_bytes() == golden("compute.jsonl")

    tasks = tmp_path / "tasks.jsonl"
    tasks.write_bytes(concept_out.read_bytes() + compute_out.read_bytes())
    post_out = tmp_path / "post.jsonl"
    result = invoke(
        runner, config_file, "postprocess", str(tasks),
        "--out", str(post_out), "--run-dir", str(tmp_path / "r-post"),
        "--quarantine", str(tmp_path / "quarantine.jsonl"),
    )
    assert result.exit_code == 0, result.output
    assert post_out.read_bytes() == golden("post.jsonl")
    assert (tmp_path / "quarantine.jsonl").read_bytes() == golden("quarantine.jsonl")

    release = tmp_path / "release.jsonl"
    result = runner.invoke(main, ["export", str(post_out), "--out", str(release)])
    assert result.exit_code == 0, result.output
    assert "wrote 2 records" in result.output
    assert release.read_bytes() == golden("release.jsonl")


def test_export_all_keeps_withheld_records(runner, tmp_path):
    post = tmp_path / "post.jsonl"
    post.write_bytes(golden("post.jsonl"))
    out = tmp_path / "all.jsonl"
    result = runner.invoke(main, ["export", str(post), "--out", str(out), "--all"])
    assert result.exit_code == 0, result.output
    assert "wrote 3 records" in result.output
    assert len(list(read_jsonl(out))) == 3


def test_hops_flag_overrides_config(runner, config_file, tmp_path):
    seeds = tmp_path / "seeds.jsonl"
    seeds.write_bytes(golden("seeds.jsonl"))
    out = tmp_path / "concept.jsonl"
    result = invoke(
        runner, config_file, "concept", str(seeds),
        "--out", str(out), "--run-dir", str(tmp_path / "run"), "--hops", "0",
    )
    assert result.exit_code == 0, result.output
    records = list(read_jsonl(out))
    assert records and all(r["body"]["hop_count"] == 0 for r in records)
    assert counts_from(result).get("concept_hops", 0) == 0


def test_replay_miss_exits_2(runner, config_file, tmp_path):
    result = runner.invoke(
        main,
        [
            "--config", str(config_file),
            "--cassette-dir", str(tmp_path / "empty"),
            "seed", str(ONTOLOGY),
            "--out", str(tmp_path / "s.jsonl"),
            "--run-dir", str(tmp_path / "run"),
        ],
    )
    assert result.exit_code == 2
    assert "replay miss:" in result.output


def test_config_errors_exit_1(runner, config_file, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    result = invoke(
        runner, config_file, "concept", str(empty),
        "--out", str(tmp_path / "o.jsonl"), "--run-dir", str(tmp_path / "run"),
    )
    assert result.exit_code == 1
    assert "error: no seeds" in result.output

    bad = tmp_path / "bad-config.json"
    bad.write_text(json.dumps({"mode": "replay", "warp_drive": True}))
    result = runner.invoke(main, ["--config", str(bad), "export", "x", "--out", "y"])
    assert result.exit_code == 1
    assert "error:" in result.output


def test_resume_via_cli(runner, config_file, tmp_path):
    seeds = tmp_path / "s.jsonl"
    run_dir = tmp_path / "run"
    result = invoke(
        runner, config_file, "seed", str(ONTOLOGY),
        "--out", str(seeds), "--run-dir", str(run_dir),
    )
    assert result.exit_code == 0, result.output

    result = runner.invoke(main, ["--config", str(config_file), "resume", str(run_dir)])
    assert result.exit_code == 0, result.output
    assert counts_from(result)["items_reused"] == 1
    assert seeds.read_bytes() == golden("seeds.jsonl")

    hollow = tmp_path / "hollow"
    hollow.mkdir()
    result = runner.invoke(main, ["--config", str(config_file), "resume", str(hollow)])
    assert result.exit_code == 1
    assert "manifest" in result.output


def test_audit_report_and_csv(runner, tmp_path):
    release = tmp_path / "release.jsonl"
    release.write_bytes(golden("release.jsonl"))
    post = tmp_path / "post.jsonl"
    post.write_bytes(golden("post.jsonl"))

    report_path = tmp_path / "report.json"
    csv_path = tmp_path / "neighbors.csv"
    result = runner.invoke(
        main,
        [
            "audit", f"release={release}", str(post),
            "--out", str(report_path), "--csv", str(csv_path),
        ],
    )
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text())
    names = {row["pair_name"] for row in report["intra"]}
    assert names == {"release", "post"}
    assert {row["pair_name"] for row in report["pairs"]} == {"release|post"}
    assert report["weights"] == {"embed": 0.7, "tfidf": 0.3}
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "pair,index,max_neighbor"
    assert len(lines) == 1 + len(list(read_jsonl(post)))

    result = runner.invoke(
        main, ["audit", str(tmp_path / "missing.jsonl"), "--out", str(report_path)]
    )
    assert result.exit_code == 1


def test_console_script_help():
    completed = subprocess.run(
        ["sciforge", "--help"], capture_output=True, text=True, timeout=30
    )
    assert completed.returncode == 0
    for command in ("seed", "concept", "compute", "postprocess", "resume", "export", "audit"):
        assert command in completed.stdout
