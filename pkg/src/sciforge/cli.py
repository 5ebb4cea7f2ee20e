"""Command-line entry points for the dataset pipelines."""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import click

from .audit import build_report
from .config import load_config
from .errors import ConfigError, ReplayMissError, SciforgeError
from .pipeline import (
    resume_run,
    run_postprocess,
    run_seed_generation,
    run_task_pipeline,
)
from .store import export_jsonl, read_jsonl

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_REPLAY_MISS = 2

log = logging.getLogger(__name__)


def _fatal_guard(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Map pipeline-fatal exceptions onto process exit codes.

    Per-item failures never raise this far; what does reach here is either a
    configuration problem (exit 1) or a replay-mode cassette miss (exit 2),
    both of which must stop the run.
    """

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except ReplayMissError as exc:
            click.echo(f"replay miss: {exc}", err=True)
            sys.exit(EXIT_REPLAY_MISS)
        except (ConfigError, SciforgeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_FATAL)

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON config file; defaults apply when omitted.")
@click.option("--cassette-dir", default=None, help="Override the cassette directory.")
@click.option("--mode", type=click.Choice(("live", "record", "replay")), default=None, help="Override the transport mode.")
@click.option("--workers", type=int, default=None, help="Override worker count.")
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG instead of INFO.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, cassette_dir: str | None, mode: str | None, workers: int | None, verbose: bool) -> None:
    """Agentic synthesis of grounded scientific question-answer datasets."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(config_path)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FATAL)
    if cassette_dir is not None:
        config.cassette_dir = cassette_dir
    if mode is not None:
        config.mode = mode
    if workers is not None:
        config.workers = workers
    ctx.obj = config


@main.command()
@click.argument("ontology", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(), help="Seed JSONL output path.")
@click.option("--run-dir", required=True, type=click.Path(), help="Run state directory.")
@click.pass_obj
@_fatal_guard
def seed(config: Any, ontology: str, out: str, run_dir: str) -> None:
    """Generate and score seed entities from an ontology file."""
    counts = run_seed_generation(config, ontology, out, run_dir)
    click.echo(json.dumps(counts, sort_keys=True))


@main.command()
@click.argument("seeds", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(), help="Task JSONL output path.")
@click.option("--run-dir", required=True, type=click.Path(), help="Run state directory.")
@click.option("--hops", type=int, default=None, help="Override augmentation hop count.")
@click.pass_obj
@_fatal_guard
def concept(config: Any, seeds: str, out: str, run_dir: str, hops: int | None) -> None:
    """Build multi-hop conceptual tasks from seed entities."""
    if hops is not None:
        config.concept.hops = hops
    counts = run_task_pipeline("concept", config, seeds, out, run_dir)
    click.echo(json.dumps(counts, sort_keys=True))


@main.command()
@click.argument("seeds", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(), help="Task JSONL output path.")
@click.option("--run-dir", required=True, type=click.Path(), help="Run state directory.")
@click.pass_obj
@_fatal_guard
def compute(config: Any, seeds: str, out: str, run_dir: str) -> None:
    """Build solver-verified computational tasks from seed entities."""
    counts = run_task_pipeline("compute", config, seeds, out, run_dir)
    click.echo(json.dumps(counts, sort_keys=True))


@main.command()
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(), help="Refined JSONL output path.")
@click.option("--run-dir", required=True, type=click.Path(), help="Run state directory.")
@click.option("--quarantine", type=click.Path(), default=None, help="Where undiagnosable records land (default: OUT.quarantine).")
@click.pass_obj
@_fatal_guard
def postprocess(config: Any, dataset: str, out: str, run_dir: str, quarantine: str | None) -> None:
    """Diagnose, refine, and re-diagnose every record in a dataset."""
    counts = run_postprocess(config, dataset, out, run_dir, quarantine_path=quarantine)
    click.echo(json.dumps(counts, sort_keys=True))


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.pass_obj
@_fatal_guard
def resume(config: Any, run_dir: str) -> None:
    """Finish an interrupted run from its checkpoints."""
    counts = resume_run(run_dir)
    click.echo(json.dumps(counts, sort_keys=True))


@main.command()
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(), help="Release JSONL output path.")
@click.option("--all", "keep_all", is_flag=True, help="Keep every record, not just release-eligible ones.")
@_fatal_guard
def export(dataset: str, out: str, keep_all: bool) -> None:
    """Write the release split of a postprocessed dataset."""
    written = export_jsonl(read_jsonl(dataset), out, release_only=not keep_all)
    click.echo(f"wrote {written} records to {out}")


@main.command()
@click.argument("datasets", nargs=-1, required=True)
@click.option("--out", required=True, type=click.Path(), help="Report JSON output path.")
@click.option("--csv", "csv_path", type=click.Path(), default=None, help="Optional per-question max-neighbor CSV.")
@click.pass_obj
@_fatal_guard
def audit(config: Any, datasets: tuple[str, ...], out: str, csv_path: str | None) -> None:
    """Similarity and distribution audit over one or more datasets.

    Each DATASET is a JSONL path, optionally prefixed ``name=`` to label the
    corpus in the report; unlabeled corpora use the file stem.
    """
    corpora = []
    for spec in datasets:
        name, _, path = spec.rpartition("=")
        path = path or spec
        name = name or Path(path).stem
        texts = [_record_text(r) for r in read_jsonl(path)]
        texts = [t for t in texts if t]
        if not texts:
            raise ConfigError(f"dataset {path} holds no question text")
        corpora.append((name, texts))
    report = build_report(corpora, config.audit, max_neighbor_csv=csv_path)
    out_file = Path(out)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    out_file.write_text(json.dumps(report, indent=1, ensure_ascii=False), encoding="utf-8")
    click.echo(f"wrote audit report to {out}")


def _record_text(record: dict[str, Any]) -> str:
    body = record.get("body", record)
    question = body.get("question", "")
    return question if isinstance(question, str) else ""


if __name__ == "__main__":
    main()
