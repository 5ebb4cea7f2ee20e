"""End-to-end pipeline runs: per-item state machines over checkpoints.

Each work item (ontology node, seed, or dataset record) moves through named
stages; a checkpoint lands after every transition, so a killed run resumes
from the last completed stage with the same cassette namespaces and produces
byte-identical output. Item failures are logged and counted, never fatal;
the two exceptions are configuration problems and replay misses, which
abort the run by design.
"""

from __future__ import annotations

import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .backends import canonical_json
from .compute import (
    ComputationalTask,
    FilterDecision,
    ModelSpec,
    UrlAssessment,
    assess_urls,
    compose_scenario_question,
    extract_model_spec,
    scout_sources,
    select_model_source,
    verify_answer,
)
from .concept import ConceptualTask, augment_n_hops, curate_base_question
from .config import PipelineConfig, make_backends
from .errors import ConfigError, DiagnosisError, ReplayMissError, SciforgeError
from .postprocess import diagnose, refine_computational, refine_conceptual
from .prompts import PromptLibrary
from .seedgen import (
    OntologyNode,
    SeedEntity,
    filter_seeds,
    generate_candidates,
    load_ontology,
    score_entities,
)
from .store import (
    Checkpoint,
    CheckpointStore,
    OrderedWriter,
    RunClock,
    RunLog,
    RunManifest,
    canonical_line,
    read_jsonl,
    read_manifest,
    slug,
    write_manifest,
)

log = logging.getLogger(__name__)

RUN_KINDS = ("seed", "concept", "compute", "postprocess")


@dataclass
class RunHooks:
    """Observation points for tests; ``on_stage`` fires after each checkpoint."""

    on_stage: Callable[[str, str], None] | None = None

    def stage(self, item_key: str, stage: str) -> None:
        if self.on_stage is not None:
            self.on_stage(item_key, stage)


@dataclass
class RunContext:
    config: PipelineConfig
    prompts: PromptLibrary
    store: CheckpointStore
    run_log: RunLog
    clock: RunClock
    hooks: RunHooks
    rng: random.Random
    providers: dict[str, Any]

    def backends(self, namespace: str):
        return make_backends(self.config, namespace, **self.providers)


class _StageTimer:
    """Accrues wall time into the run log, split at each stage boundary."""

    def __init__(self, run_log: RunLog, prefix: str) -> None:
        self._run_log = run_log
        self._prefix = prefix
        self._last = time.monotonic()

    def mark(self, stage: str) -> None:
        now = time.monotonic()
        self._run_log.add_time(f"{self._prefix}.{stage}", now - self._last)
        self._last = now


def start_run(
    kind: str,
    items: list[dict[str, Any]],
    config: PipelineConfig,
    out_path: Path | str,
    run_dir: Path | str,
    *,
    extra: dict[str, Any] | None = None,
) -> RunManifest:
    """Create a run directory with its manifest; refuses to clobber one."""
    if kind not in RUN_KINDS:
        raise ConfigError(f"unknown run kind {kind!r}")
    run_dir = Path(run_dir)
    if (run_dir / "run.json").exists():
        raise ConfigError(f"run directory {run_dir} already holds a run; use resume")
    clock = RunClock(deterministic=config.mode == "replay")
    manifest = RunManifest(
        kind=kind,
        out_path=str(out_path),
        items=items,
        config=config.to_dict(),
        created_at=clock.timestamp(),
        extra=extra or {},
    )
    write_manifest(run_dir, manifest)
    return manifest


def execute_run(
    run_dir: Path | str,
    *,
    hooks: RunHooks | None = None,
    providers: dict[str, Any] | None = None,
) -> dict[str, int]:
    """Process every item in the manifest, reusing completed checkpoints.

    The output file is rewritten from scratch in input order on every call:
    terminal checkpoints contribute their stored lines without recompute, so
    resuming after a crash yields the same bytes as one uninterrupted run.
    Returns the run counters.
    """
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    config = PipelineConfig.from_dict(manifest.config)
    ctx = RunContext(
        config=config,
        prompts=PromptLibrary(config.prompts_dir),
        store=CheckpointStore(run_dir / "checkpoints"),
        run_log=RunLog(run_dir / "run_log.json", mode=config.mode, rng_seed=config.rng_seed),
        clock=RunClock(deterministic=config.mode == "replay"),
        hooks=hooks or RunHooks(),
        rng=random.Random(config.rng_seed),
        providers=providers or {},
    )
    worker = _WORKERS[manifest.kind]

    channels = {"out": OrderedWriter(manifest.out_path)}
    if manifest.kind == "postprocess":
        quarantine = manifest.extra.get("quarantine_path") or str(manifest.out_path) + ".quarantine"
        channels["quarantine"] = OrderedWriter(quarantine)

    def run_item(index: int, item: dict[str, Any]) -> dict[str, list[str]]:
        key = _item_key(manifest.kind, index, item)
        done = ctx.store.load(key)
        if done is not None and done.stage in ("done", "failed"):
            ctx.run_log.bump("items_reused")
            return _lines_from_blob(done.state_blob)
        try:
            lines = worker(item, key, ctx)
        except (ReplayMissError, ConfigError):
            raise
        except Exception as exc:  # item-level isolation: log, count, move on
            log.warning("item %s failed: %s", key, exc, exc_info=not isinstance(exc, SciforgeError))
            ctx.run_log.bump("items_failed")
            blob = json.dumps({"out": []})
            ctx.store.save(
                Checkpoint(manifest.kind, key, "failed", blob, _namespace(manifest.kind, key))
            )
            ctx.hooks.stage(key, "failed")
            return {"out": []}
        ctx.run_log.bump("items_succeeded")
        return lines

    try:
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                futures = [
                    pool.submit(run_item, index, item)
                    for index, item in enumerate(manifest.items)
                ]
                for index, future in enumerate(futures):
                    _flush(channels, index, future.result())
        else:
            for index, item in enumerate(manifest.items):
                _flush(channels, index, run_item(index, item))
    finally:
        for writer in channels.values():
            writer.close()
        ctx.run_log.bump("items_total", len(manifest.items))
        ctx.run_log.write()
    counts = ctx.run_log.counts()
    log.info("run complete: %s", counts)
    return counts


def _flush(channels: dict[str, OrderedWriter], index: int, lines: dict[str, list[str]]) -> None:
    for channel, writer in channels.items():
        writer.complete(index, lines.get(channel, []))


def _item_key(kind: str, index: int, item: dict[str, Any]) -> str:
    if kind == "seed":
        return "node:" + "/".join(item["path"])
    if kind in ("concept", "compute"):
        return item["name"]
    return f"rec{index:05d}"


def _namespace(kind: str, key: str) -> str:
    return f"{kind}/{slug(key)}"


def _lines_from_blob(blob: str) -> dict[str, list[str]]:
    try:
        data = json.loads(blob)
    except json.JSONDecodeError:
        return {"out": []}
    if isinstance(data, dict) and "out" in data:
        return {k: list(v) for k, v in data.items() if isinstance(v, list)}
    return {"out": []}


def _finish(
    ctx: RunContext, kind: str, key: str, ns: str, lines: dict[str, list[str]]
) -> dict[str, list[str]]:
    ctx.store.save(Checkpoint(kind, key, "done", json.dumps(lines, ensure_ascii=False), ns))
    ctx.hooks.stage(key, "done")
    return lines


def _seed_worker(item: dict[str, Any], key: str, ctx: RunContext) -> dict[str, list[str]]:
    node = OntologyNode(
        domain=str(item["domain"]),
        path=[str(p) for p in item["path"]],
        annotation=str(item.get("annotation", "")),
    )
    ns = _namespace("seed", key)
    backends = ctx.backends(ns)
    timer = _StageTimer(ctx.run_log, "seed")
    candidates = generate_candidates(node, backends, ctx.prompts, count=ctx.config.seed.per_node)
    ctx.run_log.bump("seed_candidates", len(candidates))
    timer.mark("candidates")
    scored = score_entities(candidates, backends, ctx.prompts)
    kept = filter_seeds(scored, ctx.config.seed.thresholds)
    ctx.run_log.bump("seed_kept", len(kept))
    timer.mark("scored")
    lines = [canonical_line(s.to_dict()) for s in kept]
    return _finish(ctx, "seed", key, ns, {"out": lines})


def _concept_worker(item: dict[str, Any], key: str, ctx: RunContext) -> dict[str, list[str]]:
    seed = SeedEntity.from_dict(item)
    ns = _namespace("concept", key)
    backends = ctx.backends(ns)
    cfg = ctx.config.concept
    timer = _StageTimer(ctx.run_log, "concept")

    task: ConceptualTask | None = None
    checkpoint = ctx.store.load(key)
    if checkpoint is not None and checkpoint.stage.startswith(("base", "hop")):
        task = ConceptualTask.from_dict(json.loads(checkpoint.state_blob))
        log.info("resuming %s from stage %s", key, checkpoint.stage)

    if task is None:
        base_backends = backends.for_namespace(f"{ns}/base")
        task = curate_base_question(
            seed,
            base_backends,
            ctx.prompts,
            scout_queries=cfg.scout_queries,
            search_top_k=cfg.search_top_k,
        )
        ctx.store.save(Checkpoint("concept", key, "base", canonical_json(task.to_dict()), ns))
        ctx.hooks.stage(key, "base")
        ctx.run_log.bump("concept_base")
        timer.mark("base")

    remaining = cfg.hops - task.hop_count
    if remaining > 0:

        def on_hop(current: ConceptualTask) -> None:
            stage = f"hop{current.hop_count}"
            ctx.store.save(
                Checkpoint("concept", key, stage, canonical_json(current.to_dict()), ns)
            )
            ctx.hooks.stage(key, stage)
            ctx.run_log.bump("concept_hops")
            timer.mark(stage)

        task = augment_n_hops(
            task,
            remaining,
            backends,
            ctx.prompts,
            clause_template=cfg.clause_template,
            search_top_k=cfg.search_top_k,
            retries=cfg.anchor_retries,
            on_hop=on_hop,
        )

    record = {
        "record_type": "conceptual",
        "body": task.to_dict(),
        "provenance": {
            "seed": seed.name,
            "cassette_namespace": ns,
            "verdicts": {},
            "timestamps": {"created": ctx.clock.timestamp()},
        },
    }
    return _finish(ctx, "concept", key, ns, {"out": [canonical_line(record)]})


def _compute_worker(item: dict[str, Any], key: str, ctx: RunContext) -> dict[str, list[str]]:
    seed = SeedEntity.from_dict(item)
    ns = _namespace("compute", key)
    backends = ctx.backends(ns)
    cfg = ctx.config.compute
    timer = _StageTimer(ctx.run_log, "compute")

    chosen: UrlAssessment | None = None
    spec: ModelSpec | None = None
    task: ComputationalTask | None = None
    decision: FilterDecision | None = None

    checkpoint = ctx.store.load(key)
    if checkpoint is not None:
        blob = json.loads(checkpoint.state_blob)
        if checkpoint.stage == "assessed":
            chosen = UrlAssessment.from_dict(blob)
        elif checkpoint.stage == "extracted":
            spec = ModelSpec.from_dict(blob)
        elif checkpoint.stage == "composed":
            task = ComputationalTask.from_dict(blob)
        elif checkpoint.stage == "verified":
            task = ComputationalTask.from_dict(blob["task"])
            decision = FilterDecision(**blob["decision"])
        if checkpoint.stage in ("assessed", "extracted", "composed", "verified"):
            log.info("resuming %s from stage %s", key, checkpoint.stage)

    def save(stage: str, payload: Any) -> None:
        ctx.store.save(Checkpoint("compute", key, stage, canonical_json(payload), ns))
        ctx.hooks.stage(key, stage)
        ctx.run_log.bump(f"compute_{stage}")
        timer.mark(stage)

    if chosen is None and spec is None and task is None:
        hits = scout_sources(
            seed, backends, queries=cfg.scout_queries, search_top_k=cfg.search_top_k
        )
        assessments = assess_urls(hits, seed, backends, ctx.prompts)
        chosen = select_model_source(assessments, score_floor=cfg.score_floor)
        save("assessed", chosen.to_dict())

    if spec is None and task is None:
        assert chosen is not None
        spec = extract_model_spec(chosen, seed, backends, ctx.prompts)
        save("extracted", spec.to_dict())

    if task is None:
        assert spec is not None
        task = compose_scenario_question(spec, seed, backends, ctx.prompts)
        save("composed", task.to_dict())

    if decision is None:
        task, decision = verify_answer(
            task,
            backends,
            ctx.prompts,
            ctx.config.sandbox,
            tol=cfg.tolerance,
            redesigns=cfg.redesigns,
        )
        if ctx.clock.deterministic:
            for outcome in task.solver_record:
                outcome.wall_ms = 0  # timings are meaningless under replay
        save("verified", {"task": task.to_dict(), "decision": decision.to_dict()})

    if decision.verdict != "accept":
        ctx.run_log.bump(f"compute_rejected_{decision.verdict}")
        log.info("seed %s produced no task: %s", key, decision.verdict)
        return _finish(ctx, "compute", key, ns, {"out": []})

    record = {
        "record_type": "computational",
        "body": task.to_dict(),
        "provenance": {
            "seed": seed.name,
            "cassette_namespace": ns,
            "verdicts": {"filter": decision.to_dict()},
            "timestamps": {"created": ctx.clock.timestamp()},
        },
    }
    ctx.run_log.bump("compute_accepted")
    return _finish(ctx, "compute", key, ns, {"out": [canonical_line(record)]})


def _postprocess_worker(item: dict[str, Any], key: str, ctx: RunContext) -> dict[str, list[str]]:
    ns = _namespace("postprocess", key)
    backends = ctx.backends(ns)
    record_type = item.get("record_type")
    body = item.get("body", {})
    opts = ctx.config.postprocess

    try:
        if record_type == "conceptual":
            task = ConceptualTask.from_dict(body)
            initial = diagnose(task, backends, ctx.prompts)
            refined_task, final = refine_conceptual(task, backends, ctx.prompts)
            refined_body = refined_task.to_dict()
        elif record_type == "computational":
            comp = ComputationalTask.from_dict(body)
            initial = diagnose(comp, backends, ctx.prompts)
            refined = refine_computational(
                comp,
                mask_ratio=opts.mask_ratio,
                mask_phrase=opts.mask_phrase,
                mask_directive=opts.mask_directive,
                hint_templates=opts.hint_templates,
            )
            final = diagnose(refined, backends, ctx.prompts)
            refined_body = refined.to_dict()
        else:
            raise DiagnosisError(f"record {key} has unknown record_type {record_type!r}")
    except DiagnosisError as exc:
        log.warning("quarantining %s: %s", key, exc)
        ctx.run_log.bump("quarantined")
        quarantined = dict(item)
        provenance = dict(quarantined.get("provenance", {}))
        provenance["quarantine_reason"] = str(exc)
        quarantined["provenance"] = provenance
        return _finish(ctx, "postprocess", key, ns, {"out": [], "quarantine": [canonical_line(quarantined)]})

    provenance = dict(item.get("provenance", {}))
    verdicts = dict(provenance.get("verdicts", {}))
    verdicts["initial"] = initial.to_dict()
    verdicts["final"] = final.to_dict()
    provenance["verdicts"] = verdicts
    timestamps = dict(provenance.get("timestamps", {}))
    timestamps["postprocessed"] = ctx.clock.timestamp()
    provenance["timestamps"] = timestamps
    if final.release_eligible:
        ctx.run_log.bump("release_eligible")
    out_record = {"record_type": record_type, "body": refined_body, "provenance": provenance}
    return _finish(ctx, "postprocess", key, ns, {"out": [canonical_line(out_record)], "quarantine": []})


_WORKERS: dict[str, Callable[[dict[str, Any], str, RunContext], dict[str, list[str]]]] = {
    "seed": _seed_worker,
    "concept": _concept_worker,
    "compute": _compute_worker,
    "postprocess": _postprocess_worker,
}


def run_seed_generation(
    config: PipelineConfig,
    ontology_path: Path | str,
    out_path: Path | str,
    run_dir: Path | str,
    **kwargs: Any,
) -> dict[str, int]:
    nodes = load_ontology(ontology_path)
    items = [
        {"domain": n.domain, "path": n.path, "annotation": n.annotation} for n in nodes
    ]
    start_run("seed", items, config, out_path, run_dir)
    return execute_run(run_dir, **kwargs)


def run_task_pipeline(
    kind: str,
    config: PipelineConfig,
    seeds_path: Path | str,
    out_path: Path | str,
    run_dir: Path | str,
    **kwargs: Any,
) -> dict[str, int]:
    if kind not in ("concept", "compute"):
        raise ConfigError(f"run_task_pipeline only handles concept/compute, got {kind!r}")
    items = [SeedEntity.from_dict(row).to_dict() for row in read_jsonl(seeds_path)]
    if not items:
        raise ConfigError(f"no seeds found in {seeds_path}")
    start_run(kind, items, config, out_path, run_dir)
    return execute_run(run_dir, **kwargs)


def run_postprocess(
    config: PipelineConfig,
    dataset_path: Path | str,
    out_path: Path | str,
    run_dir: Path | str,
    *,
    quarantine_path: Path | str | None = None,
    **kwargs: Any,
) -> dict[str, int]:
    items = list(read_jsonl(dataset_path))
    if not items:
        raise ConfigError(f"no records found in {dataset_path}")
    extra = {"quarantine_path": str(quarantine_path) if quarantine_path else ""}
    start_run("postprocess", items, config, out_path, run_dir, extra=extra)
    return execute_run(run_dir, **kwargs)


def resume_run(run_dir: Path | str, **kwargs: Any) -> dict[str, int]:
    """Finish an interrupted run from its manifest and checkpoints."""
    manifest = read_manifest(run_dir)
    log.info("resuming %s run with %d items", manifest.kind, len(manifest.items))
    return execute_run(run_dir, **kwargs)
