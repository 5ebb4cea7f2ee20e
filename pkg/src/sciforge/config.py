"""Run configuration: one JSON file mapped onto validated dataclasses.

Anything tunable lives here with a working default, so `--config` is
optional for replay runs. Credentials never appear in config files; live
transports read them from environment variables at call time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .audit import AuditConfig
from .backends import (
    DEFAULT_PAGE_BYTE_CAP,
    Backends,
    CassetteLibrary,
    LlmConfig,
    SearchHit,
    hashed_embedding_provider,
    live_fetch_provider,
    live_llm_provider,
    live_search_provider,
)
from .compute import DEFAULT_COMPUTE_QUERIES, DEFAULT_SCORE_FLOOR, EquivalenceConfig
from .concept import DEFAULT_CLAUSE_TEMPLATE, DEFAULT_SCOUT_QUERIES
from .errors import ConfigError, TransportError
from .postprocess import (
    DEFAULT_HINT_TEMPLATES,
    DEFAULT_MASK_DIRECTIVE,
    DEFAULT_MASK_PHRASE,
    DEFAULT_MASK_RATIO,
)
from .sandbox import SandboxConfig
from .seedgen import DEFAULT_PER_NODE, DEFAULT_THRESHOLDS as DEFAULT_SEED_THRESHOLDS

log = logging.getLogger(__name__)


@dataclass
class ConceptOptions:
    hops: int = 2
    scout_queries: tuple[str, ...] = DEFAULT_SCOUT_QUERIES
    clause_template: str = DEFAULT_CLAUSE_TEMPLATE
    search_top_k: int = 5
    anchor_retries: int = 2

    def __post_init__(self) -> None:
        if self.hops < 0:
            raise ConfigError(f"concept.hops must be >= 0: {self.hops}")
        if self.search_top_k <= 0:
            raise ConfigError(f"concept.search_top_k must be positive: {self.search_top_k}")


@dataclass
class ComputeOptions:
    scout_queries: tuple[str, ...] = DEFAULT_COMPUTE_QUERIES
    search_top_k: int = 5
    score_floor: float = DEFAULT_SCORE_FLOOR
    redesigns: int = 1
    tolerance: EquivalenceConfig = field(default_factory=EquivalenceConfig)

    def __post_init__(self) -> None:
        if self.search_top_k <= 0:
            raise ConfigError(f"compute.search_top_k must be positive: {self.search_top_k}")
        if self.redesigns < 0:
            raise ConfigError(f"compute.redesigns must be >= 0: {self.redesigns}")


@dataclass
class PostprocessOptions:
    mask_ratio: float = DEFAULT_MASK_RATIO
    mask_phrase: str = DEFAULT_MASK_PHRASE
    mask_directive: str = DEFAULT_MASK_DIRECTIVE
    hint_templates: tuple[str, ...] = DEFAULT_HINT_TEMPLATES

    def __post_init__(self) -> None:
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"postprocess.mask_ratio must be in [0, 1]: {self.mask_ratio}")


@dataclass
class SeedOptions:
    per_node: int = DEFAULT_PER_NODE
    thresholds: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_SEED_THRESHOLDS))

    def __post_init__(self) -> None:
        if self.per_node <= 0:
            raise ConfigError(f"seed.per_node must be positive: {self.per_node}")


@dataclass
class PipelineConfig:
    mode: str = "replay"
    cassette_dir: str = "cassettes"
    workers: int = 1
    rng_seed: int = 0
    prompts_dir: str | None = None
    llm: LlmConfig = field(default_factory=LlmConfig)
    llm_endpoint: str = ""
    search_endpoint: str = ""
    seed: SeedOptions = field(default_factory=SeedOptions)
    concept: ConceptOptions = field(default_factory=ConceptOptions)
    compute: ComputeOptions = field(default_factory=ComputeOptions)
    postprocess: PostprocessOptions = field(default_factory=PostprocessOptions)
    sandbox: SandboxConfig = field(default_factory=SandboxConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)

    def __post_init__(self) -> None:
        if self.mode not in ("record", "replay", "live"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.workers <= 0:
            raise ConfigError(f"workers must be positive: {self.workers}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "cassette_dir": self.cassette_dir,
            "workers": self.workers,
            "rng_seed": self.rng_seed,
            "prompts_dir": self.prompts_dir,
            "llm": self.llm.payload(),
            "llm_endpoint": self.llm_endpoint,
            "search_endpoint": self.search_endpoint,
            "seed": {"per_node": self.seed.per_node, "thresholds": dict(self.seed.thresholds)},
            "concept": {
                "hops": self.concept.hops,
                "scout_queries": list(self.concept.scout_queries),
                "clause_template": self.concept.clause_template,
                "search_top_k": self.concept.search_top_k,
                "anchor_retries": self.concept.anchor_retries,
            },
            "compute": {
                "scout_queries": list(self.compute.scout_queries),
                "search_top_k": self.compute.search_top_k,
                "score_floor": self.compute.score_floor,
                "redesigns": self.compute.redesigns,
                "tolerance": {
                    "abs_tol": self.compute.tolerance.abs_tol,
                    "rel_tol": self.compute.tolerance.rel_tol,
                },
            },
            "postprocess": {
                "mask_ratio": self.postprocess.mask_ratio,
                "mask_phrase": self.postprocess.mask_phrase,
                "mask_directive": self.postprocess.mask_directive,
                "hint_templates": list(self.postprocess.hint_templates),
            },
            "sandbox": {
                "timeout_s": self.sandbox.timeout_s,
                "max_concurrent": self.sandbox.max_concurrent,
                "interpreter_command": self.sandbox.interpreter_command,
                "runner_path": self.sandbox.runner_path,
                "memory_limit_mb": self.sandbox.memory_limit_mb,
            },
            "audit": {
                "weight_embed": self.audit.weight_embed,
                "weight_tfidf": self.audit.weight_tfidf,
                "thresholds": list(self.audit.thresholds),
                "domain_keywords": {k: list(v) for k, v in self.audit.domain_keywords.items()},
                "gazetteers": {k: list(v) for k, v in self.audit.gazetteers.items()},
                "embed_dim": self.audit.embed_dim,
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PipelineConfig":
        known = {
            "mode",
            "cassette_dir",
            "workers",
            "rng_seed",
            "prompts_dir",
            "llm",
            "llm_endpoint",
            "search_endpoint",
            "seed",
            "concept",
            "compute",
            "postprocess",
            "sandbox",
            "audit",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            llm_data = dict(data.get("llm", {}))
            seed_data = dict(data.get("seed", {}))
            concept_data = dict(data.get("concept", {}))
            compute_data = dict(data.get("compute", {}))
            post_data = dict(data.get("postprocess", {}))
            sandbox_data = dict(data.get("sandbox", {}))
            tolerance_data = dict(compute_data.pop("tolerance", {}))
            if "scout_queries" in concept_data:
                concept_data["scout_queries"] = tuple(concept_data["scout_queries"])
            if "scout_queries" in compute_data:
                compute_data["scout_queries"] = tuple(compute_data["scout_queries"])
            if "hint_templates" in post_data:
                post_data["hint_templates"] = tuple(post_data["hint_templates"])
            return cls(
                mode=data.get("mode", "replay"),
                cassette_dir=data.get("cassette_dir", "cassettes"),
                workers=int(data.get("workers", 1)),
                rng_seed=int(data.get("rng_seed", 0)),
                prompts_dir=data.get("prompts_dir"),
                llm=LlmConfig(**llm_data),
                llm_endpoint=str(data.get("llm_endpoint", "")),
                search_endpoint=str(data.get("search_endpoint", "")),
                seed=SeedOptions(**seed_data),
                concept=ConceptOptions(**concept_data),
                compute=ComputeOptions(
                    **compute_data, tolerance=EquivalenceConfig(**tolerance_data)
                ),
                postprocess=PostprocessOptions(**post_data),
                sandbox=SandboxConfig(**sandbox_data),
                audit=AuditConfig.from_dict(dict(data.get("audit", {}))),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: Path | str | None) -> PipelineConfig:
    """Load and validate a config file; None means all defaults."""
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unreadable config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return PipelineConfig.from_dict(data)


def _unconfigured_llm(prompt: str, cfg: LlmConfig) -> str:
    raise TransportError("no live LLM provider configured (set llm_endpoint)")


def _unconfigured_search(query: str, top_k: int) -> list[SearchHit]:
    raise TransportError("no live search provider configured (set search_endpoint)")


def make_backends(
    config: PipelineConfig,
    namespace: str,
    *,
    llm_provider: Any = None,
    search_provider: Any = None,
    fetch_provider: Any = None,
) -> Backends:
    """Build the backend bundle for one namespace from the run config.

    Provider overrides are for tests and fixture recording; otherwise live
    providers come from the configured endpoints and are only ever invoked
    outside replay mode.
    """
    if llm_provider is None:
        llm_provider = (
            live_llm_provider(config.llm_endpoint) if config.llm_endpoint else _unconfigured_llm
        )
    if search_provider is None:
        search_provider = (
            live_search_provider(config.search_endpoint)
            if config.search_endpoint
            else _unconfigured_search
        )
    if fetch_provider is None:
        fetch_provider = live_fetch_provider()
    return Backends(
        library=CassetteLibrary(config.cassette_dir, config.mode),
        namespace=namespace,
        llm_provider=llm_provider,
        search_provider=search_provider,
        fetch_provider=fetch_provider,
        embed_provider=hashed_embedding_provider(config.audit.embed_dim),
        llm_config=config.llm,
        page_byte_cap=DEFAULT_PAGE_BYTE_CAP,
    )
