"""Seed entity generation, scoring, and threshold filtering.

Seeds come from an ontology pool (domain, node path, annotation). For each
node the model proposes candidate entities; a judge scores each candidate on
frontier relevance, concreteness, and specificity; only entities clearing
every threshold survive.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .backends import Backends
from .errors import ConfigError, MissingMetricError
from .judge import clamp_score, request_json
from .prompts import PromptLibrary

log = logging.getLogger(__name__)

SEED_METRICS = ("frontier_relevance", "concreteness", "specificity")
DEFAULT_THRESHOLDS = {"frontier_relevance": 6.0, "concreteness": 6.0, "specificity": 6.0}
DEFAULT_PER_NODE = 10


@dataclass
class OntologyNode:
    domain: str
    path: list[str]
    annotation: str = ""

    def path_text(self) -> str:
        return " / ".join(self.path)


@dataclass
class SeedEntity:
    """One candidate study subject, optionally scored."""

    name: str
    domain: str
    ontology_path: list[str]
    scores: dict[str, float] | None = None

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("seed entity name must be non-empty")
        if not self.ontology_path:
            raise ValueError("seed entity needs a non-empty ontology path")
        if self.scores is not None:
            for metric, value in self.scores.items():
                if not 0.0 <= value <= 10.0:
                    raise ValueError(f"score {metric}={value} outside [0, 10]")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "domain": self.domain,
            "ontology_path": list(self.ontology_path),
        }
        if self.scores is not None:
            out["scores"] = {m: self.scores[m] for m in SEED_METRICS if m in self.scores}
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SeedEntity":
        return cls(
            name=data["name"],
            domain=data.get("domain", ""),
            ontology_path=list(data["ontology_path"]),
            scores=dict(data["scores"]) if data.get("scores") is not None else None,
        )


def load_ontology(path: Path | str) -> list[OntologyNode]:
    """Read an ontology pool file: a JSON array of node objects."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unreadable ontology file {path}: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"ontology file {path} must hold a non-empty JSON array")
    nodes = []
    for item in raw:
        try:
            nodes.append(
                OntologyNode(
                    domain=str(item["domain"]),
                    path=[str(p) for p in item["path"]],
                    annotation=str(item.get("annotation", "")),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed ontology node {item!r}: {exc}") from exc
    return nodes


def generate_candidates(
    node: OntologyNode,
    backends: Backends,
    prompts: PromptLibrary,
    count: int = DEFAULT_PER_NODE,
) -> list[SeedEntity]:
    """Propose up to ``count`` distinct entities for one ontology node.

    Names are deduplicated case-insensitively, order of first appearance
    kept, and each seed carries the node's path for provenance.
    """
    if count <= 0:
        raise ValueError(f"count must be positive: {count}")
    prompt = prompts.render(
        "seed_candidates",
        domain=node.domain,
        path=node.path_text(),
        annotation=node.annotation or "(none)",
        count=count,
    )

    def check(data: Any) -> list[str]:
        if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
            raise ValueError("expected a JSON array of strings")
        names = [x.strip() for x in data if x.strip()]
        if not names:
            raise ValueError("candidate list is empty")
        return names

    names = request_json(backends, prompt, check=check, label="seed candidates")
    seen: set[str] = set()
    seeds: list[SeedEntity] = []
    for name in names:
        folded = name.casefold()
        if folded in seen:
            continue
        seen.add(folded)
        seeds.append(SeedEntity(name=name, domain=node.domain, ontology_path=list(node.path)))
        if len(seeds) == count:
            break
    return seeds


def score_entity(seed: SeedEntity, backends: Backends, prompts: PromptLibrary) -> SeedEntity:
    """Judge one entity on the three seed metrics; scores clamp into [0, 10]."""
    prompt = prompts.render(
        "seed_score", name=seed.name, domain=seed.domain, path=" / ".join(seed.ontology_path)
    )
    data = request_json(backends, prompt, check=_check_object, label="seed score")
    scores: dict[str, float] = {}
    for metric in SEED_METRICS:
        if metric not in data:
            raise MissingMetricError(metric)
        scores[metric] = clamp_score(data[metric])
    return SeedEntity(
        name=seed.name, domain=seed.domain, ontology_path=list(seed.ontology_path), scores=scores
    )


def _check_object(data: Any) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise ValueError("expected a JSON object")
    return data


def score_entities(
    seeds: Sequence[SeedEntity],
    backends: Backends,
    prompts: PromptLibrary,
    workers: int = 1,
) -> list[SeedEntity]:
    """Score many entities, possibly in parallel; results keep input order."""
    if workers <= 1 or len(seeds) <= 1:
        return [score_entity(s, backends, prompts) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: score_entity(s, backends, prompts), seeds))


def filter_seeds(
    seeds: Iterable[SeedEntity], thresholds: dict[str, float] | None = None
) -> list[SeedEntity]:
    """Keep scored seeds whose every metric meets its threshold, order stable."""
    bars = dict(DEFAULT_THRESHOLDS)
    if thresholds:
        unknown = set(thresholds) - set(SEED_METRICS)
        if unknown:
            raise ConfigError(f"unknown seed threshold metrics: {sorted(unknown)}")
        bars.update(thresholds)
    kept = []
    for seed in seeds:
        if seed.scores is None:
            raise ValueError(f"seed {seed.name!r} is unscored")
        if all(seed.scores.get(m, 0.0) >= bars[m] for m in SEED_METRICS):
            kept.append(seed)
    return kept
