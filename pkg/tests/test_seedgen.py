"""Seed candidate generation, scoring, and threshold filtering."""

from __future__ import annotations

import json

import pytest

from conftest import ONTOLOGY
from sciforge.errors import ConfigError, MissingMetricError
from sciforge.seedgen import (
    DEFAULT_THRESHOLDS,
    OntologyNode,
    SeedEntity,
    filter_seeds,
    generate_candidates,
    load_ontology,
    score_entities,
    score_entity,
)

NODE = OntologyNode(
    domain="Molecular Biology",
    path=["Cell Signaling", "Receptor Tyrosine Kinases"],
    annotation="receptor families under active therapeutic study",
)


def scripted(replies: list[str]):
    queue = iter(replies)
    return lambda prompt, config: next(queue)


def test_load_ontology_fixture():
    nodes = load_ontology(ONTOLOGY)
    assert len(nodes) == 1
    assert nodes[0].domain == "Molecular Biology"
    assert nodes[0].path_text() == "Cell Signaling / Receptor Tyrosine Kinases"


def test_load_ontology_rejects_bad_files(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError, match="unreadable"):
        load_ontology(missing)
    empty = tmp_path / "empty.json"
    empty.write_text("[]")
    with pytest.raises(ConfigError, match="non-empty"):
        load_ontology(empty)
    malformed = tmp_path / "bad.json"
    malformed.write_text('[{"domain": "x"}]')
    with pytest.raises(ConfigError, match="malformed"):
        load_ontology(malformed)


def test_generate_candidates_dedupes_case_insensitively(fake_backends, prompts):
    reply = json.dumps(["AXL", "axl", " MERTK ", "", "TYRO3", "Gas6"])
    backends = fake_backends(namespace="seeds", llm_provider=scripted([reply]))
    seeds = generate_candidates(NODE, backends, prompts, count=3)
    assert [s.name for s in seeds] == ["AXL", "MERTK", "TYRO3"]
    assert seeds[0].ontology_path == NODE.path
    assert seeds[0].scores is None


def test_generate_candidates_rejects_non_list_output(fake_backends, prompts):
    backends = fake_backends(
        namespace="seeds2",
        llm_provider=scripted(['{"not": "a list"}', "[1, 2]", '["ok"]']),
    )
    seeds = generate_candidates(NODE, backends, prompts, count=5)
    assert [s.name for s in seeds] == ["ok"]


def test_score_entity_clamps_and_requires_all_metrics(fake_backends, prompts):
    seed = SeedEntity(name="AXL", domain=NODE.domain, ontology_path=NODE.path)
    reply = json.dumps(
        {"frontier_relevance": 14, "concreteness": "7", "specificity": -2, "noise": 1}
    )
    backends = fake_backends(namespace="score", llm_provider=scripted([reply]))
    scored = score_entity(seed, backends, prompts)
    assert scored.scores == {
        "frontier_relevance": 10.0,
        "concreteness": 7.0,
        "specificity": 0.0,
    }

    incomplete = json.dumps({"frontier_relevance": 8})
    backends = fake_backends(namespace="score2", llm_provider=scripted([incomplete]))
    with pytest.raises(MissingMetricError):
        score_entity(seed, backends, prompts)


def test_score_entities_keeps_order_with_workers(fake_backends, prompts):
    seeds = [
        SeedEntity(name=f"S{i}", domain=NODE.domain, ontology_path=NODE.path) for i in range(4)
    ]

    def provider(prompt: str, config) -> str:
        # reply keyed off the entity named in the prompt, whatever the thread order
        for i in range(4):
            if f"S{i}" in prompt:
                return json.dumps(
                    {"frontier_relevance": i, "concreteness": i, "specificity": i}
                )
        raise AssertionError("unknown entity prompt")

    backends = fake_backends(namespace="bulk", llm_provider=provider)
    scored = score_entities(seeds, backends, prompts, workers=3)
    assert [s.name for s in scored] == ["S0", "S1", "S2", "S3"]
    assert [s.scores["specificity"] for s in scored] == [0.0, 1.0, 2.0, 3.0]


def make_scored(name: str, fr: float, co: float, sp: float) -> SeedEntity:
    return SeedEntity(
        name=name,
        domain="d",
        ontology_path=["p"],
        scores={"frontier_relevance": fr, "concreteness": co, "specificity": sp},
    )


def test_filter_seeds_default_thresholds_are_six():
    assert DEFAULT_THRESHOLDS == {
        "frontier_relevance": 6.0,
        "concreteness": 6.0,
        "specificity": 6.0,
    }
    seeds = [
        make_scored("pass", 6.0, 6.0, 6.0),  # boundary passes
        make_scored("low-fr", 5.9, 9.0, 9.0),
        make_scored("low-co", 9.0, 5.0, 9.0),
        make_scored("low-sp", 9.0, 9.0, 0.0),
        make_scored("high", 8.0, 7.0, 9.0),
    ]
    assert [s.name for s in filter_seeds(seeds)] == ["pass", "high"]


def test_filter_seeds_custom_thresholds_and_errors():
    seeds = [make_scored("a", 5.0, 5.0, 5.0)]
    assert filter_seeds(seeds, {"frontier_relevance": 5.0, "concreteness": 5.0, "specificity": 5.0})
    with pytest.raises(ConfigError, match="unknown seed threshold"):
        filter_seeds(seeds, {"sparkle": 1.0})
    with pytest.raises(ValueError, match="unscored"):
        filter_seeds([SeedEntity(name="x", domain="d", ontology_path=["p"])])


def test_seed_entity_validation_and_roundtrip():
    with pytest.raises(ValueError):
        SeedEntity(name="  ", domain="d", ontology_path=["p"])
    with pytest.raises(ValueError):
        SeedEntity(name="x", domain="d", ontology_path=[])
    with pytest.raises(ValueError):
        SeedEntity(name="x", domain="d", ontology_path=["p"], scores={"specificity": 11.0})
    seed = make_scored("AXL", 8, 8, 8)
    assert SeedEntity.from_dict(json.loads(json.dumps(seed.to_dict()))).to_dict() == seed.to_dict()


def test_full_seed_pass_over_fake_world(fake_backends, prompts):
    backends = fake_backends(namespace="seed/full")
    node = load_ontology(ONTOLOGY)[0]
    candidates = generate_candidates(node, backends, prompts, count=6)
    scored = score_entities(candidates, backends, prompts)
    kept = filter_seeds(scored)
    assert [s.name for s in kept] == ["AXL", "MERTK"]
