"""Fusion invariants and anchor-validation hardening.

The generated cases use fixed-length uppercase codes as entities; distinct
same-length codes can never substring-contain one another, so every leak the
checks catch is a real leak, not a generator artifact.
"""

from __future__ import annotations

import itertools
import json
import random

import pytest

from sciforge.concept import (
    AnchorCandidate,
    AnchorSubQuestion,
    ConceptualTask,
    EvidenceRecord,
    build_clause,
    contains_anywhere,
    extract_anchor,
    fuse_questions,
    occurs_as_token,
)
from sciforge.errors import FusionError

FILLER = (
    "hypoxia stress membrane nuclear transport kinetics feedback decay "
    "signal scaffold lattice vesicle motif helix turnover flux gradient"
).split()


def code_pool() -> list[str]:
    return [f"XQ{a}{b}W" for a, b in itertools.product("ABCDEFGHIJKLMNOPQRSTUVWXYZ", repeat=2)]


def make_evidence(tag: str) -> EvidenceRecord:
    return EvidenceRecord(
        url=f"https://example.org/{tag}",
        paper_title=f"study {tag}",
        evidence_paragraph=f"paragraph about {tag}",
    )


def make_anchor(entity: str) -> AnchorCandidate:
    return AnchorCandidate(
        entity=entity,
        in_question=True,
        in_options=False,
        is_decisive=True,
        entity_type="gene",
    )


def make_base_task(rng: random.Random, code: str) -> ConceptualTask:
    words = rng.sample(FILLER, 4)
    return ConceptualTask(
        question=f"Which downstream effector does {code} activate during {words[0]} stress?",
        answer=f"{words[1]} oxidase",
        question_type="mcq",
        confounders=[f"{w} complex" for w in words[2:4]] + ["inert control"],
        evidence=[make_evidence("base")],
        hop_count=0,
    )


# --- token occurrence -------------------------------------------------------


def test_occurs_as_token_boundaries():
    assert occurs_as_token("the MAPK-pathway is active", "MAPK-pathway")
    assert occurs_as_token("see AXL.", "AXL")
    assert occurs_as_token("(AXL)", "axl")  # case-insensitive
    assert not occurs_as_token("preAXLpost", "AXL")
    assert not occurs_as_token("AXL2 differs", "AXL")
    assert not occurs_as_token("anything", "")


def test_contains_anywhere_catches_embedded():
    assert contains_anywhere("preAXLpost", "axl")
    assert not contains_anywhere("nothing here", "AXL")


# --- task validation --------------------------------------------------------


def test_task_rejects_option_letter_answer():
    with pytest.raises(ValueError, match="option letter"):
        ConceptualTask(
            question="Q?",
            answer="B)",
            question_type="mcq",
            confounders=["x", "y", "z"],
            evidence=[make_evidence("e")],
            hop_count=0,
        )


def test_task_rejects_confounder_equal_to_answer():
    with pytest.raises(ValueError, match="confounder equals"):
        ConceptualTask(
            question="Q?",
            answer="AXL",
            question_type="mcq",
            confounders=["axl", "y", "z"],
            evidence=[make_evidence("e")],
            hop_count=0,
        )


def test_task_requires_evidence_per_hop():
    with pytest.raises(ValueError, match="evidence count"):
        ConceptualTask(
            question="Q?",
            answer="alpha",
            question_type="mcq",
            confounders=["x", "y", "z"],
            evidence=[make_evidence("e"), make_evidence("f")],
            hop_count=0,
        )


def test_task_roundtrips_through_dict():
    task = make_base_task(random.Random(1), "XQABW")
    again = ConceptualTask.from_dict(json.loads(json.dumps(task.to_dict())))
    assert again.to_dict() == task.to_dict()


# --- fusion mechanics -------------------------------------------------------


def test_build_clause_collapses_whitespace():
    clause = build_clause("what  binds\n X?")
    assert clause == 'the entity identified by the sub-question "what binds X?"'


def test_fuse_replaces_every_token_mention():
    task = ConceptualTask(
        question="XQAAW inhibits XQAAW targets?",
        answer="alpha",
        question_type="mcq",
        confounders=["b", "c", "d"],
        evidence=[make_evidence("e")],
        hop_count=0,
    )
    fused = fuse_questions(
        task, make_anchor("XQAAW"), AnchorSubQuestion("which gene?", make_evidence("s"))
    )
    assert "XQAAW" not in fused.question
    assert fused.question.count("the entity identified by the sub-question") == 2


def test_fuse_requires_anchor_in_stem():
    task = make_base_task(random.Random(2), "XQACW")
    with pytest.raises(ValueError, match="does not occur"):
        fuse_questions(
            task, make_anchor("XQZZW"), AnchorSubQuestion("sub?", make_evidence("s"))
        )


def test_fuse_fails_when_embedded_anchor_survives():
    task = ConceptualTask(
        question="XQAAW binds preXQAAWpost?",
        answer="alpha",
        question_type="mcq",
        confounders=["b", "c", "d"],
        evidence=[make_evidence("e")],
        hop_count=0,
    )
    with pytest.raises(FusionError, match="survived"):
        fuse_questions(
            task, make_anchor("XQAAW"), AnchorSubQuestion("which gene?", make_evidence("s"))
        )


def test_fuse_fails_when_sub_question_reintroduces_anchor():
    task = make_base_task(random.Random(3), "XQADW")
    with pytest.raises(FusionError, match="survived"):
        fuse_questions(
            task,
            make_anchor("XQADW"),
            AnchorSubQuestion("what does XQADW bind?", make_evidence("s")),
        )


def test_fuse_fails_when_prior_anchor_resurfaces():
    base = make_base_task(random.Random(4), "XQAEW")
    hop1 = fuse_questions(
        base,
        make_anchor("XQAEW"),
        AnchorSubQuestion("which gene regulates XQAFW here?", make_evidence("s1")),
    )
    with pytest.raises(FusionError, match="resurfaced"):
        fuse_questions(
            hop1,
            make_anchor("XQAFW"),
            AnchorSubQuestion("what pairs with XQAEW?", make_evidence("s2")),
        )


def test_fusion_invariants_over_200_generated_chains():
    rng = random.Random(20260814)
    pool = code_pool()
    violations = []
    for case in range(200):
        codes = rng.sample(pool, 4)
        task = make_base_task(rng, codes[0])
        original_answer = task.answer
        hops = rng.randint(1, 3)
        for i in range(hops):
            filler = rng.sample(FILLER, 2)
            next_mention = f" when {codes[i + 1]} binds {filler[1]}" if i + 1 < hops else ""
            sub = AnchorSubQuestion(
                question=f"which {filler[0]} target is suppressed{next_mention}?",
                evidence=make_evidence(f"hop{i + 1}"),
            )
            task = fuse_questions(task, make_anchor(codes[i]), sub)

        if task.answer != original_answer:
            violations.append((case, "answer mutated"))
        if task.hop_count != hops or len(task.anchor_history) != hops:
            violations.append((case, "hop bookkeeping"))
        if len(task.evidence) != task.hop_count + 1:
            violations.append((case, "evidence count"))
        for anchor in task.anchor_history:
            if contains_anywhere(task.question, anchor.entity):
                violations.append((case, f"anchor {anchor.entity} leaked"))
        task.validate()
    assert violations == []


# --- anchor validator fuzz --------------------------------------------------


def scripted_llm(responses: list[str]):
    queue = iter(responses)

    def provider(prompt: str, config) -> str:
        return next(queue)

    return provider


def judge_json(entity: str, *, decisive: bool = True, entity_type: str = "gene") -> str:
    payload = {
        "anchor_entity": entity,
        "entity_type": entity_type,
        "candidates": [
            {"entity": entity, "in_question": True, "in_options": False, "is_decisive": decisive}
        ],
        "reasoning": "scripted",
    }
    return json.dumps(payload)


def test_anchor_validator_fuzz_500_outputs(fake_backends, prompts):
    rng = random.Random(99)
    pool = code_pool()
    accepted = rejected = 0
    for trial in range(500):
        code = rng.choice(pool)
        scenario = rng.randrange(7)
        stem = f"Which pathway does {code} control under stress?"
        answer = "gamma oxidase"
        confounders = ["alpha complex", "beta shuttle", "delta pore"]
        judged = judge_json(code)

        if scenario == 1:  # anchor never in the stem
            stem = "Which pathway is active under stress?"
        elif scenario == 2:  # anchor embedded inside a confounder token
            confounders[0] = f"pseudo{code}like complex"
        elif scenario == 3:  # anchor is a whole token of a confounder
            confounders[1] = f"{code} adaptor"
        elif scenario == 4:  # anchor hidden inside the answer
            answer = f"the {code} axis"
        elif scenario == 5:  # judge itself flags indecision
            judged = judge_json(code, decisive=False)
        elif scenario == 6:  # judge returns no anchor
            judged = judge_json("")

        task = ConceptualTask(
            question=stem,
            answer=answer,
            question_type="mcq",
            confounders=confounders,
            evidence=[make_evidence("e")],
            hop_count=0,
        )
        backends = fake_backends(
            namespace=f"fuzz/{trial}", llm_provider=scripted_llm([judged])
        )
        result = extract_anchor(task, backends, prompts)

        if result is None:
            rejected += 1
            continue
        accepted += 1
        assert scenario == 0, f"trial {trial} scenario {scenario} wrongly accepted"
        assert result.entity == code
        assert occurs_as_token(task.question, result.entity)
        assert not contains_anywhere(task.answer, result.entity)
        assert all(not contains_anywhere(c, result.entity) for c in task.confounders)
        assert result.is_decisive and result.in_question and not result.in_options

    assert accepted > 0 and rejected > 0


def test_extract_anchor_coerces_unknown_entity_type(fake_backends, prompts):
    task = ConceptualTask(
        question="Which pathway does XQGGW control?",
        answer="gamma oxidase",
        question_type="mcq",
        confounders=["a", "b", "c"],
        evidence=[make_evidence("e")],
        hop_count=0,
    )
    backends = fake_backends(
        namespace="coerce", llm_provider=scripted_llm([judge_json("XQGGW", entity_type="weird")])
    )
    result = extract_anchor(task, backends, prompts)
    assert result is not None and result.entity_type == "other"
