"""Release diagnosis and category-specific refinement.

Every curated task passes three judged checks (evidence entailment, shortcut
leakage, sanity) plus one deterministic pre-check for the answer leaking
into the stem. Conceptual tasks then get an obfuscation/option-balance
rewrite under a hard answer-preservation guard; computational tasks get
their governing equations masked behind their bracketed names plus injected
search hints, without touching any stated parameter value.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Any

from .backends import Backends
from .compute import (
    ComputationalTask,
    literal_present,
    numeric_literals,
    parse_named_equations,
)
from .concept import ConceptualTask, _normalize
from .errors import DiagnosisError, FormatError
from .judge import request_json, require_fields
from .prompts import PromptLibrary

log = logging.getLogger(__name__)

DEFAULT_MASK_RATIO = 1.0
DEFAULT_MASK_PHRASE = "the $name"
DEFAULT_MASK_DIRECTIVE = (
    "Identify and retrieve the original published source to reconstruct the "
    "governing equations named above."
)
DEFAULT_HINT_TEMPLATES = ("$title", "$seed quantitative model")


@dataclass
class Diagnosis:
    entailment_ok: bool
    shortcut_found: bool
    sanity_ok: bool
    notes: str = ""

    @property
    def release_eligible(self) -> bool:
        return self.entailment_ok and self.sanity_ok and not self.shortcut_found

    def to_dict(self) -> dict[str, Any]:
        return {
            "entailment_ok": self.entailment_ok,
            "shortcut_found": self.shortcut_found,
            "sanity_ok": self.sanity_ok,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Diagnosis":
        return cls(
            entailment_ok=bool(data["entailment_ok"]),
            shortcut_found=bool(data["shortcut_found"]),
            sanity_ok=bool(data["sanity_ok"]),
            notes=str(data.get("notes", "")),
        )


def answer_in_stem(question: str, answer: str) -> bool:
    """Deterministic shortcut pre-check: answer text appearing in the stem."""
    q = _normalize(question)
    a = _normalize(answer)
    return bool(a) and a in q


def diagnose(
    task: ConceptualTask | ComputationalTask, backends: Backends, prompts: PromptLibrary
) -> Diagnosis:
    """Run the three judged checks on one task.

    The rule-based answer-in-stem check ORs into the judged shortcut verdict:
    a mechanical leak is a shortcut regardless of what the judge thinks. A
    judge reply that stays unusable raises ``DiagnosisError`` so the caller
    can quarantine the task instead of guessing.
    """
    if isinstance(task, ConceptualTask):
        question, answer = task.question, task.answer
        confounders = task.confounders
        evidence = "\n\n".join(
            f"[{e.paper_title or e.url}] {e.evidence_paragraph}" for e in task.evidence
        )
    else:
        question, answer = task.question, task.answer or ""
        confounders: list[str] = []
        evidence = task.model.equations + "\n" + task.model.parameters

    try:
        entail = request_json(
            backends,
            prompts.render(
                "diagnose_entailment", question=question, answer=answer, evidence=evidence
            ),
            check=lambda d: require_fields(d, {"entailment_ok": bool}),
            label="entailment judge",
        )
        shortcut = request_json(
            backends,
            prompts.render(
                "diagnose_shortcut",
                question=question,
                answer=answer,
                confounders="; ".join(confounders) if confounders else "(none)",
            ),
            check=lambda d: require_fields(d, {"shortcut_found": bool}),
            label="shortcut judge",
        )
        sanity = request_json(
            backends,
            prompts.render("diagnose_sanity", question=question, answer=answer),
            check=lambda d: require_fields(d, {"sanity_ok": bool}),
            label="sanity judge",
        )
    except FormatError as exc:
        raise DiagnosisError(f"diagnosis judge unusable: {exc}") from exc

    rule_hit = answer_in_stem(question, answer)
    if rule_hit:
        log.info("rule-based shortcut: answer text appears in the stem")
    notes = "; ".join(
        str(part.get("notes", "")).strip()
        for part in (entail, shortcut, sanity)
        if str(part.get("notes", "")).strip()
    )
    return Diagnosis(
        entailment_ok=bool(entail["entailment_ok"]),
        shortcut_found=bool(shortcut["shortcut_found"]) or rule_hit,
        sanity_ok=bool(sanity["sanity_ok"]),
        notes=notes,
    )


def refine_conceptual(
    task: ConceptualTask, backends: Backends, prompts: PromptLibrary
) -> tuple[ConceptualTask, Diagnosis]:
    """Obfuscate giveaways and balance options, then re-diagnose.

    The rewrite is rejected outright (original kept, violation logged) if it
    mutates the answer byte-for-byte, drops confounders, or sneaks the answer
    into the option list. The returned diagnosis always reflects the task
    actually returned.
    """
    data = request_json(
        backends,
        prompts.render(
            "refine_conceptual",
            question=task.question,
            answer=task.answer,
            confounders="; ".join(task.confounders),
        ),
        check=lambda d: require_fields(d, {"question": str, "answer": str, "confounders": list}),
        label="refiner",
    )
    refined = task
    if data["answer"] != task.answer:
        log.warning(
            "refiner mutated the answer (%r -> %r); keeping the original task",
            task.answer,
            data["answer"],
        )
    else:
        confounders = [str(c) for c in data["confounders"]]
        answer_norm = _normalize(task.answer)
        if len(confounders) < len(task.confounders):
            log.warning("refiner dropped confounders; keeping the original task")
        elif any(_normalize(c) == answer_norm for c in confounders):
            log.warning("refiner produced a confounder equal to the answer; keeping original")
        elif not data["question"].strip():
            log.warning("refiner emptied the stem; keeping the original task")
        else:
            refined = ConceptualTask(
                question=data["question"].strip(),
                answer=task.answer,
                question_type=task.question_type,
                confounders=confounders,
                evidence=list(task.evidence),
                hop_count=task.hop_count,
                anchor_history=list(task.anchor_history),
                seed=task.seed,
            )
    return refined, diagnose(refined, backends, prompts)


def refine_computational(
    task: ComputationalTask,
    *,
    mask_ratio: float = DEFAULT_MASK_RATIO,
    mask_phrase: str = DEFAULT_MASK_PHRASE,
    mask_directive: str = DEFAULT_MASK_DIRECTIVE,
    hint_templates: tuple[str, ...] = DEFAULT_HINT_TEMPLATES,
) -> ComputationalTask:
    """Mask equations behind their names and inject search hints.

    Purely mechanical: the first ceil(ratio * k) named equations whose bodies
    appear in the question are replaced by their bracketed names, and the
    retrieval directive is appended once. If masking would erase any
    parameter value stated in the question, it is skipped with a log line
    (the hints still land). The answer never changes.
    """
    if not 0.0 <= mask_ratio <= 1.0:
        raise ValueError(f"mask_ratio must be in [0, 1]: {mask_ratio}")
    pairs = parse_named_equations(task.model.equations)
    present = [(name, body) for name, body in pairs if body in task.question]
    to_mask = present[: math.ceil(mask_ratio * len(present))] if mask_ratio > 0 else []

    question = task.question
    masked_any = False
    if to_mask:
        candidate = question
        for name, body in to_mask:
            phrase = re.sub(r"\$name\b", name, mask_phrase)
            candidate = candidate.replace(f"[{name}]", "").replace(body, phrase)
        candidate = re.sub(r"[ \t]+", " ", candidate).strip()
        required = [
            lit
            for lit in numeric_literals(task.model.parameters)
            if literal_present(task.question, lit)
        ]
        lost = [lit for lit in required if not literal_present(candidate, lit)]
        if lost:
            log.warning("masking skipped: it would drop parameter values %s", lost)
        else:
            question = candidate + " " + mask_directive
            masked_any = True

    hints = list(task.search_hints)
    seed_name = task.seed.name if task.seed is not None else ""
    for template in hint_templates:
        if "$seed" in template and not seed_name:
            continue
        hint = template.replace("$title", task.model.title).replace("$seed", seed_name).strip()
        if hint and hint not in hints:
            hints.append(hint)
    if not hints:
        hints.append(task.model.title or "governing model source")

    return ComputationalTask(
        question=question,
        model=task.model,
        answer=task.answer,
        solver_record=list(task.solver_record),
        masked=masked_any,
        search_hints=hints,
        seed=task.seed,
    )
