"""Conceptual question curation and multi-hop anchor augmentation.

A base multiple-choice question is drafted from fetched evidence. Each
augmentation hop then (1) asks a judge for an anchor entity in the current
stem, (2) has a fresh model session write a sub-question whose answer is
that anchor, grounded in new evidence, and (3) mechanically fuses the two by
replacing the anchor mention with a clause built from the sub-question. The
final answer never changes; only the reasoning path to it grows.
"""

from __future__ import annotations

import logging
import re
import string
from dataclasses import dataclass, field
from typing import Any, Callable

from .backends import Backends
from .errors import CurationExhaustedError, FormatError, FusionError
from .judge import request_json, require_fields
from .prompts import PromptLibrary
from .seedgen import SeedEntity

log = logging.getLogger(__name__)

ENTITY_TYPES = ("gene", "protein", "pathway", "compound", "technique", "disease", "other")

DEFAULT_CLAUSE_TEMPLATE = 'the entity identified by the sub-question "$question"'
DEFAULT_SCOUT_QUERIES = ("$seed recent findings", "$seed mechanism study", "$seed review")

_OPTION_LETTER_RE = re.compile(r"^[A-Ea-e][.)]?$")


@dataclass
class EvidenceRecord:
    url: str
    paper_title: str
    evidence_paragraph: str
    context: str = ""

    def __post_init__(self) -> None:
        if not self.url.strip():
            raise ValueError("evidence record needs a url")
        if not self.evidence_paragraph.strip():
            raise ValueError("evidence record needs a non-empty paragraph")

    def to_dict(self) -> dict[str, str]:
        return {
            "url": self.url,
            "paper_title": self.paper_title,
            "evidence_paragraph": self.evidence_paragraph,
            "context": self.context,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvidenceRecord":
        return cls(
            url=str(data["url"]),
            paper_title=str(data.get("paper_title", "")),
            evidence_paragraph=str(data["evidence_paragraph"]),
            context=str(data.get("context", "")),
        )


@dataclass
class AnchorCandidate:
    """A validated anchor: present in the stem, absent from every option."""

    entity: str
    in_question: bool
    in_options: bool
    is_decisive: bool
    entity_type: str = "other"
    reasoning: str = ""

    def __post_init__(self) -> None:
        if not self.entity.strip():
            raise ValueError("anchor entity must be non-empty")
        if self.entity_type not in ENTITY_TYPES:
            raise ValueError(f"unknown entity_type {self.entity_type!r}")

    @property
    def valid(self) -> bool:
        return self.in_question and not self.in_options and self.is_decisive

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity": self.entity,
            "in_question": self.in_question,
            "in_options": self.in_options,
            "is_decisive": self.is_decisive,
            "entity_type": self.entity_type,
            "reasoning": self.reasoning,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AnchorCandidate":
        return cls(
            entity=str(data["entity"]),
            in_question=bool(data["in_question"]),
            in_options=bool(data["in_options"]),
            is_decisive=bool(data["is_decisive"]),
            entity_type=str(data.get("entity_type", "other")),
            reasoning=str(data.get("reasoning", "")),
        )


@dataclass
class AnchorSubQuestion:
    question: str
    evidence: EvidenceRecord


@dataclass
class ConceptualTask:
    question: str
    answer: str
    question_type: str
    confounders: list[str]
    evidence: list[EvidenceRecord]
    hop_count: int
    anchor_history: list[AnchorCandidate] = field(default_factory=list)
    seed: SeedEntity | None = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.question.strip():
            raise ValueError("question stem must be non-empty")
        if not self.answer.strip():
            raise ValueError("answer must be non-empty")
        if _OPTION_LETTER_RE.match(self.answer.strip()):
            raise ValueError(f"answer {self.answer!r} is an option letter, not content")
        if self.question_type not in ("mcq", "open"):
            raise ValueError(f"unknown question_type {self.question_type!r}")
        if self.question_type == "mcq" and len(self.confounders) < 3:
            raise ValueError("mcq tasks need at least 3 confounders")
        folded = _normalize(self.answer)
        for confounder in self.confounders:
            if _normalize(confounder) == folded:
                raise ValueError(f"confounder equals the answer: {confounder!r}")
        if self.hop_count != len(self.anchor_history):
            raise ValueError("hop_count must equal len(anchor_history)")
        if len(self.evidence) != self.hop_count + 1:
            raise ValueError("evidence count must be hop_count + 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "answer": self.answer,
            "question_type": self.question_type,
            "confounders": list(self.confounders),
            "evidence": [e.to_dict() for e in self.evidence],
            "hop_count": self.hop_count,
            "anchor_history": [a.to_dict() for a in self.anchor_history],
            "seed": self.seed.to_dict() if self.seed is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ConceptualTask":
        return cls(
            question=str(data["question"]),
            answer=str(data["answer"]),
            question_type=str(data["question_type"]),
            confounders=[str(c) for c in data["confounders"]],
            evidence=[EvidenceRecord.from_dict(e) for e in data["evidence"]],
            hop_count=int(data["hop_count"]),
            anchor_history=[AnchorCandidate.from_dict(a) for a in data.get("anchor_history", [])],
            seed=SeedEntity.from_dict(data["seed"]) if data.get("seed") else None,
        )


def _normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().casefold()


def _token_pattern(entity: str) -> re.Pattern[str]:
    # token boundary = adjacent alphanumerics; hyphens inside entities are fine
    return re.compile(
        r"(?<![A-Za-z0-9])" + re.escape(entity) + r"(?![A-Za-z0-9])", re.IGNORECASE
    )


def occurs_as_token(text: str, entity: str) -> bool:
    """Case-insensitive whole-token occurrence of ``entity`` in ``text``."""
    return bool(entity) and _token_pattern(entity).search(text) is not None


def contains_anywhere(text: str, entity: str) -> bool:
    """Case-insensitive substring occurrence, catching embedded mentions."""
    return bool(entity) and entity.casefold() in text.casefold()


def curate_base_question(
    seed: SeedEntity,
    backends: Backends,
    prompts: PromptLibrary,
    *,
    scout_queries: tuple[str, ...] = DEFAULT_SCOUT_QUERIES,
    search_top_k: int = 5,
) -> ConceptualTask:
    """Draft a grounded zero-hop question for ``seed`` from live evidence.

    Scout queries run in order; each hit's page is fetched and handed to the
    drafting model. Content violations (answer echoed in the options, empty
    evidence) are fed back through the repair loop; a source that still fails
    is skipped. Raises ``CurationExhaustedError`` when every source fails.
    """
    tried = 0
    for template in scout_queries:
        query = string.Template(template).substitute(seed=seed.name)
        hits = backends.web_search(query, top_k=search_top_k)
        for hit in hits:
            page = backends.fetch_page(hit.url)
            if page.status != 200 or not page.text:
                log.info("skipping %s (status %s)", hit.url, page.status)
                continue
            tried += 1
            prompt = prompts.render(
                "base_question",
                seed=seed.name,
                domain=seed.domain,
                path=" / ".join(seed.ontology_path),
                url=hit.url,
                page=page.text,
            )
            try:
                draft = request_json(
                    backends, prompt, check=_check_base_question, label="base question"
                )
            except FormatError as exc:
                log.warning("base question failed for %s: %s", hit.url, exc)
                continue
            evidence = EvidenceRecord(
                url=hit.url,  # provenance pinned to the page actually fetched
                paper_title=draft["evidence"].get("paper_title", hit.title),
                evidence_paragraph=draft["evidence"]["evidence_paragraph"],
                context=draft["evidence"].get("context", ""),
            )
            return ConceptualTask(
                question=draft["question"],
                answer=draft["answer"],
                question_type=draft["question_type"],
                confounders=list(draft["confounders"]),
                evidence=[evidence],
                hop_count=0,
                anchor_history=[],
                seed=seed,
            )
    raise CurationExhaustedError(
        f"no usable base question for seed {seed.name!r} ({tried} sources tried)"
    )


def _check_base_question(data: Any) -> dict[str, Any]:
    require_fields(
        data,
        {
            "question": str,
            "answer": str,
            "question_type": str,
            "confounders": list,
            "evidence": dict,
        },
    )
    if not data["question"].strip() or not data["answer"].strip():
        raise ValueError("question and answer must be non-empty")
    if _OPTION_LETTER_RE.match(data["answer"].strip()):
        raise ValueError("answer must be content, not an option letter")
    if data["question_type"] not in ("mcq", "open"):
        raise ValueError(f"unknown question_type {data['question_type']!r}")
    confounders = [str(c) for c in data["confounders"]]
    if data["question_type"] == "mcq" and len(confounders) < 3:
        raise ValueError("need at least 3 confounders")
    answer_norm = _normalize(data["answer"])
    if any(_normalize(c) == answer_norm for c in confounders):
        raise ValueError("a confounder duplicates the answer")
    if not str(data["evidence"].get("evidence_paragraph", "")).strip():
        raise ValueError("evidence paragraph must be non-empty")
    return data


def extract_anchor(
    task: ConceptualTask, backends: Backends, prompts: PromptLibrary
) -> AnchorCandidate | None:
    """Ask the judge for an anchor, then re-validate its claims locally.

    The judge's booleans are advisory: presence in the stem and absence from
    the options are recomputed here, and any violation voids the candidate
    (logged, returns None). Decisiveness stays the judge's call.
    """
    prompt = prompts.render(
        "anchor_extract",
        question=task.question,
        answer=task.answer,
        confounders="; ".join(task.confounders) if task.confounders else "(none)",
    )
    data = request_json(backends, prompt, check=_check_anchor_judgment, label="anchor judge")
    entity = data["anchor_entity"].strip()
    if not entity:
        log.info("judge found no anchor")
        return None

    in_question = occurs_as_token(task.question, entity)
    in_options = contains_anywhere(task.answer, entity) or any(
        contains_anywhere(c, entity) for c in task.confounders
    )
    if not in_question:
        log.warning("anchor %r rejected: not a token of the stem", entity)
        return None
    if in_options:
        log.warning("anchor %r rejected: appears in the answer or a confounder", entity)
        return None

    decisive = True
    for candidate in data.get("candidates", []):
        if isinstance(candidate, dict) and str(candidate.get("entity", "")).strip() == entity:
            decisive = bool(candidate.get("is_decisive", True))
    if not decisive:
        log.warning("anchor %r rejected: judge marked it non-decisive", entity)
        return None

    entity_type = str(data.get("entity_type", "other")).strip().lower()
    if entity_type not in ENTITY_TYPES:
        log.warning("unknown entity_type %r coerced to 'other'", entity_type)
        entity_type = "other"
    return AnchorCandidate(
        entity=entity,
        in_question=True,
        in_options=False,
        is_decisive=True,
        entity_type=entity_type,
        reasoning=str(data.get("reasoning", "")),
    )


def _check_anchor_judgment(data: Any) -> dict[str, Any]:
    require_fields(data, {"anchor_entity": str})
    return data


def generate_anchor_question(
    anchor: AnchorCandidate,
    backends: Backends,
    prompts: PromptLibrary,
    *,
    search_top_k: int = 5,
    retries: int = 2,
) -> AnchorSubQuestion | None:
    """Have a fresh session write a sub-question whose answer is the anchor.

    Each try grounds against a different search hit where available. A try
    fails when the generated answer is not the anchor, when the sub-question
    names the anchor (which fusion would then reintroduce), or when evidence
    is empty. Returns None after ``retries`` failed tries: the hop is skipped,
    never fatal.
    """
    if not anchor.valid:
        raise ValueError(f"anchor {anchor.entity!r} is not valid for augmentation")
    hits = backends.web_search(anchor.entity, top_k=search_top_k)
    usable = []
    for hit in hits:
        page = backends.fetch_page(hit.url)
        if page.status == 200 and page.text:
            usable.append((hit, page))
    if not usable:
        log.warning("no fetchable evidence for anchor %r", anchor.entity)
        return None

    target = _normalize(anchor.entity)
    for attempt in range(max(1, retries)):
        hit, page = usable[attempt % len(usable)]
        prompt = prompts.render(
            "anchor_question",
            entity=anchor.entity,
            entity_type=anchor.entity_type,
            url=hit.url,
            page=page.text,
        )
        try:
            draft = request_json(
                backends, prompt, check=_check_anchor_question, label="anchor question"
            )
        except FormatError as exc:
            log.warning("anchor question malformed for %r: %s", anchor.entity, exc)
            continue
        if _normalize(draft["answer"]) != target:
            log.warning(
                "anchor question attempt %d: answer %r != anchor %r",
                attempt + 1,
                draft["answer"],
                anchor.entity,
            )
            continue
        if contains_anywhere(draft["question"], anchor.entity):
            log.warning("anchor question attempt %d names the anchor; rejected", attempt + 1)
            continue
        evidence = EvidenceRecord(
            url=hit.url,  # pinned to the fetched page
            paper_title=draft["evidence"].get("paper_title", hit.title),
            evidence_paragraph=draft["evidence"]["evidence_paragraph"],
            context=draft["evidence"].get("context", ""),
        )
        return AnchorSubQuestion(question=draft["question"], evidence=evidence)
    log.info("augmentation skipped for anchor %r: retries exhausted", anchor.entity)
    return None


def _check_anchor_question(data: Any) -> dict[str, Any]:
    require_fields(data, {"question": str, "answer": str, "evidence": dict})
    if not data["question"].strip():
        raise ValueError("sub-question must be non-empty")
    if not str(data["evidence"].get("evidence_paragraph", "")).strip():
        raise ValueError("evidence paragraph must be non-empty")
    return data


def build_clause(sub_question: str, clause_template: str = DEFAULT_CLAUSE_TEMPLATE) -> str:
    """Render the replacement clause for a fused stem from a sub-question."""
    cleaned = re.sub(r"\s+", " ", sub_question).strip()
    clause = string.Template(clause_template).substitute(question=cleaned)
    if not clause.strip():
        raise ValueError("clause template produced empty text")
    return clause


def fuse_questions(
    parent: ConceptualTask,
    anchor: AnchorCandidate,
    sub: AnchorSubQuestion,
    *,
    clause_template: str = DEFAULT_CLAUSE_TEMPLATE,
) -> ConceptualTask:
    """Replace the anchor mention in ``parent`` with a clause from ``sub``.

    Every whole-token occurrence of the anchor is replaced. If anchor text
    survives anywhere in the fused stem (e.g. embedded in a longer token), or
    an earlier hop's anchor resurfaces through the new clause, fusion fails
    rather than ship a stem that leaks an anchor.
    """
    if not occurs_as_token(parent.question, anchor.entity):
        raise ValueError(f"anchor {anchor.entity!r} does not occur in the parent stem")
    clause = build_clause(sub.question, clause_template)
    fused = _token_pattern(anchor.entity).sub(lambda _m: clause, parent.question)
    if contains_anywhere(fused, anchor.entity):
        raise FusionError(f"anchor text {anchor.entity!r} survived fusion")
    for prior in parent.anchor_history:
        if contains_anywhere(fused, prior.entity):
            raise FusionError(f"earlier anchor {prior.entity!r} resurfaced in the fused stem")
    return ConceptualTask(
        question=fused,
        answer=parent.answer,
        question_type=parent.question_type,
        confounders=list(parent.confounders),
        evidence=list(parent.evidence) + [sub.evidence],
        hop_count=parent.hop_count + 1,
        anchor_history=list(parent.anchor_history) + [anchor],
        seed=parent.seed,
    )


def augment_n_hops(
    task: ConceptualTask,
    hops: int,
    backends: Backends,
    prompts: PromptLibrary,
    *,
    clause_template: str = DEFAULT_CLAUSE_TEMPLATE,
    search_top_k: int = 5,
    retries: int = 2,
    on_hop: Callable[["ConceptualTask"], None] | None = None,
) -> ConceptualTask:
    """Run up to ``hops`` augmentation rounds, stopping early on any skip.

    Hop numbering continues from ``task.hop_count``, and each hop gets its
    own backend namespace (a fresh session: no carried conversation state and
    separate recordings), so a partially augmented task resumes exactly where
    it stopped. ``on_hop`` fires after each successful fusion. Skips and
    fusion failures leave the last good task intact; zero hops returns the
    input unchanged.
    """
    if hops < 0:
        raise ValueError(f"hops must be >= 0: {hops}")
    current = task
    for _ in range(hops):
        hop_number = current.hop_count + 1
        hop_backends = backends.for_namespace(f"{backends.namespace}/hop{hop_number}")
        anchor = extract_anchor(current, hop_backends, prompts)
        if anchor is None:
            log.info("hop %d: no valid anchor; stopping augmentation", hop_number)
            break
        sub = generate_anchor_question(
            anchor, hop_backends, prompts, search_top_k=search_top_k, retries=retries
        )
        if sub is None:
            log.info("hop %d: sub-question generation skipped; stopping", hop_number)
            break
        try:
            current = fuse_questions(current, anchor, sub, clause_template=clause_template)
        except FusionError as exc:
            log.warning("hop %d aborted: %s", hop_number, exc)
            break
        if on_hop is not None:
            on_hop(current)
    return current
