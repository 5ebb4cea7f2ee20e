"""Computational question curation: source triage, model extraction,
scenario composition, and solver-agreement filtering.

Evidence selection runs at three levels: scout search for candidate pages, a
four-metric judge pass over each fetched page, then a deep extraction of the
winning page's governing equations. A scenario question composed from the
extracted model is answered by five independently sampled solver programs;
the agreement pattern across their outcomes decides whether the task is
kept, and an accepted value still has to pass a consistency judge before it
becomes the recorded answer.
"""

from __future__ import annotations

import logging
import re
import statistics
import string
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .backends import Backends, SearchHit
from .errors import (
    AssessmentError,
    CompositionError,
    ExtractionError,
    FormatError,
    SelectionError,
)
from .judge import clamp_score, request_json, require_fields
from .prompts import PromptLibrary
from .sandbox import SandboxConfig, SolverOutcome, run_solvers
from .seedgen import SeedEntity

log = logging.getLogger(__name__)

ASSESS_METRICS = (
    "model_exclusiveness",
    "search_identifiability",
    "computational_complexity",
    "llm_unfamiliarity",
)

DEFAULT_SCORE_FLOOR = 4.0
SOLVER_COUNT = 5
NAME_WORDS_MIN = 5
NAME_WORDS_MAX = 20
DEFAULT_COMPUTE_QUERIES = (
    "$seed computational model",
    "$seed quantitative model equations",
    "$seed kinetics model",
)

VERDICTS = ("accept", "reject_trivial", "reject_non_executable", "reject_unstable")

# A numeric value boundary: not glued to a preceding identifier character or
# decimal point (the "0" of "R0", the "6" of "162.77"), and not running into
# more digits on the right. A trailing bare "." stays allowed; that is
# sentence punctuation, not part of a number.
_NUM_LEFT_GUARD = r"(?<![\w.])"
_NUM_RIGHT_GUARD = r"(?!\d)(?!\.\d)"
_NUMBER_RE = re.compile(
    _NUM_LEFT_GUARD + r"\d+(?:\.\d+)?(?:[eE][-+]?\d+)?" + _NUM_RIGHT_GUARD
)
_BRACKET_NAME_RE = re.compile(r"\[([^\[\]]+)\]")


@dataclass
class EquivalenceConfig:
    """Tolerance for treating two solver values as the same answer."""

    abs_tol: float = 1e-9
    rel_tol: float = 1e-3

    def __post_init__(self) -> None:
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise ValueError("tolerances must be non-negative")

    def equal(self, a: float, b: float) -> bool:
        return abs(a - b) <= self.abs_tol + self.rel_tol * max(abs(a), abs(b))


@dataclass
class UrlAssessment:
    url: str
    is_valid_url: bool
    includes_model: bool
    model_exclusiveness: float
    search_identifiability: float
    computational_complexity: float
    llm_unfamiliarity: float
    model_name: str = ""
    model_summary: str = ""
    rationale: str = ""

    def scores(self) -> tuple[float, float, float, float]:
        return (
            self.model_exclusiveness,
            self.search_identifiability,
            self.computational_complexity,
            self.llm_unfamiliarity,
        )

    def aggregate(self) -> float:
        return sum(self.scores()) / len(ASSESS_METRICS)

    def to_dict(self) -> dict[str, Any]:
        return {
            "url": self.url,
            "is_valid_url": self.is_valid_url,
            "includes_model": self.includes_model,
            "model_exclusiveness": self.model_exclusiveness,
            "search_identifiability": self.search_identifiability,
            "computational_complexity": self.computational_complexity,
            "llm_unfamiliarity": self.llm_unfamiliarity,
            "model_name": self.model_name,
            "model_summary": self.model_summary,
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "UrlAssessment":
        return cls(
            url=str(data["url"]),
            is_valid_url=bool(data["is_valid_url"]),
            includes_model=bool(data["includes_model"]),
            model_exclusiveness=float(data["model_exclusiveness"]),
            search_identifiability=float(data["search_identifiability"]),
            computational_complexity=float(data["computational_complexity"]),
            llm_unfamiliarity=float(data["llm_unfamiliarity"]),
            model_name=str(data.get("model_name", "")),
            model_summary=str(data.get("model_summary", "")),
            rationale=str(data.get("rationale", "")),
        )


@dataclass
class ModelSpec:
    """The extracted mathematical model a scenario question is built on."""

    title: str
    url: str
    description: str
    equations: str
    variables: str
    parameters: str
    assumptions: str

    def __post_init__(self) -> None:
        if not self.equations.strip():
            raise ValueError("model spec needs non-empty equations")
        parse_named_equations(self.equations)

    def to_dict(self) -> dict[str, str]:
        return {
            "title": self.title,
            "url": self.url,
            "description": self.description,
            "equations": self.equations,
            "variables": self.variables,
            "parameters": self.parameters,
            "assumptions": self.assumptions,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelSpec":
        return cls(
            title=str(data["title"]),
            url=str(data["url"]),
            description=str(data.get("description", "")),
            equations=str(data["equations"]),
            variables=str(data.get("variables", "")),
            parameters=str(data.get("parameters", "")),
            assumptions=str(data.get("assumptions", "")),
        )


@dataclass
class FilterDecision:
    """Outcome of the solver-agreement filter."""

    verdict: str
    value: float | None = None
    support: int = 0

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == "accept" and (self.value is None or self.support < 3):
            raise ValueError("accept requires a value with support >= 3")

    def to_dict(self) -> dict[str, Any]:
        return {"verdict": self.verdict, "value": self.value, "support": self.support}


@dataclass
class ComputationalTask:
    question: str
    model: ModelSpec
    answer: str | None = None
    solver_record: list[SolverOutcome] = field(default_factory=list)
    masked: bool = False
    search_hints: list[str] = field(default_factory=list)
    seed: SeedEntity | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "model": self.model.to_dict(),
            "answer": self.answer,
            "solver_record": [o.to_dict() for o in self.solver_record],
            "masked": self.masked,
            "search_hints": list(self.search_hints),
            "seed": self.seed.to_dict() if self.seed is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ComputationalTask":
        return cls(
            question=str(data["question"]),
            model=ModelSpec.from_dict(data["model"]),
            answer=data.get("answer"),
            solver_record=[SolverOutcome.from_dict(o) for o in data.get("solver_record", [])],
            masked=bool(data.get("masked", False)),
            search_hints=[str(h) for h in data.get("search_hints", [])],
            seed=SeedEntity.from_dict(data["seed"]) if data.get("seed") else None,
        )


def scout_sources(
    seed: SeedEntity,
    backends: Backends,
    *,
    queries: tuple[str, ...] = DEFAULT_COMPUTE_QUERIES,
    search_top_k: int = 5,
) -> list[SearchHit]:
    """Collect candidate model sources across the scout queries, URL-deduped."""
    seen: set[str] = set()
    hits: list[SearchHit] = []
    for template in queries:
        query = string.Template(template).substitute(seed=seed.name)
        for hit in backends.web_search(query, top_k=search_top_k):
            if hit.url not in seen:
                seen.add(hit.url)
                hits.append(hit)
    return hits


def assess_urls(
    candidates: Sequence[SearchHit],
    seed: SeedEntity,
    backends: Backends,
    prompts: PromptLibrary,
) -> list[UrlAssessment]:
    """Fetch and judge every candidate page on the four source metrics.

    Candidates whose page cannot be fetched, or whose judgment stays
    malformed after repair, are dropped with a log line. Scores clamp into
    [0, 10]. Raises ``AssessmentError`` when nothing survives.
    """
    assessments: list[UrlAssessment] = []
    for hit in candidates:
        page = backends.fetch_page(hit.url)
        if page.status != 200 or not page.text:
            log.info("dropping %s: fetch status %s", hit.url, page.status)
            continue
        prompt = prompts.render(
            "url_assess",
            seed=seed.name,
            title=hit.title,
            url=hit.url,
            snippet=hit.snippet,
            page=page.text,
        )
        try:
            data = request_json(backends, prompt, check=_check_assessment, label="url judge")
        except FormatError as exc:
            log.warning("dropping %s: %s", hit.url, exc)
            continue
        assessments.append(
            UrlAssessment(
                url=hit.url,
                is_valid_url=bool(data["is_valid_url"]),
                includes_model=bool(data["includes_model"]),
                model_exclusiveness=clamp_score(data["model_exclusiveness"]),
                search_identifiability=clamp_score(data["search_identifiability"]),
                computational_complexity=clamp_score(data["computational_complexity"]),
                llm_unfamiliarity=clamp_score(data["llm_unfamiliarity"]),
                model_name=str(data.get("model_name", "")),
                model_summary=str(data.get("model_summary", "")),
                rationale=str(data.get("rationale", "")),
            )
        )
    if not assessments:
        raise AssessmentError(f"no assessable sources for seed {seed.name!r}")
    return assessments


def _check_assessment(data: Any) -> dict[str, Any]:
    require_fields(data, {"is_valid_url": bool, "includes_model": bool})
    for metric in ASSESS_METRICS:
        if metric not in data:
            raise ValueError(f"missing metric {metric!r}")
    return data


def select_model_source(
    assessments: Sequence[UrlAssessment], *, score_floor: float = DEFAULT_SCORE_FLOOR
) -> UrlAssessment:
    """Pick the eligible assessment with the best mean score.

    Eligible means: valid URL, a model present, and every metric at or above
    the floor. Ties on the aggregate break to the lexicographically smallest
    URL so selection is deterministic.
    """
    eligible = [
        a
        for a in assessments
        if a.is_valid_url and a.includes_model and min(a.scores()) >= score_floor
    ]
    if not eligible:
        raise SelectionError(
            f"none of {len(assessments)} assessments cleared the floor {score_floor}"
        )
    return max(eligible, key=lambda a: (a.aggregate(), _ReverseStr(a.url)))


class _ReverseStr(str):
    """Orders strings descending inside a max() key, so ties pick the smallest."""

    def __lt__(self, other: str) -> bool:  # type: ignore[override]
        return str.__gt__(self, other)

    def __gt__(self, other: str) -> bool:  # type: ignore[override]
        return str.__lt__(self, other)


def parse_named_equations(equations: str) -> list[tuple[str, str]]:
    """Split an equations block into (bracketed name, body) pairs.

    Contract: every equation is introduced by a square-bracketed descriptive
    name of 5 to 20 words, nothing precedes the first name, and no body is
    empty. Violations raise ``ValueError`` with the offending name.
    """
    matches = list(_BRACKET_NAME_RE.finditer(equations))
    if not matches:
        raise ValueError("equations carry no bracketed names")
    head = equations[: matches[0].start()].strip()
    if head:
        raise ValueError(f"unnamed equation text before the first bracket: {head[:60]!r}")
    pairs: list[tuple[str, str]] = []
    for i, match in enumerate(matches):
        name = match.group(1).strip()
        words = name.split()
        if not NAME_WORDS_MIN <= len(words) <= NAME_WORDS_MAX:
            raise ValueError(
                f"equation name must be {NAME_WORDS_MIN}-{NAME_WORDS_MAX} words, "
                f"got {len(words)}: {name!r}"
            )
        end = matches[i + 1].start() if i + 1 < len(matches) else len(equations)
        body = equations[match.end() : end].strip()
        if not body:
            raise ValueError(f"equation {name!r} has an empty body")
        pairs.append((name, body))
    return pairs


def extract_model_spec(
    chosen: UrlAssessment, seed: SeedEntity, backends: Backends, prompts: PromptLibrary
) -> ModelSpec:
    """Deep-extract the winning page's model into a validated ``ModelSpec``.

    The stored URL is always the page actually fetched; a different URL
    echoed by the model is corrected with a log line.
    """
    page = backends.fetch_page(chosen.url)
    if page.status != 200 or not page.text:
        raise ExtractionError(f"selected source {chosen.url} no longer fetchable")
    prompt = prompts.render("model_extract", seed=seed.name, url=chosen.url, page=page.text)

    def check(data: Any) -> dict[str, Any]:
        require_fields(data, {"selected_model": dict})
        model = data["selected_model"]
        require_fields(model, {"title": str, "equations": str})
        if not model["equations"].strip():
            raise ValueError("equations must be non-empty")
        parse_named_equations(model["equations"])
        return data

    try:
        data = request_json(backends, prompt, check=check, label="model extraction")
    except FormatError as exc:
        raise ExtractionError(f"model extraction failed for {chosen.url}: {exc}") from exc
    model = data["selected_model"]
    echoed = str(model.get("url", "")).strip()
    if echoed and echoed != chosen.url:
        log.warning("extractor echoed %s; pinning provenance to %s", echoed, chosen.url)
    return ModelSpec(
        title=str(model["title"]),
        url=chosen.url,
        description=str(model.get("description", "")),
        equations=str(model["equations"]),
        variables=str(model.get("variables", "")),
        parameters=str(model.get("parameters", "")),
        assumptions=str(model.get("assumptions", "")),
    )


def numeric_literals(text: str) -> list[str]:
    """Numeric literals as written, order kept, duplicates dropped."""
    seen: set[str] = set()
    out: list[str] = []
    for match in _NUMBER_RE.findall(text):
        if match not in seen:
            seen.add(match)
            out.append(match)
    return out


def compose_scenario_question(
    spec: ModelSpec,
    seed: SeedEntity,
    backends: Backends,
    prompts: PromptLibrary,
    *,
    retries: int = 2,
) -> ComputationalTask:
    """Compose one self-contained scenario question over ``spec``.

    Two mechanical gates guard the composition: the question must ask exactly
    one thing (one question mark) and every numeric parameter value from the
    spec must appear verbatim in the question. Violations regenerate, with
    the failure spelled out to the model; exhaustion raises
    ``CompositionError``.
    """
    required = numeric_literals(spec.parameters)
    base_prompt = prompts.render(
        "scenario_compose",
        title=spec.title,
        description=spec.description,
        equations=spec.equations,
        variables=spec.variables,
        parameters=spec.parameters,
        assumptions=spec.assumptions,
    )
    prompt = base_prompt
    failure = ""
    for attempt in range(1 + max(0, retries)):
        data = request_json(
            backends,
            prompt,
            check=lambda d: require_fields(d, {"question": str}),
            label="scenario composer",
        )
        question = data["question"].strip()
        failure = _scenario_violation(question, required)
        if not failure:
            return ComputationalTask(question=question, model=spec, seed=seed)
        log.warning("scenario attempt %d rejected: %s", attempt + 1, failure)
        prompt = base_prompt + f"\n\nYour previous question was rejected: {failure}. Fix this."
    raise CompositionError(f"scenario composition failed: {failure}")


def _scenario_violation(question: str, required: list[str]) -> str:
    if not question:
        return "question is empty"
    if question.count("?") != 1:
        return f"question must contain exactly one question mark, found {question.count('?')}"
    missing = [lit for lit in required if not literal_present(question, lit)]
    if missing:
        return f"question omits required parameter values: {', '.join(missing)}"
    return ""


def literal_present(text: str, literal: str) -> bool:
    """Whether a numeric literal appears in ``text`` as a standalone number.

    Uses the same boundary rules as ``numeric_literals``, so a value embedded
    in a longer number (the "6" of "62.77") or an identifier does not count.
    """
    pattern = _NUM_LEFT_GUARD + re.escape(literal) + _NUM_RIGHT_GUARD
    return re.search(pattern, text) is not None


def classify_outcomes(
    outcomes: Sequence[SolverOutcome], tol: EquivalenceConfig | None = None
) -> FilterDecision:
    """Apply the agreement-pattern filter to the five solver outcomes.

    Rules, in order:
      1. all five numeric and pairwise tol-equal -> reject_trivial (the
         question is too easy to discriminate anything);
      2. all five errored with one shared error kind -> reject_non_executable;
      3. the largest tolerance-equivalence class of numeric values has at
         least three members -> accept its median, support = class size;
      4. anything else -> reject_unstable (this includes 2-2-1 splits).

    The verdict is invariant under permutation of the outcomes: values are
    sorted before clustering and every rule only looks at multisets.
    """
    if len(outcomes) != SOLVER_COUNT:
        raise ValueError(f"expected {SOLVER_COUNT} outcomes, got {len(outcomes)}")
    cfg = tol or EquivalenceConfig()
    values = [o.value for o in outcomes if o.status == "value" and o.value is not None]

    if len(values) == SOLVER_COUNT and all(
        cfg.equal(a, b) for i, a in enumerate(values) for b in values[i + 1 :]
    ):
        return FilterDecision(verdict="reject_trivial")

    error_kinds = [o.error_kind for o in outcomes if o.status == "error"]
    if len(error_kinds) == SOLVER_COUNT and len(set(error_kinds)) == 1:
        return FilterDecision(verdict="reject_non_executable")

    clusters = _tolerance_clusters(values, cfg)
    if clusters:
        best = max(clusters, key=len)
        if len(best) >= 3:
            return FilterDecision(
                verdict="accept", value=float(statistics.median(best)), support=len(best)
            )
    return FilterDecision(verdict="reject_unstable")


def _tolerance_clusters(values: Sequence[float], cfg: EquivalenceConfig) -> list[list[float]]:
    """Greedy clustering of sorted values, anchored at each cluster's first
    element so chains cannot drift past the tolerance."""
    clusters: list[list[float]] = []
    anchor = None
    for value in sorted(values):
        if anchor is not None and cfg.equal(anchor, value):
            clusters[-1].append(value)
        else:
            clusters.append([value])
            anchor = value
    return clusters


def verify_answer(
    task: ComputationalTask,
    backends: Backends,
    prompts: PromptLibrary,
    sandbox_cfg: SandboxConfig,
    *,
    tol: EquivalenceConfig | None = None,
    redesigns: int = 1,
    solver_runner: Callable[[Sequence[str], SandboxConfig], list[SolverOutcome]] = run_solvers,
) -> tuple[ComputationalTask, FilterDecision]:
    """Answer ``task`` by solver vote, then judge the accepted value.

    Five solver programs are sampled (the prompt carries the variant index so
    the samples stay independent), executed in the sandbox, and filtered on
    their agreement pattern. An accepted value goes to a consistency judge;
    on an inconsistent verdict the scenario is recomposed once and the whole
    vote reruns. The returned task always retains all five outcomes of the
    last round, answered or not.
    """
    current = task
    for round_index in range(1 + max(0, redesigns)):
        sources = []
        for variant in range(1, SOLVER_COUNT + 1):
            raw = backends.llm_complete(
                prompts.render(
                    "solver_generate", question=current.question, variant=variant, total=SOLVER_COUNT
                )
            )
            sources.append(strip_code_fences(raw))
        outcomes = solver_runner(sources, sandbox_cfg)
        current.solver_record = list(outcomes)
        decision = classify_outcomes(outcomes, tol)
        if decision.verdict != "accept":
            log.info("solver vote rejected the task: %s", decision.verdict)
            return current, decision

        verdict = request_json(
            backends,
            prompts.render("answer_verify", question=current.question, value=decision.value),
            check=lambda d: require_fields(d, {"consistent": bool}),
            label="answer verifier",
        )
        if verdict["consistent"]:
            units = str(verdict.get("answer_units", "")).strip()
            value_text = format_value(decision.value)
            current.answer = f"{value_text} {units}".strip()
            return current, decision
        if round_index < redesigns:
            log.warning("verifier found the answer inconsistent; redesigning the scenario")
            redesign_backends = backends.for_namespace(
                f"{backends.namespace}/redesign{round_index + 1}"
            )
            current = compose_scenario_question(
                current.model, current.seed, redesign_backends, prompts
            )
            backends = redesign_backends
    log.warning("verifier rejected the answer with no redesigns left; dropping the task")
    return current, FilterDecision(verdict="reject_unstable")


def format_value(value: float) -> str:
    """Render an accepted value as compact decimal text (62.77, not 62.7700)."""
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    return text


_FENCE_BLOCK_RE = re.compile(r"```(?:python)?\s*\n(.*?)```", re.DOTALL)


def strip_code_fences(text: str) -> str:
    """Unwrap a fenced code block if the model added one."""
    match = _FENCE_BLOCK_RE.search(text)
    return match.group(1).strip() if match else text.strip()
