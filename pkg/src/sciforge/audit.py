"""Dataset overlap and diversity auditing.

Text similarity is a fixed blend of two views: dense embeddings (default:
the deterministic feature-hashing provider) and TF-IDF over a vocabulary
fitted on the union of the two corpora being compared, weighted 0.7/0.3.
On top of that sit near-duplicate counting at fixed thresholds,
max-neighbor statistics, gazetteer-based entity Jaccard, keyword domain
distributions, and intra-corpus diversity.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .backends import hashed_embedding_provider, tokenize
from .errors import ConfigError

log = logging.getLogger(__name__)

DEFAULT_WEIGHT_EMBED = 0.7
DEFAULT_WEIGHT_TFIDF = 0.3
DEFAULT_THRESHOLDS = (0.80, 0.85, 0.90)

# Six fixed analysis domains plus five editable ones; override via config.
DEFAULT_DOMAIN_KEYWORDS: dict[str, list[str]] = {
    "Genetics": ["gene", "allele", "mutation", "genome", "locus", "variant", "crispr"],
    "Biochemistry": ["enzyme", "substrate", "kinase", "metabolite", "catalysis", "binding"],
    "Pharmacology": ["drug", "dose", "inhibitor", "agonist", "pharmacokinetic", "ic50"],
    "Oncology": ["tumor", "cancer", "carcinoma", "metastasis", "oncogene", "chemotherapy"],
    "Immunology": ["antibody", "antigen", "cytokine", "t cell", "immune", "macrophage"],
    "Computational Modeling": [
        "model",
        "simulation",
        "equation",
        "parameter",
        "ode",
        "kinetics",
    ],
    "Microbiology": ["bacteria", "viral", "microbial", "pathogen", "strain", "biofilm"],
    "Neuroscience": ["neuron", "synapse", "cortex", "neural", "receptor signaling", "axon"],
    "Cell Biology": ["cell cycle", "apoptosis", "organelle", "mitochondria", "cytoskeleton"],
    "Structural Biology": ["crystal structure", "conformation", "fold", "domain", "cryo-em"],
    "Analytical Chemistry": ["assay", "chromatography", "spectrometry", "titration", "hplc"],
}

DEFAULT_GAZETTEERS: dict[str, list[str]] = {
    "genes_proteins": ["axl", "kras", "tp53", "egfr", "brca1", "myc", "akt1", "gpx4"],
    "diseases": [
        "breast cancer",
        "melanoma",
        "alzheimer disease",
        "diabetes",
        "leukemia",
        "fibrosis",
    ],
    "drugs": ["cisplatin", "erlotinib", "doxorubicin", "metformin", "paclitaxel", "imatinib"],
    "cell_types": ["t cell", "macrophage", "fibroblast", "hepatocyte", "neuron", "b cell"],
}


@dataclass
class AuditConfig:
    weight_embed: float = DEFAULT_WEIGHT_EMBED
    weight_tfidf: float = DEFAULT_WEIGHT_TFIDF
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    domain_keywords: dict[str, list[str]] = field(
        default_factory=lambda: {k: list(v) for k, v in DEFAULT_DOMAIN_KEYWORDS.items()}
    )
    gazetteers: dict[str, list[str]] = field(
        default_factory=lambda: {k: list(v) for k, v in DEFAULT_GAZETTEERS.items()}
    )
    embed_dim: int = 256

    def __post_init__(self) -> None:
        if abs(self.weight_embed + self.weight_tfidf - 1.0) > 1e-9:
            raise ConfigError(
                f"similarity weights must sum to 1, got {self.weight_embed}+{self.weight_tfidf}"
            )
        if not self.thresholds:
            raise ConfigError("need at least one near-duplicate threshold")
        ordered = tuple(sorted(self.thresholds))
        if ordered != tuple(self.thresholds):
            raise ConfigError(f"thresholds must be ascending: {self.thresholds}")
        for t in self.thresholds:
            if not 0.0 <= t <= 1.0:
                raise ConfigError(f"threshold {t} outside [0, 1]")
        if len(set(self.thresholds)) != len(self.thresholds):
            raise ConfigError(f"duplicate thresholds: {self.thresholds}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AuditConfig":
        kwargs: dict[str, Any] = {}
        if "weight_embed" in data:
            kwargs["weight_embed"] = float(data["weight_embed"])
        if "weight_tfidf" in data:
            kwargs["weight_tfidf"] = float(data["weight_tfidf"])
        if "thresholds" in data:
            kwargs["thresholds"] = tuple(float(t) for t in data["thresholds"])
        if "domain_keywords" in data:
            kwargs["domain_keywords"] = {
                str(k): [str(w) for w in v] for k, v in data["domain_keywords"].items()
            }
        if "gazetteers" in data:
            kwargs["gazetteers"] = {
                str(k): [str(w) for w in v] for k, v in data["gazetteers"].items()
            }
        if "embed_dim" in data:
            kwargs["embed_dim"] = int(data["embed_dim"])
        return cls(**kwargs)


class TfidfVectorizer:
    """Minimal TF-IDF with the exact recipe this audit is pinned to.

    Lowercase alphanumeric tokens, raw term counts, smoothed idf
    ``ln((1 + n) / (1 + df)) + 1``, then L2 normalization per row. The
    vocabulary must be fitted on the union corpus before vectorizing either
    side of a comparison.
    """

    def __init__(self) -> None:
        self.vocabulary: dict[str, int] = {}
        self.idf: np.ndarray | None = None

    def fit(self, corpus: Sequence[str]) -> "TfidfVectorizer":
        if not corpus:
            raise ValueError("cannot fit TF-IDF on an empty corpus")
        df: dict[str, int] = {}
        for text in corpus:
            for token in set(tokenize(text)):
                df[token] = df.get(token, 0) + 1
        self.vocabulary = {token: i for i, token in enumerate(sorted(df))}
        n = len(corpus)
        idf = np.zeros(len(self.vocabulary))
        for token, i in self.vocabulary.items():
            idf[i] = math.log((1 + n) / (1 + df[token])) + 1.0
        self.idf = idf
        return self

    def transform(self, corpus: Sequence[str]) -> np.ndarray:
        if self.idf is None:
            raise ValueError("vectorizer is not fitted")
        out = np.zeros((len(corpus), len(self.vocabulary)))
        for row, text in enumerate(corpus):
            for token in tokenize(text):
                col = self.vocabulary.get(token)
                if col is not None:
                    out[row, col] += 1.0
            out[row] *= self.idf
            norm = float(np.linalg.norm(out[row]))
            if norm > 0.0:
                out[row] /= norm
        # rows with no in-vocabulary tokens stay zero: cosine 0 against anything
        return out


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarities; zero rows yield zero similarity."""
    norms_a = np.linalg.norm(a, axis=1, keepdims=True)
    norms_b = np.linalg.norm(b, axis=1, keepdims=True)
    safe_a = np.divide(a, norms_a, out=np.zeros_like(a), where=norms_a > 0)
    safe_b = np.divide(b, norms_b, out=np.zeros_like(b), where=norms_b > 0)
    return safe_a @ safe_b.T


class SimilarityScorer:
    """Combined-similarity scorer over one fitted union vocabulary."""

    def __init__(
        self,
        union_corpus: Sequence[str],
        cfg: AuditConfig | None = None,
        embed_fn: Callable[[Sequence[str]], np.ndarray] | None = None,
    ) -> None:
        self.cfg = cfg or AuditConfig()
        self.embed_fn = embed_fn or hashed_embedding_provider(self.cfg.embed_dim)
        self.tfidf = TfidfVectorizer().fit(union_corpus)

    def matrix(self, a: Sequence[str], b: Sequence[str]) -> np.ndarray:
        """Pairwise combined similarities, clipped into [0, 1]."""
        cos_e = _cosine_matrix(self.embed_fn(a), self.embed_fn(b))
        cos_t = _cosine_matrix(self.tfidf.transform(a), self.tfidf.transform(b))
        blend = self.cfg.weight_embed * cos_e + self.cfg.weight_tfidf * cos_t
        return np.clip(blend, 0.0, 1.0)

    def similarity(self, a: str, b: str) -> float:
        return float(self.matrix([a], [b])[0, 0])


def combined_similarity(
    a: str,
    b: str,
    scorer: SimilarityScorer,
) -> float:
    """Similarity of one text pair under an already-fitted scorer."""
    return scorer.similarity(a, b)


def pair_stats(
    corpus_a: Sequence[str],
    corpus_b: Sequence[str],
    cfg: AuditConfig | None = None,
    embed_fn: Callable[[Sequence[str]], np.ndarray] | None = None,
) -> dict[str, Any]:
    """Near-duplicate and neighbor statistics for one corpus pair.

    When the two corpora are the same (identity or equal content), self
    pairs are excluded: counts and the mean run over unordered distinct
    pairs, and each question's max-neighbor ignores itself.
    """
    cfg = cfg or AuditConfig()
    if not corpus_a or not corpus_b:
        raise ValueError("pair_stats needs non-empty corpora")
    same = corpus_a is corpus_b or list(corpus_a) == list(corpus_b)
    scorer = SimilarityScorer(list(corpus_a) + list(corpus_b), cfg, embed_fn)
    sims = scorer.matrix(corpus_a, corpus_b)

    if same:
        n = len(corpus_a)
        if n < 2:
            raise ValueError("self comparison needs at least 2 texts")
        mask = ~np.eye(n, dtype=bool)
        upper = np.triu(mask)
        flat = sims[upper]
        near_dup = {_fmt(t): int(np.count_nonzero(flat >= t)) for t in cfg.thresholds}
        mean_pairwise = float(flat.mean())
        neighbor = np.where(mask, sims, -np.inf).max(axis=0)
    else:
        flat = sims.ravel()
        near_dup = {_fmt(t): int(np.count_nonzero(flat >= t)) for t in cfg.thresholds}
        mean_pairwise = float(flat.mean())
        neighbor = sims.max(axis=0)

    return {
        "near_dup_counts": near_dup,
        "mean_pairwise": mean_pairwise,
        "mean_max_neighbor": float(neighbor.mean()),
        "max_neighbor": [float(x) for x in neighbor],
    }


def _fmt(threshold: float) -> str:
    return f"{threshold:.2f}"


def _match_terms(texts: Sequence[str], gazetteers: dict[str, list[str]]) -> set[str]:
    """Canonical gazetteer terms present in any text, token-sequence matched."""
    token_lists = [tokenize(t) for t in texts]
    found: set[str] = set()
    for category, terms in gazetteers.items():
        for term in terms:
            needle = tuple(tokenize(term))
            if not needle:
                continue
            key = f"{category}:{' '.join(needle)}"
            for tokens in token_lists:
                if _contains_sequence(tokens, needle):
                    found.add(key)
                    break
    return found


def _contains_sequence(tokens: list[str], needle: tuple[str, ...]) -> bool:
    k = len(needle)
    if k == 0 or k > len(tokens):
        return False
    first = needle[0]
    for i, token in enumerate(tokens[: len(tokens) - k + 1]):
        if token == first and tuple(tokens[i : i + k]) == needle:
            return True
    return False


def entity_jaccard(
    corpus_a: Sequence[str],
    corpus_b: Sequence[str],
    cfg: AuditConfig | None = None,
) -> float:
    """Jaccard overlap of gazetteer entities mentioned by the two corpora.

    Both sets empty counts as zero overlap, not 1.0: two corpora that
    mention no tracked entity share no tracked entity.
    """
    cfg = cfg or AuditConfig()
    found_a = _match_terms(corpus_a, cfg.gazetteers)
    found_b = _match_terms(corpus_b, cfg.gazetteers)
    union = found_a | found_b
    if not union:
        return 0.0
    return len(found_a & found_b) / len(union)


def domain_distribution(corpus: Sequence[str], cfg: AuditConfig | None = None) -> dict[str, float]:
    """Keyword-based share of each analysis domain across the corpus.

    A text contributes to every domain whose keyword list it matches
    (token-sequence match, so multi-word keywords work). The vector sums to
    1 unless nothing matched at all, in which case it is all zeros.
    """
    cfg = cfg or AuditConfig()
    counts = {domain: 0 for domain in cfg.domain_keywords}
    for text in corpus:
        tokens = tokenize(text)
        for domain, keywords in cfg.domain_keywords.items():
            for keyword in keywords:
                needle = tuple(tokenize(keyword))
                if needle and _contains_sequence(tokens, needle):
                    counts[domain] += 1
                    break
    total = sum(counts.values())
    if total == 0:
        return {domain: 0.0 for domain in counts}
    return {domain: counts[domain] / total for domain in counts}


def domain_cosine(dist_a: dict[str, float], dist_b: dict[str, float]) -> float:
    """Cosine between two domain distributions; zero vectors give 0."""
    domains = sorted(set(dist_a) | set(dist_b))
    a = np.array([dist_a.get(d, 0.0) for d in domains])
    b = np.array([dist_b.get(d, 0.0) for d in domains])
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def intra_diversity(
    corpus: Sequence[str],
    cfg: AuditConfig | None = None,
    embed_fn: Callable[[Sequence[str]], np.ndarray] | None = None,
) -> float:
    """Mean combined similarity over unordered distinct pairs of one corpus."""
    if len(corpus) < 2:
        raise ValueError("intra_diversity needs at least 2 texts")
    return pair_stats(corpus, corpus, cfg, embed_fn)["mean_pairwise"]


@dataclass
class SimilarityReport:
    pair_name: str
    near_dup_counts: dict[str, int]
    mean_pairwise: float
    mean_max_neighbor: float
    entity_jaccard: float
    domain_cosine: float
    self_similarity: float | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "pair_name": self.pair_name,
            "near_dup_counts": dict(self.near_dup_counts),
            "mean_pairwise": self.mean_pairwise,
            "mean_max_neighbor": self.mean_max_neighbor,
            "entity_jaccard": self.entity_jaccard,
            "domain_cosine": self.domain_cosine,
        }
        if self.self_similarity is not None:
            out["self_similarity"] = self.self_similarity
        return out


def build_report(
    corpora: Sequence[tuple[str, Sequence[str]]],
    cfg: AuditConfig | None = None,
    embed_fn: Callable[[Sequence[str]], np.ndarray] | None = None,
    *,
    max_neighbor_csv: Path | str | None = None,
) -> dict[str, Any]:
    """Audit every corpus against itself and every unordered pair.

    Output is deterministic: rows follow the input order, JSON keys are
    emitted in a fixed order, and the optional CSV dump carries the full
    max-neighbor distribution per cross pair.
    """
    cfg = cfg or AuditConfig()
    names = [name for name, _ in corpora]
    if len(set(names)) != len(names):
        raise ValueError(f"corpus names must be unique: {names}")

    distributions = {name: domain_distribution(texts, cfg) for name, texts in corpora}
    intra_rows = []
    for name, texts in corpora:
        stats = pair_stats(texts, texts, cfg, embed_fn) if len(texts) >= 2 else None
        intra_rows.append(
            SimilarityReport(
                pair_name=name,
                near_dup_counts=stats["near_dup_counts"] if stats else {},
                mean_pairwise=stats["mean_pairwise"] if stats else 0.0,
                mean_max_neighbor=stats["mean_max_neighbor"] if stats else 0.0,
                entity_jaccard=entity_jaccard(texts, texts, cfg),
                domain_cosine=domain_cosine(distributions[name], distributions[name]),
                self_similarity=stats["mean_pairwise"] if stats else 0.0,
            ).to_dict()
        )

    pair_rows = []
    csv_rows: list[dict[str, Any]] = []
    for i in range(len(corpora)):
        for j in range(i + 1, len(corpora)):
            name_a, texts_a = corpora[i]
            name_b, texts_b = corpora[j]
            stats = pair_stats(texts_a, texts_b, cfg, embed_fn)
            pair_rows.append(
                SimilarityReport(
                    pair_name=f"{name_a}|{name_b}",
                    near_dup_counts=stats["near_dup_counts"],
                    mean_pairwise=stats["mean_pairwise"],
                    mean_max_neighbor=stats["mean_max_neighbor"],
                    entity_jaccard=entity_jaccard(texts_a, texts_b, cfg),
                    domain_cosine=domain_cosine(distributions[name_a], distributions[name_b]),
                ).to_dict()
            )
            for idx, value in enumerate(stats["max_neighbor"]):
                csv_rows.append(
                    {"pair": f"{name_a}|{name_b}", "index": idx, "max_neighbor": value}
                )

    if max_neighbor_csv is not None:
        path = Path(max_neighbor_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["pair", "index", "max_neighbor"])
            writer.writeheader()
            writer.writerows(csv_rows)

    return {
        "thresholds": [_fmt(t) for t in cfg.thresholds],
        "weights": {"embed": cfg.weight_embed, "tfidf": cfg.weight_tfidf},
        "domains": {name: distributions[name] for name in names},
        "intra": intra_rows,
        "pairs": pair_rows,
    }
