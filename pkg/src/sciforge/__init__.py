"""Agentic synthesis of grounded scientific question-answer datasets.

Two curation pipelines (multi-hop conceptual questions and solver-verified
computational questions) run over judged seed entities, followed by a
diagnostic postprocess and a corpus-level similarity audit. All external
calls flow through a record/replay transport so runs are reproducible.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .audit import AuditConfig, SimilarityScorer, build_report, pair_stats
from .backends import Backends, Cassette, CassetteLibrary, canonical_json, request_key
from .compute import (
    ComputationalTask,
    EquivalenceConfig,
    FilterDecision,
    ModelSpec,
    UrlAssessment,
    classify_outcomes,
    verify_answer,
)
from .concept import ConceptualTask, augment_n_hops, curate_base_question, fuse_questions
from .config import PipelineConfig, load_config, make_backends
from .errors import ConfigError, ReplayMissError, SciforgeError
from .pipeline import (
    execute_run,
    resume_run,
    run_postprocess,
    run_seed_generation,
    run_task_pipeline,
    start_run,
)
from .postprocess import Diagnosis, diagnose, refine_computational, refine_conceptual
from .sandbox import SandboxConfig, SolverOutcome, run_solvers
from .seedgen import OntologyNode, SeedEntity, filter_seeds
from .store import export_jsonl, read_jsonl

__all__ = [
    "AuditConfig",
    "Backends",
    "Cassette",
    "CassetteLibrary",
    "ComputationalTask",
    "ConceptualTask",
    "ConfigError",
    "Diagnosis",
    "EquivalenceConfig",
    "FilterDecision",
    "ModelSpec",
    "OntologyNode",
    "PipelineConfig",
    "ReplayMissError",
    "SandboxConfig",
    "SciforgeError",
    "SeedEntity",
    "SimilarityScorer",
    "SolverOutcome",
    "UrlAssessment",
    "augment_n_hops",
    "build_report",
    "canonical_json",
    "classify_outcomes",
    "curate_base_question",
    "diagnose",
    "execute_run",
    "export_jsonl",
    "filter_seeds",
    "fuse_questions",
    "load_config",
    "make_backends",
    "pair_stats",
    "read_jsonl",
    "refine_computational",
    "refine_conceptual",
    "resume_run",
    "run_postprocess",
    "run_seed_generation",
    "run_solvers",
    "run_task_pipeline",
    "start_run",
    "verify_answer",
    "__version__",
]
