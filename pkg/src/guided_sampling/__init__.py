"""Concept-guided sampling for language models.

Explore a question's solution concepts first, then spend the generation
budget across them, instead of drawing every sample from the same prompt.
Ships the repeated-sampling baseline, exact pass@k scoring, a synthetic
tractable model of when guidance beats plain resampling, resumable run
artifacts, and training-corpus distillation from verified runs.
"""

from __future__ import annotations

from .backend import (
    CategoricalSpec,
    CompletionRequest,
    CompletionResponse,
    HttpBackend,
    ScriptedBackend,
    load_script,
    scripted_backend_from_table,
)
from .core import (
    Budget,
    Candidate,
    Concept,
    PassKQuery,
    Question,
    VerifierSpec,
    allocate_budget,
    derive_seed,
    load_questions,
    macro_pass_at_k,
    pass_at_k,
)
from .datasynth import (
    TrainingRecord,
    build_caa,
    build_fa,
    parse_caa,
    render_caa,
    synthesize,
    write_corpus,
)
from .errors import GuidedSamplingError
from .eval import (
    DiversityReport,
    PassKReport,
    diversity_report,
    extract_concept,
    normalize_concept_label,
    passk_report,
    verify_candidate,
)
from .prompts import PromptTemplates, templates_for
from .sampler import (
    DecodingParams,
    ExplorationResult,
    RunArtifact,
    explore,
    generate,
    read_artifact,
    repeated_sample,
    run_experiment,
)
from .store import SampleKey, SampleStore
from .theory import SyntheticModel, condition_lhs, lower_bound, p_gs, p_rs, sweep_models

__version__ = "0.1.0"

__all__ = [
    "Budget",
    "Candidate",
    "CategoricalSpec",
    "CompletionRequest",
    "CompletionResponse",
    "Concept",
    "DecodingParams",
    "DiversityReport",
    "ExplorationResult",
    "GuidedSamplingError",
    "HttpBackend",
    "PassKQuery",
    "PassKReport",
    "PromptTemplates",
    "Question",
    "RunArtifact",
    "SampleKey",
    "SampleStore",
    "ScriptedBackend",
    "SyntheticModel",
    "TrainingRecord",
    "VerifierSpec",
    "allocate_budget",
    "build_caa",
    "build_fa",
    "condition_lhs",
    "derive_seed",
    "diversity_report",
    "explore",
    "extract_concept",
    "generate",
    "load_questions",
    "load_script",
    "lower_bound",
    "macro_pass_at_k",
    "normalize_concept_label",
    "p_gs",
    "p_rs",
    "parse_caa",
    "pass_at_k",
    "passk_report",
    "read_artifact",
    "render_caa",
    "repeated_sample",
    "run_experiment",
    "scripted_backend_from_table",
    "sweep_models",
    "synthesize",
    "templates_for",
    "verify_candidate",
    "write_corpus",
]
