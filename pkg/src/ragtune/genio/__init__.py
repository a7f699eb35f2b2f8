"""Generator I/O: prompt rendering, backends, RAG labels/scores and their cache."""

from .backends import (
    BackendError,
    BackendFatal,
    BackendUnavailable,
    CountingBackend,
    GenerationResult,
    GeneratorBackend,
    HttpCompletionsBackend,
    MockOracleBackend,
    MultiTokenLabel,
    UnsupportedCapability,
)
from .cache import SCORE_FLOOR, RagCache, RagRecord
from .labels import (
    closedset_choice_logprobs,
    closedset_score,
    continuation_logprob,
    eval_generation,
    generate,
    offline_record,
    rag_label_offline,
    rag_score,
)
from .prompts import TEMPLATES, PromptTemplate, RenderedPrompt, render_prompt, split_sections, template_for

__all__ = [
    "SCORE_FLOOR",
    "RagCache",
    "RagRecord",
    "BackendError",
    "BackendFatal",
    "BackendUnavailable",
    "CountingBackend",
    "GenerationResult",
    "GeneratorBackend",
    "HttpCompletionsBackend",
    "MockOracleBackend",
    "MultiTokenLabel",
    "UnsupportedCapability",
    "closedset_choice_logprobs",
    "closedset_score",
    "continuation_logprob",
    "eval_generation",
    "generate",
    "offline_record",
    "rag_label_offline",
    "rag_score",
    "TEMPLATES",
    "PromptTemplate",
    "RenderedPrompt",
    "render_prompt",
    "split_sections",
    "template_for",
]
