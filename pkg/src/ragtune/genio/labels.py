"""RAG scores, RAG labels and the generation evaluation rule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from ..corpus import Document, Query, normalize_text, tokenize
from .backends import GenerationResult, GeneratorBackend, MultiTokenLabel
from .cache import SCORE_FLOOR, RagCache, RagRecord
from .prompts import PromptTemplate, render_prompt, template_for

__all__ = [
    "MAX_TOKENS",
    "ScoredContinuation",
    "continuation_logprob",
    "rag_score",
    "generate",
    "eval_generation",
    "rag_label_offline",
    "closedset_choice_logprobs",
    "offline_record",
]

MAX_TOKENS = {"freeform": 100, "closedset": 20}


@dataclass(frozen=True)
class ScoredContinuation:
    log_score: float
    per_answer: tuple[float, ...]
    floored: bool


def _floor(x: float) -> tuple[float, bool]:
    if math.isnan(x) or math.isinf(x) or x < SCORE_FLOOR:
        return SCORE_FLOOR, True
    return min(x, 0.0), False


def continuation_logprob(backend: GeneratorBackend, prompt: str, continuation: str) -> float:
    """log P(continuation | prompt); an empty continuation has probability 1."""
    if not continuation:
        return 0.0
    value, _ = _floor(backend.continuation_logprob(prompt, continuation))
    return value


def rag_score(
    backend: GeneratorBackend,
    query: Query,
    doc: Document | Sequence[Document],
    template: PromptTemplate | str | None = None,
) -> ScoredContinuation:
    """Max over the query's answers of the continuation log-probability."""
    if query.task_kind != "freeform":
        raise ValueError("rag_score expects a free-form query; use closedset_choice_logprobs")
    docs = [doc] if isinstance(doc, Document) else list(doc)
    prompt = render_prompt(template, query, docs).text
    raw = [backend.continuation_logprob(prompt, a) if a else 0.0 for a in query.answers]
    floored = [_floor(x) for x in raw]
    per = tuple(v for v, _ in floored)
    best = max(range(len(per)), key=lambda i: per[i])
    return ScoredContinuation(per[best], per, floored[best][1])


def generate(
    backend: GeneratorBackend, prompt: str, max_tokens: int | None = None, task_kind: str = "freeform"
) -> GenerationResult:
    if max_tokens is None:
        max_tokens = MAX_TOKENS[task_kind]
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    return backend.generate(prompt, max_tokens)


def eval_generation(query: Query, generation: str | GenerationResult) -> int:
    text = generation.text if isinstance(generation, GenerationResult) else generation
    if query.task_kind == "freeform":
        hay = normalize_text(text)
        return int(any(normalize_text(a) and normalize_text(a) in hay for a in query.answers))
    labels = {lab.lower(): lab for lab in query.labels}
    correct = {c.lower() for c in query.correct}
    for tok in tokenize(text):
        if tok in labels:
            return int(tok in correct)
    return 0


def rag_label_offline(
    backend: GeneratorBackend,
    query: Query,
    doc: Document | Sequence[Document],
    template: PromptTemplate | str | None = None,
) -> int:
    docs = [doc] if isinstance(doc, Document) else list(doc)
    prompt = render_prompt(template, query, docs).text
    return eval_generation(query, generate(backend, prompt, task_kind=query.task_kind))


def closedset_choice_logprobs(
    backend: GeneratorBackend, prompt: str, labels: Sequence[str]
) -> dict[str, float]:
    for lab in labels:
        if len(tokenize(lab)) != 1 or lab.strip() != lab:
            raise MultiTokenLabel(f"choice label {lab!r} is not a single token")
    got = backend.choice_logprobs(prompt, list(labels))
    return {lab: _floor(got[lab])[0] for lab in labels}


def closedset_score(backend: GeneratorBackend, query: Query, docs: Sequence[Document], template=None):
    """Choice log-probs plus the log-score of the best correct label."""
    prompt = render_prompt(template, query, list(docs)).text
    lps = closedset_choice_logprobs(backend, prompt, query.labels)
    per = tuple(lps[c] for c in query.correct)
    return lps, ScoredContinuation(max(per), per, False)


def offline_record(
    backend: GeneratorBackend,
    query: Query,
    doc: Document,
    template: PromptTemplate | str | None = None,
    cache: RagCache | None = None,
) -> tuple[RagRecord, bool]:
    """Score and label ``doc`` for ``query`` by full generation.

    Returns ``(record, fresh)``; ``fresh`` is False on a cache hit, in which
    case no backend call is made.
    """
    tmpl = template_for(query) if template is None else template
    tid = tmpl if isinstance(tmpl, str) else tmpl.template_id
    if cache is not None:
        hit = cache.lookup(query.query_id, doc.doc_id, backend.fingerprint, tid, provenance="offline")
        if hit is not None:
            return hit, False
    if query.task_kind == "freeform":
        sc = rag_score(backend, query, doc, tmpl)
    else:
        _, sc = closedset_score(backend, query, [doc], tmpl)
    label = rag_label_offline(backend, query, doc, tmpl)
    rec = RagRecord(
        query.query_id, doc.doc_id, sc.log_score, label, "offline", backend.fingerprint, tid,
        sc.per_answer, sc.floored,
    )
    if cache is not None:
        cache.put(rec)
    return rec, True
