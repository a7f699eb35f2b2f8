"""Retrieval and RAG metrics plus report writers.

All accuracies are plain fractions over the supplied queries. Retrieval runs
first and sequentially; only the generator calls are spread over a thread
pool (bounded by the backend's ``max_in_flight``), and per-query verdicts are
aggregated by query id, so the result never depends on completion order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Document, InvertedIndex, Query, normalize_text
from .genio.backends import GeneratorBackend
from .genio.cache import RagCache, RagRecord
from .genio.labels import eval_generation, generate, offline_record
from .genio.prompts import render_prompt, template_for
from .search import Retriever

__all__ = [
    "EvalResult",
    "contains_answer",
    "ir_accuracy",
    "rag_verdicts",
    "rag_accuracy",
    "best_of_n",
    "score_sorted_accuracy",
    "results_to_json",
    "results_from_json",
    "results_to_csv",
    "summary_table",
    "write_reports",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = ("dataset", "retriever", "metric", "ndocs", "value", "correct", "n_queries", "config_hash")


@dataclass(frozen=True)
class EvalResult:
    dataset: str
    retriever: str
    metric: str
    ndocs: int
    value: float
    correct: int
    n_queries: int
    config_hash: str = ""

    def __post_init__(self):
        if self.n_queries <= 0:
            raise ValueError("an evaluation needs at least one query")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"accuracy {self.value} outside [0, 1]")

    @classmethod
    def from_counts(cls, dataset, retriever, metric, ndocs, correct, n, config_hash="") -> "EvalResult":
        return cls(dataset, retriever, metric, int(ndocs), correct / n if n else 0.0, int(correct), int(n), config_hash)

    @property
    def percent(self) -> float:
        return 100.0 * self.value


def contains_answer(doc: Document, query: Query) -> bool:
    text = normalize_text(doc.text)
    return any(normalize_text(a) and normalize_text(a) in text for a in query.answers)


def _name(retriever) -> str:
    return getattr(retriever, "name", type(retriever).__name__)


def ir_accuracy(
    retriever: Retriever, queries: Sequence[Query], k: int = 1, dataset: str = "", config_hash: str = ""
) -> EvalResult:
    """Share of queries with an answer string inside one of the top-``k`` documents."""
    if any(q.task_kind != "freeform" for q in queries):
        raise ValueError("IR accuracy needs free-form queries with answer strings")
    index: InvertedIndex = retriever.index
    hits = 0
    for q in queries:
        docs = [index.document(h.doc_id) for h in retriever.retrieve(q, k)]
        hits += any(contains_answer(d, q) for d in docs)
    return EvalResult.from_counts(dataset, _name(retriever), f"ir_accuracy@{k}", k, hits, len(queries), config_hash)


def _verdict(backend, query: Query, docs: list[Document], cache: RagCache | None, trace: list | None) -> int:
    if cache is not None and len(docs) == 1:
        rec, _ = offline_record(backend, query, docs[0], None, cache)
        verdict = int(rec.label)
        prompt_text = None
    else:
        prompt = render_prompt(template_for(query), query, docs)
        prompt_text = prompt.text
        verdict = eval_generation(query, generate(backend, prompt.text, task_kind=query.task_kind))
    if trace is not None:
        if prompt_text is None:
            prompt_text = render_prompt(template_for(query), query, docs).text
        trace.append(
            {
                "qid": query.query_id,
                "prompt_sha256": hashlib.sha256(prompt_text.encode("utf-8")).hexdigest(),
                "doc_ids": [d.doc_id for d in docs],
                "verdict": verdict,
            }
        )
    return verdict


def _run(backend, jobs: list[tuple[Query, list[Document]]], cache, trace) -> dict[str, int]:
    workers = max(1, int(getattr(backend, "max_in_flight", 1)))
    local: list[list] = [[] for _ in jobs] if trace is not None else [None] * len(jobs)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        verdicts = list(ex.map(lambda j: _verdict(backend, j[1][0], j[1][1], cache, local[j[0]]), enumerate(jobs)))
    if trace is not None:
        for part in local:
            trace.extend(part)
    return {q.query_id: v for (q, _), v in zip(jobs, verdicts)}


def rag_verdicts(
    retriever: Retriever,
    backend: GeneratorBackend,
    queries: Sequence[Query],
    ndocs: int = 1,
    cache: RagCache | None = None,
    trace: list | None = None,
) -> dict[str, int]:
    """Per-query 0/1 outcome with the top-``ndocs`` documents in the prompt.

    With a cache, single-document verdicts are read from (or written to) its
    generation-backed records, so a repeated evaluation costs no calls.
    """
    if ndocs < 1:
        raise ValueError("ndocs must be >= 1")
    index: InvertedIndex = retriever.index
    jobs = [(q, [index.document(h.doc_id) for h in retriever.retrieve(q, ndocs)]) for q in queries]
    return _run(backend, jobs, cache, trace)


def rag_accuracy(
    retriever: Retriever,
    backend: GeneratorBackend,
    queries: Sequence[Query],
    ndocs: int = 1,
    cache: RagCache | None = None,
    dataset: str = "",
    config_hash: str = "",
    trace: list | None = None,
) -> EvalResult:
    v = rag_verdicts(retriever, backend, queries, ndocs, cache, trace)
    return EvalResult.from_counts(
        dataset, _name(retriever), f"rag_accuracy@{ndocs}", ndocs, sum(v.values()), len(queries), config_hash
    )


def best_of_n(
    retrievers: Sequence[Retriever],
    backend: GeneratorBackend,
    queries: Sequence[Query],
    ndocs: int = 1,
    cache: RagCache | None = None,
    dataset: str = "",
    config_hash: str = "",
) -> EvalResult:
    """Share of queries solved by at least one of the retrievers."""
    if not retrievers:
        raise ValueError("best_of_n needs at least one retriever")
    solved = {q.query_id: 0 for q in queries}
    for r in retrievers:
        for qid, v in rag_verdicts(r, backend, queries, ndocs, cache).items():
            solved[qid] |= v
    name = "best_of_" + "+".join(_name(r) for r in retrievers)
    return EvalResult.from_counts(dataset, name, f"best_of_{len(retrievers)}@{ndocs}", ndocs,
                                  sum(solved.values()), len(queries), config_hash)


def score_sorted_accuracy(
    backend: GeneratorBackend,
    queries: Sequence[Query],
    candidates: Mapping[str, Sequence[RagRecord]],
    index: InvertedIndex,
    ndocs: int = 1,
    cache: RagCache | None = None,
    dataset: str = "",
    config_hash: str = "",
) -> tuple[EvalResult, EvalResult]:
    """RAG accuracy over the same candidates, ordered by relevance and by RAG score.

    ``candidates[qid]`` lists scored records in retrieval order. The score
    ordering is a stable sort, so equal scores keep their relevance order.
    """
    by_rel, by_score = [], []
    for q in queries:
        recs = list(candidates.get(q.query_id, ()))
        ranked = sorted(recs, key=lambda r: -r.log_score)
        by_rel.append((q, [index.document(r.doc_id) for r in recs[:ndocs]]))
        by_score.append((q, [index.document(r.doc_id) for r in ranked[:ndocs]]))
    v_rel = _run(backend, by_rel, cache, None)
    v_score = _run(backend, by_score, cache, None)
    n = len(queries)
    return (
        EvalResult.from_counts(dataset, "relevance-sorted", f"rag_accuracy@{ndocs}", ndocs,
                               sum(v_rel.values()), n, config_hash),
        EvalResult.from_counts(dataset, "ragscore-sorted", f"rag_accuracy@{ndocs}", ndocs,
                               sum(v_score.values()), n, config_hash),
    )


# reports


def results_to_json(results: Iterable[EvalResult], config_hash: str = "") -> str:
    doc = {"config_hash": config_hash, "results": [asdict(r) for r in results]}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def results_from_json(text: str) -> tuple[list[EvalResult], str]:
    doc = json.loads(text)
    return [EvalResult(**r) for r in doc["results"]], doc.get("config_hash", "")


def results_to_csv(results: Iterable[EvalResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in results:
        row = asdict(r)
        w.writerow([f"{row[c]:.6f}" if c == "value" else row[c] for c in REPORT_COLUMNS])
    return buf.getvalue()


def summary_table(results: Sequence[EvalResult]) -> str:
    headers = ("dataset", "retriever", "metric", "acc(%)", "n")
    rows = [(r.dataset, r.retriever, r.metric, f"{r.percent:.1f}", str(r.n_queries)) for r in results]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(headers)]
    line = lambda cells: "  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    out = [line(headers), "  ".join("-" * w for w in widths)]
    out += [line(row) for row in rows]
    return "\n".join(out) + "\n"


def write_reports(results: Sequence[EvalResult], out_dir: str | Path, config_hash: str = "",
                  stem: str = "eval") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / f"{stem}.json", "csv": out / f"{stem}.csv", "txt": out / f"{stem}.txt"}
    paths["json"].write_text(results_to_json(results, config_hash), encoding="utf-8")
    paths["csv"].write_text(results_to_csv(results), encoding="utf-8")
    paths["txt"].write_text(summary_table(results), encoding="utf-8")
    return paths
