"""Planted synthetic benchmark for hermetic end-to-end runs.

Every query is six pseudo-words: three topic words private to the query and
three filler words shared across queries. Its answer document carries two of
the topic words and a unique answer token. Three distractors carry all three
fillers plus the third topic word but no answer, so plain overlap ranks them
above the answer document. A few queries are unreachable: their answer
document shares nothing with the query, so no lexical retriever can surface
it and offline preparation must drop them.

The oracle pass re-derives every guarantee by brute force over the corpus
and records the reference numbers the end-to-end checks compare against.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Document, Query, normalize_text, query_to_record, tokenize

__all__ = ["SynthConfig", "Benchmark", "make_benchmark", "oracle_pass", "write_benchmark", "SynthError"]

_CONS = "bcdfghjklmnprstvw"
_VOWELS = "aeiou"


class SynthError(AssertionError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_docs: int = 500
    n_queries: int = 100
    n_fillers: int = 60
    n_background: int = 340
    n_distractors: int = 3
    unreachable_fraction: float = 0.08
    body_words: int = 8
    task: str = "freeform"  # or "closedset"

    def __post_init__(self):
        needed = self.n_queries * (2 + self.n_distractors)
        if self.n_docs < needed:
            raise ValueError(f"n_docs must be >= {needed} for {self.n_queries} queries")
        if self.task not in ("freeform", "closedset"):
            raise ValueError("task must be freeform or closedset")


@dataclass
class Benchmark:
    config: SynthConfig
    documents: list[Document]
    queries: list[Query]
    planted: dict[str, dict]  # qid -> {"answer_docs": [...], "distractors": [...], "reachable": bool}
    manifest: dict


def _words(rng: np.random.Generator, n: int, taken: set[str], syllables: int) -> list[str]:
    out = []
    while len(out) < n:
        w = "".join(rng.choice(list(_CONS)) + rng.choice(list(_VOWELS)) for _ in range(syllables))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _answers(rng: np.random.Generator, n: int) -> list[str]:
    # CVxCV: the only words containing "x", all of one length, so no answer
    # can occur inside any other word
    pool = [a + b + "x" + c + d for a, b, c, d in itertools.product(_CONS, _VOWELS, _CONS, _VOWELS)]
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in idx]


def make_benchmark(cfg: SynthConfig = SynthConfig()) -> Benchmark:
    rng = np.random.default_rng(cfg.seed)
    taken: set[str] = set()
    topics = _words(rng, 3 * cfg.n_queries, taken, 3)
    fillers = _words(rng, cfg.n_fillers, taken, 2)
    background = _words(rng, cfg.n_background, taken, 3)
    answers = _answers(rng, cfg.n_queries)

    n_unreach = int(round(cfg.unreachable_fraction * cfg.n_queries))
    unreachable = set(rng.choice(cfg.n_queries, size=n_unreach, replace=False).tolist())

    def filler_body(k: int) -> list[str]:
        return [str(w) for w in rng.choice(background, size=k, replace=False)]

    raw_docs: list[tuple[str, list[str], str, int]] = []  # (title, body words, role, query index)
    query_parts = []
    for i in range(cfg.n_queries):
        t1, t2, t3 = topics[3 * i : 3 * i + 3]
        fs = [str(w) for w in rng.choice(fillers, size=3, replace=False)]
        q_words = [t1, t2, t3, *fs]
        rng.shuffle(q_words)
        query_parts.append((q_words, fs, t3))
        if i in unreachable:
            body = filler_body(cfg.body_words) + [answers[i]]
        else:
            body = filler_body(cfg.body_words - 2) + [t1, t2, answers[i]]
        rng.shuffle(body)
        raw_docs.append((" ".join(filler_body(2)), body, "answer", i))
        for _ in range(cfg.n_distractors):
            body = filler_body(cfg.body_words - 4) + fs + [t3]
            rng.shuffle(body)
            raw_docs.append((" ".join(filler_body(2)), body, "distractor", i))
    while len(raw_docs) < cfg.n_docs:
        body = filler_body(cfg.body_words - 1) + [str(rng.choice(fillers))]
        rng.shuffle(body)
        raw_docs.append((" ".join(filler_body(2)), body, "background", -1))

    # shuffle id assignment so the doc_id tie-break favours no role
    perm = rng.permutation(len(raw_docs))
    width = len(str(len(raw_docs) - 1))
    documents = []
    planted = {f"q{i:03d}": {"answer_docs": [], "distractors": [], "reachable": i not in unreachable}
               for i in range(cfg.n_queries)}
    for new_pos, old in enumerate(perm):
        title, body, role, qi = raw_docs[old]
        did = f"d{new_pos:0{width}d}"
        documents.append(Document(did, title, " ".join(body)))
        if role == "answer":
            planted[f"q{qi:03d}"]["answer_docs"].append(did)
        elif role == "distractor":
            planted[f"q{qi:03d}"]["distractors"].append(did)

    queries = []
    for i, (q_words, fs, t3) in enumerate(query_parts):
        qid = f"q{i:03d}"
        question = " ".join(q_words)
        if cfg.task == "freeform":
            queries.append(Query(qid, "freeform", question, answers=(answers[i],)))
        else:
            labels = ("A", "B", "C", "D")
            correct = labels[int(rng.integers(4))]
            choices = tuple((lab, " ".join(filler_body(2))) for lab in labels)
            queries.append(Query(qid, "closedset", question, choices=choices, correct=(correct,),
                                 evidence=(answers[i],), template="choice"))
    bench = Benchmark(cfg, documents, queries, planted, {})
    bench.manifest = oracle_pass(bench)
    return bench


def _overlap_ranking(q_tokens: set[str], doc_tokens: list[tuple[str, set[str]]]) -> list[tuple[str, int]]:
    scored = [(did, len(q_tokens & toks)) for did, toks in doc_tokens]
    scored = [s for s in scored if s[1] > 0]
    scored.sort(key=lambda s: (-s[1], s[0]))
    return scored


def _has_answer(text: str, q: Query) -> bool:
    t = normalize_text(text)
    keys = q.answers if q.task_kind == "freeform" else q.evidence
    return any(normalize_text(a) in t for a in keys)


def oracle_pass(bench: Benchmark, k_offline: int = 100) -> dict:
    """Check the construction by brute force and return the reference manifest.

    The lexical baseline ranks by count of shared distinct tokens with
    ascending doc_id on ties, which is exactly the untrained encoder's order.
    """
    docs = {d.doc_id: d for d in bench.documents}
    doc_tokens = [(d.doc_id, set(tokenize(d.text))) for d in bench.documents]
    baseline_hits, perfect_hits = 0, 0
    retained, dropped = [], []
    for q in bench.queries:
        plan = bench.planted[q.query_id]
        q_tok = set(tokenize(q.question))
        holders = sorted(did for did, d in docs.items() if _has_answer(d.text, q))
        if holders != sorted(plan["answer_docs"]):
            raise SynthError(f"{q.query_id}: answer occurs outside its planted documents: {holders}")
        if len(plan["distractors"]) < 3:
            raise SynthError(f"{q.query_id}: fewer than three distractors")
        ans_overlap = max(len(q_tok & set(tokenize(docs[d].text))) for d in plan["answer_docs"])
        for d in plan["distractors"]:
            if len(q_tok & set(tokenize(docs[d].text))) <= ans_overlap:
                raise SynthError(f"{q.query_id}: distractor {d} does not out-overlap the answer document")
        if plan["reachable"] and ans_overlap < 1:
            raise SynthError(f"{q.query_id}: reachable answer document shares no query token")
        ranking = _overlap_ranking(q_tok, doc_tokens)
        if ranking and _has_answer(docs[ranking[0][0]].text, q):
            baseline_hits += 1
        perfect_hits += bool(holders)
        top = [did for did, _ in ranking[:k_offline]]
        pos = [d for d in top if _has_answer(docs[d].text, q)]
        (retained if pos and len(pos) < len(top) else dropped).append(q.query_id)
    n = len(bench.queries)
    manifest = {
        "config": bench.config.__dict__,
        "n_docs": len(bench.documents),
        "n_queries": n,
        "vocabulary_size": len({t for _, toks in doc_tokens for t in toks} | {t for q in bench.queries for t in tokenize(q.question)}),
        "baseline_rag_at_1": 100.0 * baseline_hits / n,
        "perfect_rag_at_1": 100.0 * perfect_hits / n,
        "k_offline": k_offline,
        "expected_retained": sorted(retained),
        "expected_dropped": sorted(dropped),
        "planted": bench.planted,
    }
    if manifest["perfect_rag_at_1"] < 90.0:
        raise SynthError("a perfect retriever must reach at least 90")
    if manifest["baseline_rag_at_1"] > 60.0:
        raise SynthError("the lexical baseline must stay at or below 60")
    return manifest


def write_benchmark(
    bench: Benchmark, corpus_path: str | Path, queries_path: str | Path, oracle_path: str | Path | None = None
) -> None:
    corpus_path, queries_path = Path(corpus_path), Path(queries_path)
    oracle_path = Path(oracle_path) if oracle_path else corpus_path.parent / "oracle.json"
    for p in (corpus_path, queries_path, oracle_path):
        p.parent.mkdir(parents=True, exist_ok=True)
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for d in bench.documents:
            fh.write(json.dumps({"id": d.doc_id, "title": d.title, "text": d.body}, sort_keys=True) + "\n")
    with open(queries_path, "w", encoding="utf-8") as fh:
        for q in bench.queries:
            fh.write(json.dumps(query_to_record(q), sort_keys=True) + "\n")
    oracle_path.write_text(json.dumps(bench.manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
