"""Documents, queries, tokenization and the bag-of-tokens inverted index.

The index built here never changes once constructed: it is the
non-parametric half of the semi-parametric retriever, and everything that
trains reads from it concurrently.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CorpusError",
    "Document",
    "Query",
    "Vocabulary",
    "BagOfTokens",
    "InvertedIndex",
    "tokenize",
    "normalize_text",
    "bot_encode",
    "build_index",
    "load_corpus",
    "load_queries",
    "save_index",
    "load_index",
    "INDEX_FORMAT_VERSION",
]

INDEX_FORMAT_VERSION = 1

# alphanumeric runs; \w minus underscore is Unicode-aware
_TOKEN_RE = re.compile(r"[^\W_]+")
_WS_RE = re.compile(r"\s+")


class CorpusError(ValueError):
    """Malformed or inconsistent corpus/query data."""


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def normalize_text(text: str) -> str:
    """Lowercase and collapse whitespace runs to single spaces."""
    return _WS_RE.sub(" ", text.lower()).strip()


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str

    @property
    def text(self) -> str:
        """Title and body as one string, the unit that gets indexed."""
        return f"{self.title}\n{self.body}" if self.title else self.body


@dataclass(frozen=True)
class Query:
    query_id: str
    task_kind: str  # "freeform" | "closedset"
    question: str
    answers: tuple[str, ...] = ()
    choices: tuple[tuple[str, str], ...] = ()
    correct: tuple[str, ...] = ()
    # keywords whose presence in context makes the mock generator confident
    evidence: tuple[str, ...] = ()
    template: str | None = None

    def __post_init__(self):
        if self.task_kind == "freeform":
            if not self.answers:
                raise CorpusError(f"freeform query {self.query_id!r} has no answers")
        elif self.task_kind == "closedset":
            labels = [lab for lab, _ in self.choices]
            if len(labels) < 2:
                raise CorpusError(f"closedset query {self.query_id!r} needs >= 2 choices")
            if len({lab.lower() for lab in labels}) != len(labels):
                raise CorpusError(f"closedset query {self.query_id!r} has duplicate labels")
            if not self.correct:
                raise CorpusError(f"closedset query {self.query_id!r} has no correct label")
            missing = set(self.correct) - set(labels)
            if missing:
                raise CorpusError(
                    f"closedset query {self.query_id!r}: correct label(s) {sorted(missing)} not among choices"
                )
        else:
            raise CorpusError(f"unknown task kind {self.task_kind!r} for query {self.query_id!r}")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.choices)

    @property
    def continuations(self) -> tuple[str, ...]:
        """Ground-truth continuations: answer strings or correct labels."""
        return self.answers if self.task_kind == "freeform" else self.correct


class Vocabulary:
    """Ordered token set with contiguous ids starting at 0."""

    def __init__(self, tokens: Iterable[str]):
        self._tokens: tuple[str, ...] = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise CorpusError("vocabulary tokens must be distinct")
        self.fingerprint = hashlib.sha256("\n".join(self._tokens).encode("utf-8")).hexdigest()[:16]

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def lookup(self, token: str) -> int | None:
        return self._ids.get(token)

    def token_of(self, token_id: int) -> str:
        return self._tokens[token_id]


@dataclass(frozen=True)
class BagOfTokens:
    """Term frequencies over a vocabulary, entries sorted by token id."""

    ids: np.ndarray
    counts: np.ndarray
    fingerprint: str

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def weights(self) -> np.ndarray:
        return self.counts.astype(np.float64)

    def entries(self) -> list[tuple[int, int]]:
        return [(int(i), int(c)) for i, c in zip(self.ids, self.counts)]


def bot_encode(text: str, vocab: Vocabulary) -> BagOfTokens:
    counts: Counter[int] = Counter()
    for tok in tokenize(text):
        tid = vocab.lookup(tok)
        if tid is not None:
            counts[tid] += 1
    ids = np.array(sorted(counts), dtype=np.int64)
    cnt = np.array([counts[i] for i in ids], dtype=np.int64)
    return BagOfTokens(ids, cnt, vocab.fingerprint)


@dataclass
class InvertedIndex:
    """Token id -> postings of (document position, count).

    Documents are held in ascending ``doc_id`` order, so a document's
    position doubles as its tie-break rank.
    """

    vocab: Vocabulary
    doc_ids: tuple[str, ...]
    post_docs: list[np.ndarray]
    post_counts: list[np.ndarray]
    doc_bots: list[BagOfTokens] = field(repr=False)
    documents: dict[str, Document] | None = field(default=None, repr=False)

    @property
    def fingerprint(self) -> str:
        return self.vocab.fingerprint

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    def position(self, doc_id: str) -> int:
        return self._positions[doc_id]

    def __post_init__(self):
        self._positions = {d: i for i, d in enumerate(self.doc_ids)}
        self.post_values = [c.astype(np.float64) for c in self.post_counts]

    def postings(self, token_id: int) -> list[tuple[str, int]]:
        return [
            (self.doc_ids[int(p)], int(c))
            for p, c in zip(self.post_docs[token_id], self.post_counts[token_id])
        ]

    def bot(self, doc_id: str) -> BagOfTokens:
        return self.doc_bots[self._positions[doc_id]]

    def document(self, doc_id: str) -> Document:
        if self.documents is None:
            raise KeyError("index was loaded without document texts")
        return self.documents[doc_id]


def build_index(corpus: Sequence[Document]) -> tuple[Vocabulary, InvertedIndex]:
    if not corpus:
        raise CorpusError("cannot build an index over an empty corpus")
    seen: set[str] = set()
    for doc in corpus:
        if doc.doc_id in seen:
            raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)

    docs = sorted(corpus, key=lambda d: d.doc_id)
    token_lists = [tokenize(d.text) for d in docs]
    vocab = Vocabulary(sorted({t for toks in token_lists for t in toks}))
    bots = [bot_encode(d.text, vocab) for d in docs]
    return vocab, _assemble(vocab, tuple(d.doc_id for d in docs), bots, {d.doc_id: d for d in docs})


def _assemble(vocab, doc_ids, bots, documents) -> InvertedIndex:
    per_tok_docs: list[list[int]] = [[] for _ in range(len(vocab))]
    per_tok_counts: list[list[int]] = [[] for _ in range(len(vocab))]
    for pos, bot in enumerate(bots):
        for tid, c in zip(bot.ids, bot.counts):
            per_tok_docs[tid].append(pos)
            per_tok_counts[tid].append(int(c))
    return InvertedIndex(
        vocab=vocab,
        doc_ids=doc_ids,
        post_docs=[np.array(p, dtype=np.int64) for p in per_tok_docs],
        post_counts=[np.array(c, dtype=np.int64) for c in per_tok_counts],
        doc_bots=bots,
        documents=documents,
    )


def index_to_json(index: InvertedIndex, extra: dict | None = None) -> str:
    payload = {
        "format": "ragtune-bot-index",
        "version": INDEX_FORMAT_VERSION,
        "fingerprint": index.fingerprint,
        "vocab": list(index.vocab.tokens),
        "doc_ids": list(index.doc_ids),
        "postings": [
            [[int(p), int(c)] for p, c in zip(pd, pc)]
            for pd, pc in zip(index.post_docs, index.post_counts)
        ],
        "meta": extra or {},
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def save_index(index: InvertedIndex, path: str | Path, extra: dict | None = None) -> None:
    Path(path).write_text(index_to_json(index, extra) + "\n", encoding="utf-8")


def load_index(
    path: str | Path, corpus: Sequence[Document] | None = None
) -> tuple[InvertedIndex, dict]:
    """Load a serialized index; returns ``(index, meta)``.

    Passing ``corpus`` reattaches document texts (needed for prompting).
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusError(f"{path}: unreadable index ({exc})") from exc
    if payload.get("format") != "ragtune-bot-index":
        raise CorpusError(f"{path}: not an index file")
    if payload.get("version") != INDEX_FORMAT_VERSION:
        raise CorpusError(f"{path}: unsupported index version {payload.get('version')}")
    vocab = Vocabulary(payload["vocab"])
    if vocab.fingerprint != payload["fingerprint"]:
        raise CorpusError(f"{path}: vocabulary fingerprint mismatch (corrupt file?)")
    doc_ids = tuple(payload["doc_ids"])
    per_doc: list[list[tuple[int, int]]] = [[] for _ in doc_ids]
    for tid, plist in enumerate(payload["postings"]):
        for pos, c in plist:
            per_doc[pos].append((tid, c))
    bots = [
        BagOfTokens(
            np.array([t for t, _ in ent], dtype=np.int64),
            np.array([c for _, c in ent], dtype=np.int64),
            vocab.fingerprint,
        )
        for ent in per_doc
    ]
    documents = None
    if corpus is not None:
        documents = {d.doc_id: d for d in corpus}
        if set(documents) != set(doc_ids):
            raise CorpusError(f"{path}: corpus does not match the indexed documents")
    return _assemble(vocab, doc_ids, bots, documents), payload.get("meta", {})


def _read_jsonl(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def load_corpus(path: str | Path) -> list[Document]:
    docs: list[Document] = []
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(path):
        doc_id = rec.get("id")
        text = rec.get("text")
        if not isinstance(doc_id, str) or not doc_id:
            raise CorpusError(f"{path}:{lineno}: missing or invalid 'id'")
        if not isinstance(text, str) or not normalize_text(text):
            raise CorpusError(f"{path}:{lineno}: document {doc_id!r} has an empty 'text'")
        if doc_id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate id {doc_id!r}")
        seen.add(doc_id)
        docs.append(Document(doc_id, str(rec.get("title", "")), text))
    return docs


def _parse_choices(raw, where: str) -> tuple[tuple[str, str], ...]:
    if not isinstance(raw, list):
        raise CorpusError(f"{where}: 'choices' must be a list")
    out = []
    for ch in raw:
        if isinstance(ch, dict) and "label" in ch:
            out.append((str(ch["label"]), str(ch.get("text", ""))))
        elif isinstance(ch, (list, tuple)) and len(ch) == 2:
            out.append((str(ch[0]), str(ch[1])))
        else:
            raise CorpusError(f"{where}: malformed choice {ch!r}")
    return tuple(out)


def query_from_record(rec: dict, where: str = "<record>") -> Query:
    qid = rec.get("id")
    task = rec.get("task", "freeform")
    question = rec.get("question")
    if not isinstance(qid, str) or not qid:
        raise CorpusError(f"{where}: missing or invalid 'id'")
    if not isinstance(question, str) or not question.strip():
        raise CorpusError(f"{where}: query {qid!r} has no 'question'")
    try:
        if task == "freeform":
            answers = rec.get("answers")
            if not isinstance(answers, list) or not answers:
                raise CorpusError(f"{where}: freeform query {qid!r} needs a non-empty 'answers' list")
            return Query(
                qid, "freeform", question, answers=tuple(str(a) for a in answers),
                evidence=tuple(rec.get("evidence", ())), template=rec.get("template"),
            )
        if task == "closedset":
            if "answers" in rec:
                raise CorpusError(f"{where}: closedset query {qid!r} must use 'choices'+'correct', not 'answers'")
            correct = rec.get("correct")
            if isinstance(correct, str):
                correct = [correct]
            if not isinstance(correct, list):
                raise CorpusError(f"{where}: closedset query {qid!r} needs 'correct'")
            return Query(
                qid, "closedset", question,
                choices=_parse_choices(rec.get("choices"), where),
                correct=tuple(str(c) for c in correct),
                evidence=tuple(rec.get("evidence", ())), template=rec.get("template"),
            )
    except CorpusError as exc:
        if str(exc).startswith(where):
            raise
        raise CorpusError(f"{where}: {exc}") from exc
    raise CorpusError(f"{where}: unknown task {task!r}")


def query_to_record(q: Query) -> dict:
    rec: dict = {"id": q.query_id, "task": q.task_kind, "question": q.question}
    if q.task_kind == "freeform":
        rec["answers"] = list(q.answers)
    else:
        rec["choices"] = [{"label": lab, "text": txt} for lab, txt in q.choices]
        rec["correct"] = list(q.correct)
    if q.evidence:
        rec["evidence"] = list(q.evidence)
    if q.template:
        rec["template"] = q.template
    return rec


def load_queries(path: str | Path) -> list[Query]:
    queries: list[Query] = []
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(path):
        q = query_from_record(rec, f"{path}:{lineno}")
        if q.query_id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate id {q.query_id!r}")
        seen.add(q.query_id)
        queries.append(q)
    return queries
