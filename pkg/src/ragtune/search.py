"""Search schemes over the bag-of-tokens index and parametric snapshots.

* beta search: learned query weights against raw document term counts
* full parametric: learned weights on both sides, over a prebuilt snapshot
* late parametric: beta search for ``m`` candidates, rerank those with the
  current parameters, keep ``k``

Hits with a zero score are never returned. Ties break on ascending doc_id,
and every scheme accumulates per-document sums in ascending token id, which
keeps scores reproducible bit for bit across schemes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import BagOfTokens, InvertedIndex, bot_encode
from .encoder import EncoderParams, FingerprintMismatch, SparseEmbedding, encode, score_pair

__all__ = [
    "SearchHit",
    "ParametricIndex",
    "search_beta",
    "rerank",
    "search_late",
    "build_param_index",
    "search_full",
    "reindex_policy",
    "rank_scores",
    "Retriever",
    "hits_to_jsonl",
    "DEFAULT_LATE_M",
    "DEFAULT_LATE_K",
    "EVAL_LATE_M",
]

DEFAULT_LATE_M = 20
DEFAULT_LATE_K = 20
EVAL_LATE_M = 100


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    score: float
    rank: int


def rank_scores(scores: np.ndarray, doc_ids: Sequence[str], k: int | None) -> list[SearchHit]:
    """Order positions by (score desc, doc_id asc), dropping zero scores.

    ``doc_ids`` must be sorted ascending so that position order is doc_id order.
    """
    nz = np.flatnonzero(scores > 0.0)
    order = nz[np.lexsort((nz, -scores[nz]))]
    if k is not None:
        order = order[:k]
    return [SearchHit(doc_ids[p], float(scores[p]), r) for r, p in enumerate(order, 1)]


def _accumulate(q_ids, q_w, post_docs, post_vals, n_docs) -> np.ndarray:
    acc = np.zeros(n_docs)
    for tid, w in zip(q_ids, q_w):
        docs = post_docs[tid]
        if len(docs):
            acc[docs] += w * post_vals[tid]
    return acc


def search_beta(q_emb: SparseEmbedding, index: InvertedIndex, m: int) -> list[SearchHit]:
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if q_emb.fingerprint != index.fingerprint:
        raise FingerprintMismatch("query embedding and index use different vocabularies")
    acc = _accumulate(q_emb.ids, q_emb.weights, index.post_docs, index.post_values, index.num_docs)
    return rank_scores(acc, index.doc_ids, m)


def rerank(
    params: EncoderParams,
    q_emb: SparseEmbedding,
    candidates: Iterable[str],
    k: int | None,
    index: InvertedIndex,
) -> list[SearchHit]:
    """Re-score ``candidates`` with the current encoder; keeps the top ``k``.

    ``k`` larger than the candidate list simply returns all of them ranked.
    """
    cands = sorted(set(candidates), key=index.position)
    scored = [(score_pair(q_emb, encode(params, index.bot(d))), d) for d in cands]
    scored = [(s, d) for s, d in scored if s > 0.0]
    scored.sort(key=lambda sd: (-sd[0], sd[1]))
    if k is not None:
        scored = scored[:k]
    return [SearchHit(d, s, r) for r, (s, d) in enumerate(scored, 1)]


def search_late(
    params: EncoderParams,
    query: BagOfTokens | SparseEmbedding,
    index: InvertedIndex,
    m: int = DEFAULT_LATE_M,
    k: int = DEFAULT_LATE_K,
) -> list[SearchHit]:
    if k > m:
        raise ValueError(f"late search needs k <= m (got k={k}, m={m})")
    q_emb = encode(params, query) if isinstance(query, BagOfTokens) else query
    first = search_beta(q_emb, index, m)
    return rerank(params, q_emb, (h.doc_id for h in first), k, index)


@dataclass(frozen=True)
class ParametricIndex:
    """Document embeddings frozen at build time, stored token-major."""

    doc_ids: tuple[str, ...]
    post_docs: list[np.ndarray]
    post_weights: list[np.ndarray]
    params_digest: str
    fingerprint: str
    build_step: int

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)


def build_param_index(params: EncoderParams, index: InvertedIndex, step: int = 0) -> ParametricIndex:
    if params.fingerprint != index.fingerprint:
        raise FingerprintMismatch("encoder and index use different vocabularies")
    post_weights = []
    for tid, (docs, counts) in enumerate(zip(index.post_docs, index.post_counts)):
        z = params.g[tid] + params.l[tid] * np.log1p(counts)
        post_weights.append(np.logaddexp(0.0, z))
    return ParametricIndex(
        index.doc_ids, index.post_docs, post_weights, params.digest(), index.fingerprint, step
    )


def search_full(
    q_emb: SparseEmbedding,
    pindex: ParametricIndex,
    k: int,
    params: EncoderParams | None = None,
    allow_stale: bool = False,
) -> list[SearchHit]:
    """Exact top-k over a parametric snapshot.

    Pass ``params`` to assert the snapshot is fresh; periodic re-indexing
    runs set ``allow_stale`` and search an outdated snapshot on purpose.
    """
    if q_emb.fingerprint != pindex.fingerprint:
        raise FingerprintMismatch("query embedding and parametric index use different vocabularies")
    if params is not None and not allow_stale and params.digest() != pindex.params_digest:
        raise FingerprintMismatch(
            f"parametric index was built from other parameters (step {pindex.build_step}); rebuild it"
        )
    acc = _accumulate(q_emb.ids, q_emb.weights, pindex.post_docs, pindex.post_weights, pindex.num_docs)
    return rank_scores(acc, pindex.doc_ids, k)


def reindex_policy(step: int, interval: int) -> bool:
    if interval < 1:
        raise ValueError("reindex interval must be >= 1")
    return step > 0 and step % interval == 0


def hits_to_jsonl(query_id: str, hits: Sequence[SearchHit]) -> str:
    return json.dumps(
        {"qid": query_id, "hits": [[h.doc_id, h.score, h.rank] for h in hits]},
        separators=(",", ":"),
    )


def encode_text(params: EncoderParams, text: str, index: InvertedIndex) -> SparseEmbedding:
    return encode(params, bot_encode(text, index.vocab))


class Retriever:
    """Encoder parameters plus a search scheme, queried by ``Query``.

    ``mode`` is one of ``"full"``, ``"late"`` (top-``m`` rerank) or
    ``"beta"``. The parametric snapshot for ``"full"`` is built on first use
    unless ``snapshot`` supplies one, which may then be stale on purpose.
    """

    def __init__(
        self,
        params: EncoderParams,
        index: InvertedIndex,
        mode: str = "full",
        m: int = EVAL_LATE_M,
        name: str | None = None,
        snapshot: ParametricIndex | None = None,
    ):
        if mode not in ("full", "late", "beta"):
            raise ValueError(f"unknown search mode {mode!r}")
        self.params = params
        self.index = index
        self.mode = mode
        self.m = m
        self.name = name or f"{mode}:{params.digest()}"
        self._pindex = snapshot
        self._stale_ok = snapshot is not None

    def query_embedding(self, query) -> SparseEmbedding:
        return encode(self.params, bot_encode(query.question, self.index.vocab))

    def retrieve(self, query, k: int) -> list[SearchHit]:
        q_emb = self.query_embedding(query)
        if self.mode == "beta":
            return search_beta(q_emb, self.index, k)
        if self.mode == "late":
            first = search_beta(q_emb, self.index, max(self.m, k))
            return rerank(self.params, q_emb, (h.doc_id for h in first), k, self.index)
        if self._pindex is None:
            self._pindex = build_param_index(self.params, self.index)
        return search_full(q_emb, self._pindex, k, self.params, allow_stale=self._stale_ok)
