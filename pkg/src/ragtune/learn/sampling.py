"""Online scan over freshly retrieved documents and training-pair sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..corpus import Document, InvertedIndex, Query
from ..genio.backends import GeneratorBackend
from ..genio.cache import RagCache, RagRecord
from ..genio.labels import closedset_score, rag_score
from ..genio.prompts import template_for
from .identify import identify_closedset, identify_freeform
from .pools import Pools

__all__ = ["TrainSample", "ScanOutcome", "online_record", "warmup_sample", "scan_and_sample"]


@dataclass(frozen=True)
class TrainSample:
    query_id: str
    d_plus: str
    d_minus: str
    source: str  # "online" | "offline-fallback" | "offline"

    def __post_init__(self):
        if self.d_plus == self.d_minus:
            raise ValueError("positive and negative document must differ")


@dataclass
class ScanOutcome:
    sample: TrainSample | None
    fresh: int = 0
    scanned: list[tuple[str, int | None]] = field(default_factory=list)


def online_record(
    backend: GeneratorBackend, query: Query, doc: Document, pools: Pools, cache: RagCache
) -> tuple[RagRecord, bool]:
    """Cached verdict for ``(query, doc)`` or a fresh threshold-based one.

    Returns ``(record, fresh)``. Fresh records are stored with online
    provenance; their label may be ``None`` (undecided).
    """
    tid = template_for(query).template_id
    hit = cache.lookup(query.query_id, doc.doc_id, backend.fingerprint, tid)
    if hit is not None:
        return hit, False
    if query.task_kind == "freeform":
        sc = rag_score(backend, query, doc)
        label = identify_freeform(sc.log_score, pools.max_neg_logscore, pools.min_pos_logscore)
    else:
        lps, sc = closedset_score(backend, query, [doc])
        label = identify_closedset(lps, query.correct)
    rec = RagRecord(
        query.query_id, doc.doc_id, sc.log_score, label, "online", backend.fingerprint, tid,
        sc.per_answer, sc.floored,
    )
    cache.put(rec)
    return rec, True


def _pick(rng: np.random.Generator, items: list[str], exclude: str | None = None) -> str | None:
    items = [d for d in items if d != exclude]
    if not items:
        return None
    return items[int(rng.integers(len(items)))]


def warmup_sample(query: Query, pools: Pools, rng: np.random.Generator) -> TrainSample | None:
    """Uniform positive and negative from the offline pools; no backend use."""
    if not pools.retained:
        return None
    d_plus = _pick(rng, [d for d, _ in pools.positives])
    d_minus = _pick(rng, [d for d, _ in pools.negatives], exclude=d_plus)
    if d_plus is None or d_minus is None:
        return None
    return TrainSample(query.query_id, d_plus, d_minus, "offline")


def scan_and_sample(
    query: Query,
    hit_ids: list[str],
    index: InvertedIndex,
    pools: Pools,
    cache: RagCache,
    backend: GeneratorBackend,
    rng: np.random.Generator,
) -> ScanOutcome:
    """Walk ``hit_ids`` (descending relevance) until the first negative.

    Positives met on the way form the online positive set; the first
    negative becomes the hard negative. Undecided documents are passed over.
    A missing side falls back to the (online-augmented) pools. Every verdict
    seen is merged into ``pools``.
    """
    out = ScanOutcome(None)
    online_pos: list[str] = []
    d_minus: str | None = None
    for did in hit_ids:
        rec, fresh = online_record(backend, query, index.document(did), pools, cache)
        out.fresh += int(fresh)
        out.scanned.append((did, rec.label))
        if rec.label == 1:
            online_pos.append(did)
        elif rec.label == 0:
            d_minus = did
            break
    for did, verdict in out.scanned:
        pools.merge_online(did, verdict)

    fallback = False
    d_plus = _pick(rng, online_pos)
    if d_plus is None:
        d_plus = _pick(rng, pools.positive_ids(), exclude=d_minus)
        fallback = True
    if d_minus is None:
        d_minus = _pick(rng, pools.negative_ids(), exclude=d_plus)
        fallback = True
    if d_plus is None or d_minus is None or d_plus == d_minus:
        return out
    out.sample = TrainSample(query.query_id, d_plus, d_minus, "offline-fallback" if fallback else "online")
    return out
