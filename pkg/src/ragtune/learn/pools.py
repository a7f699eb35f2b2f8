"""Offline preparation: retrieve, label and score, then split into pools."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from ..corpus import InvertedIndex, Query
from ..genio.backends import BackendError, GeneratorBackend
from ..genio.cache import RagCache, RagRecord
from ..genio.labels import offline_record
from ..genio.prompts import template_for
from ..search import Retriever

log = logging.getLogger(__name__)

DEFAULT_K_OFFLINE = 100


@dataclass
class Pools:
    """Offline positive/negative pools for one query.

    Thresholds are frozen at the offline extrema. Verdicts confirmed during
    online training are kept apart in ``online_*`` so the thresholds stay
    anchored while fallback sampling can still draw on them.
    """

    query_id: str
    positives: list[tuple[str, float]]
    negatives: list[tuple[str, float]]
    online_positives: list[str] = field(default_factory=list)
    online_negatives: list[str] = field(default_factory=list)

    def __post_init__(self):
        pos = {d for d, _ in self.positives}
        neg = {d for d, _ in self.negatives}
        if pos & neg:
            raise ValueError(f"query {self.query_id}: a document sits in both pools")
        self.max_neg_logscore = max((s for _, s in self.negatives), default=None)
        self.min_pos_logscore = min((s for _, s in self.positives), default=None)

    @property
    def retained(self) -> bool:
        return bool(self.positives) and bool(self.negatives)

    def positive_ids(self) -> list[str]:
        ids = [d for d, _ in self.positives]
        return ids + [d for d in self.online_positives if d not in set(ids)]

    def negative_ids(self) -> list[str]:
        ids = [d for d, _ in self.negatives]
        return ids + [d for d in self.online_negatives if d not in set(ids)]

    def merge_online(self, doc_id: str, verdict: int | None) -> None:
        if verdict == 1 and doc_id not in self.online_positives and doc_id not in {d for d, _ in self.negatives}:
            self.online_positives.append(doc_id)
        elif verdict == 0 and doc_id not in self.online_negatives and doc_id not in {d for d, _ in self.positives}:
            self.online_negatives.append(doc_id)

    def state(self) -> dict:
        return {"online_positives": list(self.online_positives), "online_negatives": list(self.online_negatives)}


class OfflineAborted(RuntimeError):
    """Backend failed mid-run; everything before ``cursor`` is in the cache."""

    def __init__(self, cursor: int, cause: Exception):
        super().__init__(f"offline preparation stopped at query #{cursor}: {cause}")
        self.cursor = cursor
        self.cause = cause


@dataclass
class OfflineResult:
    pools: dict[str, Pools]
    records: dict[str, list[RagRecord]]
    dropped: list[str]
    fresh_calls: int

    @property
    def retained(self) -> list[str]:
        return [q for q, p in self.pools.items() if p.retained]

    def report(self) -> dict:
        return {
            "queries": len(self.records),
            "retained": len(self.retained),
            "dropped": len(self.dropped),
            "dropped_ids": sorted(self.dropped),
            "fresh_documents_scored": self.fresh_calls,
        }


def pools_from_records(query_id: str, records: Sequence[RagRecord]) -> Pools:
    pos = [(r.doc_id, r.log_score) for r in records if r.label == 1]
    neg = [(r.doc_id, r.log_score) for r in records if r.label == 0]
    return Pools(query_id, pos, neg)


def offline_prepare(
    queries: Sequence[Query],
    retriever: Retriever,
    backend: GeneratorBackend,
    cache: RagCache | None = None,
    k: int = DEFAULT_K_OFFLINE,
) -> OfflineResult:
    """Label the top-``k`` documents of every query and build its pools.

    Queries whose positive or negative pool comes out empty are dropped.
    Every record goes to the cache as soon as it exists, so re-running after
    an :class:`OfflineAborted` resumes at its cursor without repeating calls.
    """
    index: InvertedIndex = retriever.index
    cache = cache if cache is not None else RagCache()
    pools: dict[str, Pools] = {}
    records: dict[str, list[RagRecord]] = {}
    dropped: list[str] = []
    fresh = 0
    workers = max(1, int(getattr(backend, "max_in_flight", 1)))
    with ThreadPoolExecutor(max_workers=workers) as pool_exec:
        for i, q in enumerate(queries):
            hits = retriever.retrieve(q, k)
            docs = [index.document(h.doc_id) for h in hits]
            tmpl = template_for(q)
            try:
                results = list(pool_exec.map(lambda d: offline_record(backend, q, d, tmpl, cache), docs))
            except BackendError as exc:
                raise OfflineAborted(i, exc) from exc
            recs = [r for r, _ in results]
            fresh += sum(1 for _, f in results if f)
            records[q.query_id] = recs
            p = pools_from_records(q.query_id, recs)
            pools[q.query_id] = p
            if not p.retained:
                dropped.append(q.query_id)
    log.info("offline: %d queries, %d dropped, %d fresh docs", len(records), len(dropped), fresh)
    return OfflineResult(pools, records, dropped, fresh)


def offline_to_json(result: OfflineResult, meta: dict | None = None) -> str:
    doc = {
        "format": "ragtune-offline",
        "version": 1,
        "meta": meta or {},
        "report": result.report(),
        "records": {qid: [json.loads(r.to_json()) for r in recs] for qid, recs in result.records.items()},
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def offline_from_json(text: str) -> tuple[OfflineResult, dict]:
    doc = json.loads(text)
    if doc.get("format") != "ragtune-offline" or doc.get("version") != 1:
        raise ValueError("not an offline-preparation file")
    records = {qid: [RagRecord.from_dict(r) for r in recs] for qid, recs in doc["records"].items()}
    pools = {qid: pools_from_records(qid, recs) for qid, recs in records.items()}
    dropped = [qid for qid, p in pools.items() if not p.retained]
    fresh = int(doc["report"].get("fresh_documents_scored", 0))
    return OfflineResult(pools, records, dropped, fresh), doc.get("meta", {})
