"""Append-only JSONL store of RAG scores and labels."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

__all__ = ["RagRecord", "RagCache", "SCORE_FLOOR"]

SCORE_FLOOR = -1e9


@dataclass(frozen=True)
class RagRecord:
    query_id: str
    doc_id: str
    log_score: float
    label: int | None  # 1, 0, or None for undecided
    provenance: str  # "offline" | "online"
    backend: str
    template: str
    per_answer_scores: tuple[float, ...] = ()
    floored: bool = False
    timestamp: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.provenance not in ("offline", "online"):
            raise ValueError(f"bad provenance {self.provenance!r}")
        if self.provenance == "offline" and self.label is None:
            raise ValueError("offline records always carry a decided label")
        if self.label not in (0, 1, None):
            raise ValueError(f"bad label {self.label!r}")
        if self.log_score > 0:
            raise ValueError("log_score must be <= 0")

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.query_id, self.doc_id, self.backend, self.template)

    def to_json(self) -> str:
        return json.dumps(
            {
                "qid": self.query_id,
                "did": self.doc_id,
                "backend": self.backend,
                "template": self.template,
                "log_score": self.log_score,
                "per_answer_scores": list(self.per_answer_scores),
                "label": self.label,
                "provenance": self.provenance,
                "floored": self.floored,
                "timestamp": self.timestamp,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "RagRecord":
        return cls(
            d["qid"], d["did"], float(d["log_score"]), d["label"], d["provenance"],
            d["backend"], d["template"], tuple(float(x) for x in d.get("per_answer_scores", ())),
            bool(d.get("floored", False)), float(d.get("timestamp", 0.0)),
        )


class RagCache:
    """Keyed by (query_id, doc_id, backend fingerprint, template id).

    One record per key and provenance; lookups prefer the generation-backed
    offline record. Appends go out as a single ``write`` of one full line
    under a lock, and a torn trailing line (from a crash) is skipped on load.
    With ``path=None`` the cache lives in memory only.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._records: dict[tuple, dict[str, RagRecord]] = {}
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.endswith("\n"):
                    break  # torn tail
                try:
                    rec = RagRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError, ValueError):
                    continue
                self._records.setdefault(rec.key, {}).setdefault(rec.provenance, rec)

    def __len__(self) -> int:
        return sum(len(v) for v in self._records.values())

    def put(self, record: RagRecord) -> bool:
        """Store ``record``; returns False when its key/provenance already exists."""
        with self._lock:
            slot = self._records.setdefault(record.key, {})
            if record.provenance in slot:
                return False
            if not record.timestamp:
                record = replace(record, timestamp=time.time())
            slot[record.provenance] = record
            if self.path is not None:
                line = record.to_json() + "\n"
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line)
                    fh.flush()
            return True

    def lookup(
        self, query_id: str, doc_id: str, backend: str, template: str, provenance: str | None = None
    ) -> RagRecord | None:
        with self._lock:
            slot = self._records.get((query_id, doc_id, backend, template))
            rec = None
            if slot:
                if provenance is not None:
                    rec = slot.get(provenance)
                else:
                    rec = slot.get("offline") or slot.get("online")
            if rec is None:
                self.misses += 1
            else:
                self.hits += 1
            return rec

    def records(self) -> list[RagRecord]:
        with self._lock:
            return [r for slot in self._records.values() for r in slot.values()]

    def stats(self) -> dict:
        total = self.hits + self.misses
        return {
            "records": len(self),
            "hits": self.hits,
            "misses": self.misses,
            "hit_rate": (self.hits / total) if total else 0.0,
        }
