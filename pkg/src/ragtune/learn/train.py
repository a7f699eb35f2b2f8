"""Warmup-then-online training loop, checkpoints, resume and the run report."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ..corpus import BagOfTokens, InvertedIndex, Query, bot_encode
from ..encoder import Checkpoint, EncoderParams, load_checkpoint, save_checkpoint
from ..evalkit import rag_accuracy
from ..genio.backends import CountingBackend, GeneratorBackend
from ..genio.cache import RagCache
from ..search import EVAL_LATE_M, Retriever, build_param_index, reindex_policy
from .losses import kl_loss, total_loss
from .optim import AdamW
from .pools import OfflineResult, Pools
from .sampling import TrainSample, online_record, scan_and_sample, warmup_sample

__all__ = [
    "TrainConfig",
    "FULL_SCALE_SETTINGS",
    "TrainResult",
    "train",
    "count_ondemand",
    "warmup_epochs",
    "config_hash",
]

log = logging.getLogger(__name__)

SCHEDULES = ("offline+online", "offline-only", "online-only")
LOSSES = ("contrastive", "kl")
SEARCH_MODES = ("late", "reindex", "beta")

# values used at full scale with a BERT-sized encoder
FULL_SCALE_SETTINGS = {"batch_size": 128, "lr": 2e-5, "epochs": 80, "warmup_fraction": 0.5, "late_m": 20, "late_k": 20}


@dataclass(frozen=True)
class TrainConfig:
    k_offline: int = 100
    late_m: int = 20
    late_k: int = 20
    batch_size: int = 32
    lr: float = 1e-2
    weight_decay: float = 0.01
    epochs: int = 20
    warmup_fraction: float = 0.5
    schedule: str = "offline+online"
    loss: str = "contrastive"
    search: str = "late"
    reindex_interval: int = 15
    tau_r: float = 1.0
    tau_g: float = 1.0
    seed: int = 0
    count_ndoc: bool = True
    eval_every: int = 5  # epochs between eval snapshots; 0 disables them
    eval_m: int = EVAL_LATE_M
    checkpoint_every: int = 5

    def __post_init__(self):
        errs = []
        if not 0.0 < self.warmup_fraction < 1.0:
            errs.append("warmup_fraction must lie strictly between 0 and 1")
        if self.late_k > self.late_m:
            errs.append("late_k must not exceed late_m")
        if self.schedule not in SCHEDULES:
            errs.append(f"schedule must be one of {SCHEDULES}")
        if self.loss not in LOSSES:
            errs.append(f"loss must be one of {LOSSES}")
        if self.search not in SEARCH_MODES:
            errs.append(f"search must be one of {SEARCH_MODES}")
        for name in ("k_offline", "late_m", "late_k", "batch_size", "epochs", "reindex_interval", "eval_m"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        for name in ("eval_every", "checkpoint_every"):
            if getattr(self, name) < 0:
                errs.append(f"{name} must be >= 0")
        if self.lr <= 0 or self.tau_r <= 0 or self.tau_g <= 0:
            errs.append("lr and temperatures must be positive")
        if errs:
            raise ValueError("; ".join(errs))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(obj) -> str:
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    return hashlib.sha256(json.dumps(data, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def warmup_epochs(cfg: TrainConfig) -> int:
    if cfg.schedule == "offline-only":
        return cfg.epochs
    if cfg.schedule == "online-only":
        return 0
    return math.ceil(cfg.epochs * cfg.warmup_fraction)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    report: dict
    pools: dict[str, Pools] = field(default_factory=dict)


def count_ondemand(report: dict) -> dict[str, float]:
    """Mean number of freshly scored documents per query, by task kind."""
    per = report.get("ndoc", {}).get("per_query", {})
    by_task: dict[str, list[int]] = {}
    for entry in per.values():
        by_task.setdefault(entry["task"], []).append(entry["fresh"])
    return {t: float(np.mean(v)) for t, v in sorted(by_task.items())}


def _eval_cache(cache: RagCache, offline: OfflineResult) -> RagCache:
    # snapshots must not leave records behind that the online scan would
    # later treat as already scored, so they get a cache of their own
    path = None if cache.path is None else cache.path.with_name(cache.path.stem + ".eval.jsonl")
    ev = RagCache(path)
    for recs in offline.records.values():
        for rec in recs:
            ev.put(rec)
    return ev


class _Trainer:
    def __init__(self, cfg, index, queries, backend, offline, cache, out_dir, eval_backend, lineage):
        self.cfg = cfg
        self.index = index
        self.backend = CountingBackend(backend)
        self.eval_backend = CountingBackend(eval_backend if eval_backend is not None else backend)
        self.cache = cache
        self.eval_cache = _eval_cache(cache, offline)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.offline = offline
        self.pools = {
            qid: Pools(p.query_id, list(p.positives), list(p.negatives))
            for qid, p in offline.pools.items()
        }
        self.queries = [q for q in queries if q.query_id in self.pools and self.pools[q.query_id].retained]
        self.all_queries = list(queries)
        self.q_bots: dict[str, BagOfTokens] = {q.query_id: bot_encode(q.question, index.vocab) for q in queries}
        self.opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.n_warm = warmup_epochs(cfg)
        self.chash = config_hash(cfg)
        self.snapshot = None
        self.snapshot_params: EncoderParams | None = None
        self.report = {
            "config": cfg.to_dict(),
            "config_hash": self.chash,
            "lineage": lineage,
            "backend": backend.fingerprint,
            "warmup_epochs": self.n_warm,
            "offline": offline.report(),
            "epochs": [],
            "eval_snapshots": [],
            "ndoc": {"per_query": {q.query_id: {"task": q.task_kind, "fresh": 0} for q in self.queries}},
        }

    # retrieval used while training

    def _hits(self, params: EncoderParams, q: Query) -> list[str]:
        cfg = self.cfg
        if cfg.search == "late":
            r = Retriever(params, self.index, "late", m=cfg.late_m)
        elif cfg.search == "beta":
            r = Retriever(params, self.index, "beta")
        else:
            r = Retriever(params, self.index, "full", snapshot=self.snapshot)
        return [h.doc_id for h in r.retrieve(q, cfg.late_k)]

    def _rebuild(self, params: EncoderParams, epoch: int) -> None:
        self.snapshot = build_param_index(params, self.index, step=epoch)
        self.snapshot_params = params

    # one batch

    def _contrastive_step(self, ck, batch, online, rng, stats):
        samples: list[tuple[Query, TrainSample]] = []
        for q in batch:
            pools = self.pools[q.query_id]
            if online:
                res = scan_and_sample(q, self._hits(ck.params, q), self.index, pools, self.cache, self.backend, rng)
                stats["fresh"] += res.fresh
                self.report["ndoc"]["per_query"][q.query_id]["fresh"] += res.fresh
                s = res.sample
            else:
                s = warmup_sample(q, pools, rng)
            if s is None:
                stats["skipped"] += 1
                continue
            stats["fallback"] += s.source == "offline-fallback"
            samples.append((q, s))
        if not samples:
            return ck, None
        idx = self.index
        lb = total_loss(
            ck.params,
            [self.q_bots[q.query_id] for q, _ in samples],
            [idx.bot(s.d_plus) for _, s in samples],
            [idx.bot(s.d_minus) for _, s in samples],
        )
        stats["samples"] += len(samples)
        return self.opt.step(ck, lb.grad_g, lb.grad_l), lb.terms()

    def _kl_step(self, ck, batch, online, rng, stats):
        cfg = self.cfg
        gg = np.zeros(ck.params.size)
        gl = np.zeros(ck.params.size)
        total, used = 0.0, 0
        for q in batch:
            if online:
                ids = self._hits(ck.params, q)
                scores = []
                for did in ids:
                    rec, fresh = online_record(self.backend, q, self.index.document(did), self.pools[q.query_id], self.cache)
                    stats["fresh"] += int(fresh)
                    self.report["ndoc"]["per_query"][q.query_id]["fresh"] += int(fresh)
                    scores.append(rec.log_score)
            else:
                recs = self.offline.records[q.query_id][: cfg.late_k]
                ids = [r.doc_id for r in recs]
                scores = [r.log_score for r in recs]
            if len(ids) < 2:
                stats["skipped"] += 1
                continue
            lb = kl_loss(ck.params, self.q_bots[q.query_id], [self.index.bot(d) for d in ids], scores,
                         cfg.tau_r, cfg.tau_g)
            gg += lb.grad_g
            gl += lb.grad_l
            total += lb.total
            used += 1
        if not used:
            return ck, None
        stats["samples"] += used
        return self.opt.step(ck, gg, gl), {"total": total, "kl": total}

    # snapshots and persistence

    def _eval(self, ck: Checkpoint, epoch: int) -> None:
        if not self.cfg.eval_every:
            return
        before = self.eval_backend.calls
        r = Retriever(ck.params, self.index, "late", m=self.cfg.eval_m, name=f"epoch{epoch}")
        res = rag_accuracy(r, self.eval_backend, self.all_queries, 1, self.eval_cache)
        self.report["eval_snapshots"].append(
            {"epoch": epoch, "step": ck.step, "rag_accuracy@1": res.value, "correct": res.correct,
             "n_queries": res.n_queries, "backend_calls": self.eval_backend.calls - before}
        )

    def _state(self, epoch: int) -> dict:
        return {
            "epoch": epoch,
            "config_hash": self.chash,
            "pools": {qid: p.state() for qid, p in sorted(self.pools.items())},
            "report": self.report,
            "snapshot_epoch": None if self.snapshot is None else self.snapshot.build_step,
        }

    def _save(self, ck: Checkpoint, epoch: int, name: str) -> Path | None:
        if self.out_dir is None:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"{name}.ckpt"
        save_checkpoint(ck, path)
        if self.snapshot_params is not None:
            z = np.zeros(ck.params.size)
            snap = Checkpoint(self.snapshot_params, z, z, z, z, 0, ck.seed, ck.config_hash)
            save_checkpoint(snap, self.out_dir / f"{name}.snapshot.ckpt")
        sidecar = path.with_suffix(".state.json")
        tmp = sidecar.with_suffix(".tmp")
        tmp.write_text(json.dumps(self._state(epoch), sort_keys=True, indent=1), encoding="utf-8")
        tmp.replace(sidecar)
        return path

    def _restore(self, path: Path) -> tuple[Checkpoint, int]:
        ck = load_checkpoint(path, self.index.vocab)
        if ck.config_hash != self.chash:
            raise ValueError(f"{path}: checkpoint was written under config {ck.config_hash}, not {self.chash}")
        state = json.loads(path.with_suffix(".state.json").read_text(encoding="utf-8"))
        if state["report"].get("lineage") != self.report["lineage"]:
            raise ValueError(f"{path}: checkpoint belongs to a different pipeline run")
        for qid, st in state["pools"].items():
            if qid in self.pools:
                self.pools[qid].online_positives = list(st["online_positives"])
                self.pools[qid].online_negatives = list(st["online_negatives"])
        self.report = state["report"]
        if state.get("snapshot_epoch") is not None:
            snap = load_checkpoint(path.with_name(path.stem + ".snapshot.ckpt"), self.index.vocab)
            self._rebuild(snap.params, state["snapshot_epoch"])
        return ck, int(state["epoch"])

    # main loop

    def run(self, resume: Path | None) -> TrainResult:
        cfg = self.cfg
        if resume is not None:
            ck, done = self._restore(Path(resume))
        else:
            ck = Checkpoint.fresh(self.index.vocab, cfg.seed, self.chash)
            done = 0
            self._eval(ck, 0)
        n = len(self.queries)
        for epoch in range(done + 1, cfg.epochs + 1):
            online = epoch > self.n_warm
            rng = np.random.default_rng([cfg.seed, epoch])
            rebuilt = False
            if online and cfg.search == "reindex":
                if self.snapshot is None:
                    self._rebuild(Checkpoint.fresh(self.index.vocab).params, 0)
                if reindex_policy(epoch, cfg.reindex_interval):
                    self._rebuild(ck.params, epoch)
                    rebuilt = True
            order = rng.permutation(n)
            stats = {"samples": 0, "skipped": 0, "fallback": 0, "fresh": 0}
            sums: dict[str, float] = {}
            steps = 0
            calls_before = self.backend.calls
            for b in range(0, n, cfg.batch_size):
                batch = [self.queries[i] for i in order[b : b + cfg.batch_size]]
                step = self._kl_step if cfg.loss == "kl" else self._contrastive_step
                ck, terms = step(ck, batch, online, rng, stats)
                if terms is None:
                    continue
                steps += 1
                for key, v in terms.items():
                    sums[key] = sums.get(key, 0.0) + v
            entry = {
                "epoch": epoch,
                "phase": "online" if online else "warmup",
                "steps": steps,
                "loss": {k: v / steps for k, v in sorted(sums.items())} if steps else {},
                "backend_calls": self.backend.calls - calls_before,
                "rebuilt_index": rebuilt,
                **stats,
            }
            self.report["epochs"].append(entry)
            log.info("epoch %d (%s): %s", epoch, entry["phase"], entry["loss"])
            if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
                self._eval(ck, epoch)
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and epoch != cfg.epochs:
                self._save(ck, epoch, f"epoch{epoch:03d}")
        self._finish()
        self._save(ck, cfg.epochs, "final")
        return TrainResult(ck, self.report, self.pools)

    def _finish(self) -> None:
        per = self.report["ndoc"]["per_query"]
        self.report["ndoc"]["mean"] = float(np.mean([e["fresh"] for e in per.values()])) if per else 0.0
        self.report["ndoc"]["by_task"] = count_ondemand(self.report)
        self.report["warmup_backend_calls"] = sum(
            e["backend_calls"] for e in self.report["epochs"] if e["phase"] == "warmup"
        )
        self.report["rebuilds"] = sum(e["rebuilt_index"] for e in self.report["epochs"])


def train(
    cfg: TrainConfig,
    index: InvertedIndex,
    queries: Sequence[Query],
    backend: GeneratorBackend,
    offline: OfflineResult,
    cache: RagCache | None = None,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    eval_backend: GeneratorBackend | None = None,
    lineage: str = "",
) -> TrainResult:
    """Train the encoder from fresh parameters (or from ``resume``).

    Epochs up to the warmup count draw pairs from the offline pools; later
    epochs retrieve with the current parameters and scan for verdicts. Each
    epoch seeds its own generator from ``(seed, epoch)``, so a resumed run
    replays the remaining epochs exactly. Eval snapshots go through
    ``eval_backend`` and are counted apart from training calls.
    """
    cache = cache if cache is not None else RagCache()
    return _Trainer(cfg, index, queries, backend, offline, cache, out_dir, eval_backend, lineage).run(resume)
