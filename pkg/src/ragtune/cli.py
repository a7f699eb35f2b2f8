"""Command-line entry point: ``ragtune <command> --config run.yaml``.

Commands: synth, index, offline, train, eval, analyze. Each stage writes its
outputs with a lineage hash derived from its inputs and the upstream hash,
and refuses artifacts whose recorded lineage does not match.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 backend error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, stable_hash
from .corpus import INDEX_FORMAT_VERSION, CorpusError, build_index, load_corpus, load_index, load_queries, save_index
from .encoder import CheckpointError, EncoderParams, FingerprintMismatch, load_checkpoint
from .evalkit import EvalResult, best_of_n, ir_accuracy, rag_accuracy, score_sorted_accuracy, write_reports
from .genio.backends import BackendError, HttpCompletionsBackend, MockOracleBackend
from .genio.cache import RagCache
from .learn.pools import OfflineAborted, offline_from_json, offline_prepare, offline_to_json
from .learn.train import count_ondemand, train
from .search import Retriever
from .synth import SynthConfig, SynthError, make_benchmark, write_benchmark

log = logging.getLogger("ragtune")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


def _sha_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    tmp.replace(path)


# lineage


def index_lineage(cfg: RunConfig) -> str:
    return stable_hash({"corpus": _sha_file(cfg.paths["corpus"]), "index_format": INDEX_FORMAT_VERSION})


def offline_lineage(cfg: RunConfig, backend_fp: str) -> str:
    return stable_hash({"index": index_lineage(cfg), "queries": _sha_file(cfg.paths["queries"]),
                        "backend": backend_fp, "k_offline": cfg.train.k_offline})


def train_lineage(cfg: RunConfig, backend_fp: str) -> str:
    return stable_hash({"offline": offline_lineage(cfg, backend_fp), "train": cfg.train.to_dict()})


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{path}: missing {what}; run the earlier stage first")
    return path


# shared loaders


def make_backend(cfg: RunConfig, queries):
    b = cfg.backend
    if b["kind"] == "mock":
        return MockOracleBackend(queries)
    return HttpCompletionsBackend(
        endpoint=b["endpoint"], model=b["model"], api_key=os.environ.get("RAGTUNE_API_KEY"),
        timeout=float(b["timeout"]), max_retries=int(b["max_retries"]), max_in_flight=int(b["max_in_flight"]),
    )


def _load_index(cfg: RunConfig):
    docs = load_corpus(cfg.paths["corpus"])
    index, meta = load_index(_require(cfg.paths["index"], "index"), docs)
    want = index_lineage(cfg)
    if meta.get("lineage") != want:
        raise DataError(f"{cfg.paths['index']}: index was built from a different corpus; rerun 'index'")
    return index


def _load_offline(cfg: RunConfig, backend_fp: str):
    path = _require(cfg.paths["offline"], "offline preparation")
    try:
        result, meta = offline_from_json(path.read_text(encoding="utf-8"))
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if meta.get("lineage") != offline_lineage(cfg, backend_fp):
        raise DataError(f"{path}: offline records come from different inputs; rerun 'offline'")
    return result


def _checkpoint_params(cfg: RunConfig, index, which: str | None, backend_fp: str) -> tuple[EncoderParams, str]:
    if which == "untrained":
        return EncoderParams.init(index.vocab), "untrained"
    path = Path(which) if which else cfg.paths["checkpoints"] / "final.ckpt"
    ck = load_checkpoint(_require(path, "checkpoint"), index.vocab)
    sidecar = path.with_suffix(".state.json")
    if sidecar.exists():
        lineage = json.loads(sidecar.read_text(encoding="utf-8"))["report"].get("lineage")
        if lineage != train_lineage(cfg, backend_fp):
            raise DataError(f"{path}: checkpoint was trained under a different configuration")
    return ck.params, path.stem


# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    params = dict(cfg.synth)
    if args.seed is not None:
        params["seed"] = args.seed
    if args.n_docs is not None:
        params["n_docs"] = args.n_docs
    if args.n_queries is not None:
        params["n_queries"] = args.n_queries
    try:
        scfg = SynthConfig(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cfg.source}: synth: {exc}") from exc
    bench = make_benchmark(scfg)
    oracle = cfg.paths["corpus"].parent / "oracle.json"
    write_benchmark(bench, cfg.paths["corpus"], cfg.paths["queries"], oracle)
    m = bench.manifest
    print(f"synth: {m['n_docs']} docs, {m['n_queries']} queries, vocabulary {m['vocabulary_size']}; "
          f"baseline RAG@1 {m['baseline_rag_at_1']:.1f}, perfect {m['perfect_rag_at_1']:.1f}; "
          f"{len(m['expected_dropped'])} expected drops -> {oracle}")
    return EXIT_OK


def cmd_index(cfg: RunConfig, args) -> int:
    docs = load_corpus(cfg.paths["corpus"])
    _, index = build_index(docs)
    lineage = index_lineage(cfg)
    cfg.paths["index"].parent.mkdir(parents=True, exist_ok=True)
    save_index(index, cfg.paths["index"], {"lineage": lineage, "config_hash": cfg.config_hash})
    print(f"index: {index.num_docs} docs, {len(index.vocab)} tokens, lineage {lineage} -> {cfg.paths['index']}")
    return EXIT_OK


def cmd_offline(cfg: RunConfig, args) -> int:
    index = _load_index(cfg)
    queries = load_queries(cfg.paths["queries"])
    backend = make_backend(cfg, queries)
    cache = RagCache(cfg.paths["cache"])
    retriever = Retriever(EncoderParams.init(index.vocab), index, "full", name="untrained")
    try:
        result = offline_prepare(queries, retriever, backend, cache, k=cfg.train.k_offline)
    except OfflineAborted as exc:
        print(f"offline: {exc}; rerun to resume (finished queries are cached)", file=sys.stderr)
        return EXIT_BACKEND
    lineage = offline_lineage(cfg, backend.fingerprint)
    path = cfg.paths["offline"]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(offline_to_json(result, {"lineage": lineage, "config_hash": cfg.config_hash}), encoding="utf-8")
    rep = result.report()
    print(f"offline: {rep['retained']} retained, {rep['dropped']} dropped, "
          f"{rep['fresh_documents_scored']} documents freshly scored -> {path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    index = _load_index(cfg)
    queries = load_queries(cfg.paths["queries"])
    backend = make_backend(cfg, queries)
    offline = _load_offline(cfg, backend.fingerprint)
    cache = RagCache(cfg.paths["cache"])
    lineage = train_lineage(cfg, backend.fingerprint)
    try:
        res = train(cfg.train, index, queries, backend, offline, cache, cfg.paths["checkpoints"],
                    resume=args.checkpoint, lineage=lineage)
    except ValueError as exc:
        if args.checkpoint:
            raise DataError(str(exc)) from exc
        raise
    out = cfg.paths["reports"] / "train_report.json"
    _write_json(out, res.report)
    snaps = res.report["eval_snapshots"]
    last = f"{100 * snaps[-1]['rag_accuracy@1']:.1f}" if snaps else "n/a"
    print(f"train: {cfg.train.epochs} epochs, final RAG@1 (late m={cfg.train.eval_m}) {last}; "
          f"checkpoint {cfg.paths['checkpoints'] / 'final.ckpt'}; report {out}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    index = _load_index(cfg)
    queries = load_queries(cfg.paths["queries"])
    backend = make_backend(cfg, queries)
    cache = RagCache(cfg.paths["cache"])
    params, name = _checkpoint_params(cfg, index, args.checkpoint, backend.fingerprint)
    mode = cfg.eval["search"]
    retriever = Retriever(params, index, mode, name=name)
    results: list[EvalResult] = []
    ds, ch = cfg.dataset, cfg.config_hash
    freeform = [q for q in queries if q.task_kind == "freeform"]
    for n in cfg.eval["ndocs"]:
        if "rag_accuracy" in cfg.eval["metrics"]:
            results.append(rag_accuracy(retriever, backend, queries, n, cache, ds, ch))
        if "ir_accuracy" in cfg.eval["metrics"] and freeform:
            results.append(ir_accuracy(retriever, freeform, n, ds, ch))
        if "best_of_n" in cfg.eval["metrics"]:
            base = Retriever(EncoderParams.init(index.vocab), index, mode, name="untrained")
            results.append(best_of_n([retriever, base], backend, queries, n, cache, ds, ch))
    paths = write_reports(results, cfg.paths["reports"], ch, stem=f"eval_{name}")
    for r in results:
        print(f"eval: {r.retriever} {r.metric} = {r.percent:.1f} ({r.correct}/{r.n_queries})")
    print(f"eval: reports -> {paths['json'].parent}")
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, args) -> int:
    index = _load_index(cfg)
    queries = load_queries(cfg.paths["queries"])
    backend = make_backend(cfg, queries)
    offline = _load_offline(cfg, backend.fingerprint)
    cache = RagCache(cfg.paths["cache"])
    results = []
    for n in cfg.eval["ndocs"]:
        results.extend(score_sorted_accuracy(backend, queries, offline.records, index, n, cache,
                                             cfg.dataset, cfg.config_hash))
    out = {"score_sorted": [r.__dict__ for r in results], "offline": offline.report()}
    train_report = cfg.paths["reports"] / "train_report.json"
    if train_report.exists():
        rep = json.loads(train_report.read_text(encoding="utf-8"))
        out["ndoc_by_task"] = count_ondemand(rep)
        out["ndoc_mean"] = rep.get("ndoc", {}).get("mean")
    _write_json(cfg.paths["reports"] / "analysis.json", out)
    for r in results:
        print(f"analyze: {r.retriever} {r.metric} = {r.percent:.1f}")
    if "ndoc_by_task" in out:
        print(f"analyze: mean freshly scored documents per query {out['ndoc_by_task']}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "index": cmd_index,
    "offline": cmd_offline,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ragtune", description="Tune a sparse retriever from generator feedback.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, help="override paths.reports")
        sp.add_argument("--backend-override", choices=("mock", "http"))
        if name in ("train", "eval"):
            sp.add_argument("--checkpoint", help="checkpoint to resume from (train) or evaluate (eval); "
                                                 "'untrained' evaluates fresh parameters")
        if name == "synth":
            sp.add_argument("--n-docs", type=int)
            sp.add_argument("--n-queries", type=int)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if not hasattr(args, "checkpoint"):
        args.checkpoint = None
    try:
        cfg = load_config(args.config, check_inputs=args.command != "synth")
        if args.seed is not None and args.command != "synth":
            cfg = cfg.with_seed(args.seed)
        if args.backend_override:
            cfg = cfg.with_backend(args.backend_override)
        if args.out is not None:
            cfg.paths["reports"] = args.out
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CorpusError, CheckpointError, FingerprintMismatch, SynthError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
