"""Acceptance criteria, one test each, each printing a PASS/FAIL line."""

import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import random_corpus, random_params
from ndoc_fixture import NDOC_CONFIG, NDOC_EXPECTED, NDOC_QUERIES, ndoc_fixture
from oracles import dense_rows, finite_difference, linear_scan, strict_argmax_oracle
from ragtune.corpus import bot_encode, build_index
from ragtune.encoder import EncoderParams, encode
from ragtune.evalkit import rag_accuracy
from ragtune.genio import CountingBackend, MockOracleBackend, RagCache, rag_label_offline, rag_score
from ragtune.learn import (
    TrainConfig,
    identify_closedset,
    identify_freeform,
    info_nce,
    kl_divergence,
    kl_loss,
    offline_prepare,
    total_loss,
    train,
)
from ragtune.search import Retriever, build_param_index, search_beta, search_full, search_late
from ragtune.synth import SynthConfig, make_benchmark, oracle_pass


@pytest.fixture
def verdict(capsys):
    def say(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail

    return say


def _pipeline(bench, cfg=TrainConfig(), cache=None, out_dir=None):
    """Offline preparation plus training from scratch on a planted benchmark."""
    vocab, index = build_index(bench.documents)
    backend = CountingBackend(MockOracleBackend(bench.queries))
    cache = cache if cache is not None else RagCache()
    r0 = Retriever(EncoderParams.init(vocab), index, "full")
    offline = offline_prepare(bench.queries, r0, backend, cache, k=cfg.k_offline)
    offline_calls = backend.calls
    res = train(cfg, index, bench.queries, backend, offline, cache, out_dir)
    return {"index": index, "offline": offline, "result": res, "backend": backend, "cache": cache,
            "offline_calls": offline_calls, "train_calls": backend.calls - offline_calls}


@pytest.fixture(scope="module")
def main_run(bench):
    t = time.perf_counter()
    run = _pipeline(bench)
    run["seconds"] = time.perf_counter() - t
    return run


def _rag1(params, index, bench, mode="full", m=100):
    r = Retriever(params, index, mode, m=m)
    return rag_accuracy(r, MockOracleBackend(bench.queries), bench.queries, 1).value


def test_c1_index_exactness(verdict):
    rng = np.random.default_rng(1)
    words, docs = random_corpus(rng, 1000, vocab_size=300, max_len=20)
    vocab, index = build_index(docs)
    params = random_params(rng, vocab, 0.8)
    queries = [encode(params, bot_encode(" ".join(rng.choice(words, size=int(rng.integers(1, 8)))), vocab))
               for _ in range(200)]
    k = 10
    t = time.perf_counter()
    pindex = build_param_index(params, index)
    beta = [search_beta(q, index, k) for q in queries]
    full = [search_full(q, pindex, k, params) for q in queries]
    elapsed = time.perf_counter() - t
    rows_bot, rows_par = dense_rows(index), dense_rows(index, params)
    bad = 0
    for q, b, f in zip(queries, beta, full):
        bad += [(h.doc_id, h.score) for h in b] != linear_scan(q, rows_bot, index.doc_ids, k)
        bad += [(h.doc_id, h.score) for h in f] != linear_scan(q, rows_par, index.doc_ids, k)
    verdict(1, bad == 0 and elapsed < 5.0,
            f"{400 - bad}/400 top-{k} lists equal the linear scan; search time {elapsed:.2f}s (< 5s)")


def test_c2_late_parametric_fidelity(verdict, bench, main_run):
    rng = np.random.default_rng(2)
    words, docs = random_corpus(rng, 300, vocab_size=80)
    vocab, index = build_index(docs)
    params = random_params(rng, vocab, 0.7)
    pindex = build_param_index(params, index)
    same = 0
    for _ in range(50):
        b = bot_encode(" ".join(rng.choice(words, size=4)), vocab)
        late = search_late(params, b, index, m=index.num_docs, k=25)
        same += late == search_full(encode(params, b), pindex, 25)
    trained = main_run["result"].checkpoint.params
    full = _rag1(trained, main_run["index"], bench, "full")
    late = _rag1(trained, main_run["index"], bench, "late", m=100)
    ok = same == 50 and late >= 0.9 * full
    verdict(2, ok, f"m=|D| identical on {same}/50; trained RAG@1 late(m=100) {late:.2f} vs full {full:.2f} "
                   f"(ratio {late / full if full else float('nan'):.3f} >= 0.9)")


def test_c3_gradient_correctness(verdict):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        _, docs = random_corpus(rng, 9, vocab_size=15, max_len=5)
        vocab, index = build_index(docs)
        bots = [index.bot(d.doc_id) for d in docs]
        q, p, n = bots[:3], bots[3:6], bots[6:]
        params = random_params(rng, vocab, 0.5)
        scores = -rng.uniform(0, 3, size=6)

        objectives = {
            "para": lambda x: total_loss(x, q, p, n, semi_weight=0.0),
            "final": lambda x: total_loss(x, q, p, n),
            "kl": lambda x: kl_loss(x, q[0], p + n, scores, 0.8, 1.2),
        }
        for name, fn in objectives.items():
            worst = max(worst, _fd_error(params, fn))
        # the two semi-parametric terms alone: difference of unit and zero weight
        def semi(x):
            a, b = total_loss(x, q, p, n, semi_weight=1.0), total_loss(x, q, p, n, semi_weight=0.0)
            return a.total - b.total, a.grad_g - b.grad_g, a.grad_l - b.grad_l

        worst = max(worst, _fd_error_raw(params, semi))
    verdict(3, worst < 1e-4, f"worst relative gradient error {worst:.2e} over 20 batches x 4 objectives (< 1e-4)")


def _fd_error(params, fn):
    return _fd_error_raw(params, lambda x: (lambda r: (r.total, r.grad_g, r.grad_l))(fn(x)))


def _fd_error_raw(params, fn):
    _, gg, gl = fn(params)
    fd_g = finite_difference(lambda v: fn(EncoderParams(v, params.l, params.fingerprint))[0], params.g.copy())
    fd_l = finite_difference(lambda v: fn(EncoderParams(params.g, v, params.fingerprint))[0], params.l.copy())
    analytic, numeric = np.concatenate([gg, gl]), np.concatenate([fd_g, fd_l])
    return float(np.max(np.abs(analytic - numeric)) / max(1e-8, np.max(np.abs(numeric))))


def test_c4_loss_calibration(verdict):
    errs = []
    for n in (1, 2, 5, 16, 64):
        r = info_nce(np.full((n, 2 * n), 1.25))
        errs.append(abs(r.q2d / n - math.log(2 * n)))
        errs.append(abs(r.d2q / n - math.log(n)))
    f = np.array([0.1, 2.0, -0.7, 1.1])
    kl0, _ = kl_divergence(f, f)
    kl1, _ = kl_divergence(3 * f, f, tau_r=3.0, tau_g=1.0)
    ok = max(errs) < 1e-9 and kl0 == 0.0 and kl1 == 0.0
    verdict(4, ok, f"max |InfoNCE - ln(2N)|, |InfoNCE - ln N| = {max(errs):.1e}; KL at coincidence {kl0}, {kl1}")


def test_c5_rule_equivalence(verdict, bench, bench_index, bench_offline):
    rng = np.random.default_rng(5)
    mism = 0
    levels = np.log([0.05, 0.1, 0.2, 0.3, 0.5])
    for _ in range(10_000):
        n_lab = int(rng.integers(2, 6))
        labels = "ABCDE"[:n_lab]
        probs = {lab: float(rng.choice(levels)) for lab in labels}
        correct = set(rng.choice(list(labels), size=int(rng.integers(1, n_lab)), replace=False).tolist())
        mism += identify_closedset(probs, correct) != strict_argmax_oracle(probs, correct)
    # exhaustive over three-valued maps on up to four labels
    exhaustive = 0
    for n_lab in range(2, 5):
        labels = "ABCD"[:n_lab]
        for vals in itertools.product(levels[:3], repeat=n_lab):
            probs = dict(zip(labels, vals))
            for r in range(1, n_lab):
                for correct in itertools.combinations(labels, r):
                    exhaustive += 1
                    mism += identify_closedset(probs, set(correct)) != strict_argmax_oracle(probs, set(correct))
    order = {0: 0, None: 1, 1: 2}
    non_mono = 0
    for _ in range(10_000):
        a, b, t1, t2 = rng.uniform(-10, 0, size=4)
        lo, hi = min(a, b), max(a, b)
        non_mono += order[identify_freeform(lo, t1, t2)] > order[identify_freeform(hi, t1, t2)]
    vocab, index = bench_index
    offline, _ = bench_offline
    backend = MockOracleBackend(bench.queries)
    disagree = decided = 0
    for qid in offline.retained[:25]:
        q = next(x for x in bench.queries if x.query_id == qid)
        pools = offline.pools[qid]
        docs = [index.document(r.doc_id) for r in offline.records[qid]]
        docs += [index.document(d) for d in rng.choice(index.doc_ids, size=20, replace=False)]
        for d in docs:
            v = identify_freeform(rag_score(backend, q, d).log_score, pools.max_neg_logscore, pools.min_pos_logscore)
            if v is None:
                continue
            decided += 1
            disagree += v != rag_label_offline(backend, q, d)
    ok = mism == 0 and non_mono == 0 and disagree == 0 and decided > 0
    verdict(5, ok, f"closed-set mismatches {mism}/{10_000 + exhaustive}; monotonicity violations {non_mono}/10000; "
                   f"threshold vs generated label disagreements {disagree}/{decided}")


def test_c6_end_to_end_learning(verdict, bench, main_run):
    manifest = oracle_pass(bench)
    index = main_run["index"]
    untrained = _rag1(EncoderParams.init(index.vocab), index, bench)
    trained = _rag1(main_run["result"].checkpoint.params, index, bench)
    snaps = [s["rag_accuracy@1"] for s in main_run["result"].report["eval_snapshots"]]
    monotone = all(b >= a - 0.02 for a, b in zip(snaps, snaps[1:]))
    lift = 100 * (trained - untrained)
    ok = (manifest["perfect_rag_at_1"] >= 90 and manifest["baseline_rag_at_1"] <= 60 and lift >= 10
          and monotone and main_run["seconds"] < 600)
    verdict(6, ok, f"oracle perfect {manifest['perfect_rag_at_1']:.0f}, baseline {manifest['baseline_rag_at_1']:.0f}; "
                   f"RAG@1 {100 * untrained:.0f} -> {100 * trained:.0f} (+{lift:.0f}); snapshots {snaps}; "
                   f"run {main_run['seconds']:.1f}s")


def test_c7_offline_fidelity(verdict, bench, main_run):
    manifest = oracle_pass(bench, k_offline=100)
    got = sorted(main_run["offline"].retained)
    ok = got == manifest["expected_retained"] and sorted(main_run["offline"].dropped) == manifest["expected_dropped"]
    verdict(7, ok, f"retained {len(got)} / dropped {len(main_run['offline'].dropped)}; "
                   f"oracle expects {len(manifest['expected_retained'])} / {len(manifest['expected_dropped'])}")


def test_c8_cache_and_cost_accounting(verdict, bench, main_run):
    again = _pipeline(bench, cache=main_run["cache"])
    second_calls = again["backend"].calls
    vocab, index, backend, cache, offline = ndoc_fixture()
    res = train(NDOC_CONFIG, index, NDOC_QUERIES, backend, offline, cache)
    per = {qid: e["fresh"] for qid, e in res.report["ndoc"]["per_query"].items()}
    warm = main_run["result"].report["warmup_backend_calls"]
    ok = second_calls == 0 and per == NDOC_EXPECTED and warm == 0
    verdict(8, ok, f"second identical run: {second_calls} backend calls; nDoc trace {per} vs hand count "
                   f"{NDOC_EXPECTED}; warmup calls {warm}")


def test_c9_determinism(verdict, bench, tmp_path):
    a = _pipeline(bench, out_dir=tmp_path / "a")
    b = _pipeline(bench, out_dir=tmp_path / "b")
    same_ckpt = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                    for f in ("final.ckpt", "epoch005.ckpt", "epoch010.ckpt", "epoch015.ckpt"))
    ra = json.dumps(a["result"].report, sort_keys=True)
    rb = json.dumps(b["result"].report, sort_keys=True)
    verdict(9, same_ckpt and ra == rb, f"checkpoints bit-identical: {same_ckpt}; report JSON identical: {ra == rb}")


@pytest.mark.slow
def test_c10_ablation_harness(verdict):
    rows, wins = [], 0
    for seed in range(5):
        bench = make_benchmark(SynthConfig(seed=seed))
        final = {}
        for label, kw in (("offline+online", {}), ("offline-only", {"schedule": "offline-only"}),
                          ("online-only", {"schedule": "online-only"}), ("kl", {"loss": "kl"})):
            run = _pipeline(bench, TrainConfig(seed=seed, **kw))
            snap = run["result"].report["eval_snapshots"][-1]
            final[label] = snap["rag_accuracy@1"]
            rows.append({"seed": seed, "mode": label, "rag_accuracy@1": snap["rag_accuracy@1"],
                         "n_queries": snap["n_queries"], "ndoc_mean": run["result"].report["ndoc"]["mean"]})
        wins += final["offline+online"] >= final["offline-only"]
    complete = len(rows) == 20 and all(set(r) == set(rows[0]) for r in rows)
    table = "; ".join(f"s{r['seed']} {r['mode']} {r['rag_accuracy@1']:.2f}" for r in rows)
    verdict(10, complete and wins >= 4, f"offline+online >= offline-only in {wins}/5 seeds; rows: {table}")
