import json

import pytest

from ragtune.corpus import load_corpus, load_queries, tokenize
from ragtune.synth import SynthConfig, SynthError, make_benchmark, oracle_pass, write_benchmark


def test_sizes_and_manifest(bench):
    m = bench.manifest
    assert len(bench.documents) == 500 and len(bench.queries) == 100
    assert 700 <= m["vocabulary_size"] <= 900
    assert m["perfect_rag_at_1"] >= 90 and m["baseline_rag_at_1"] <= 60
    assert len(m["expected_dropped"]) == 8
    assert sorted(m["expected_retained"] + m["expected_dropped"]) == sorted(q.query_id for q in bench.queries)


def test_seed_determinism():
    a = make_benchmark(SynthConfig(seed=3))
    b = make_benchmark(SynthConfig(seed=3))
    c = make_benchmark(SynthConfig(seed=4))
    assert a.documents == b.documents and a.queries == b.queries
    assert a.documents != c.documents


def test_planted_guarantees_by_brute_force(bench):
    docs = {d.doc_id: d for d in bench.documents}
    for q in bench.queries:
        plan = bench.planted[q.query_id]
        qt = set(tokenize(q.question))
        ans = plan["answer_docs"]
        assert len(ans) >= 1 and len(plan["distractors"]) >= 3
        a_ov = max(len(qt & set(tokenize(docs[d].text))) for d in ans)
        for d in plan["distractors"]:
            assert len(qt & set(tokenize(docs[d].text))) > a_ov
            assert q.answers[0] not in docs[d].text
        assert (a_ov >= 1) == plan["reachable"]


def test_oracle_rejects_broken_benchmark(bench):
    import copy

    broken = copy.deepcopy(bench)
    victim = broken.queries[0]
    extra = broken.documents[-1]
    broken.documents[-1] = type(extra)(extra.doc_id, extra.title, extra.body + " " + victim.answers[0])
    with pytest.raises(SynthError):
        oracle_pass(broken)


def test_closedset_variant():
    cs = make_benchmark(SynthConfig(seed=2, task="closedset"))
    q = cs.queries[0]
    assert q.task_kind == "closedset" and q.labels == ("A", "B", "C", "D") and len(q.correct) == 1
    assert q.evidence and cs.manifest["perfect_rag_at_1"] >= 90


def test_write_round_trip(bench, tmp_path):
    write_benchmark(bench, tmp_path / "c.jsonl", tmp_path / "q.jsonl", tmp_path / "o.json")
    assert load_corpus(tmp_path / "c.jsonl") == bench.documents
    assert load_queries(tmp_path / "q.jsonl") == bench.queries
    assert json.loads((tmp_path / "o.json").read_text())["expected_dropped"] == bench.manifest["expected_dropped"]


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_docs=100)
    with pytest.raises(ValueError):
        SynthConfig(task="other")
