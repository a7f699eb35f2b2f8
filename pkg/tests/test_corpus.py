import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ragtune.corpus import (
    CorpusError,
    Document,
    Query,
    Vocabulary,
    bot_encode,
    build_index,
    index_to_json,
    load_corpus,
    load_index,
    load_queries,
    save_index,
    tokenize,
)


def test_tokenize_examples():
    assert tokenize("The cat sat.") == ["the", "cat", "sat"]
    assert tokenize("") == []
    assert tokenize("Big Momma's House") == ["big", "momma", "s", "house"]


def test_tokenize_unicode_and_underscore():
    assert tokenize("Café_au LAIT") == ["café", "au", "lait"]
    assert tokenize("a--b  c") == ["a", "b", "c"]


@given(st.lists(st.text(alphabet="abcxyzé0129", min_size=1, max_size=6), max_size=10))
def test_tokenize_join_idempotent(tokens):
    toks = tokenize(" ".join(tokens))
    assert tokenize(" ".join(toks)) == toks


def test_bot_encode_counts_and_oov():
    vocab = Vocabulary(["cat", "dog", "fish"])
    assert bot_encode("cat cat dog", vocab).entries() == [(0, 2), (1, 1)]
    assert bot_encode("", vocab).entries() == []
    assert bot_encode("zebra", vocab).entries() == []


def test_vocabulary_bijection():
    vocab = Vocabulary(["b", "a", "c"])
    for i in range(len(vocab)):
        assert vocab.lookup(vocab.token_of(i)) == i
    with pytest.raises(CorpusError):
        Vocabulary(["a", "a"])


def test_build_index_toy_postings():
    vocab, index = build_index([Document("d1", "", "a b"), Document("d2", "", "b b")])
    assert index.postings(vocab.lookup("a")) == [("d1", 1)]
    assert index.postings(vocab.lookup("b")) == [("d1", 1), ("d2", 2)]


def test_build_index_deterministic_and_order_free(toy_docs):
    _, a = build_index(toy_docs)
    _, b = build_index(list(reversed(toy_docs)))
    assert index_to_json(a) == index_to_json(b)


def test_build_index_rejects_bad_corpora(toy_docs):
    with pytest.raises(CorpusError):
        build_index([])
    with pytest.raises(CorpusError, match="d1"):
        build_index(toy_docs + [Document("d1", "", "again")])


def test_index_invariants_on_random_corpus():
    rng = np.random.default_rng(3)
    words = [f"t{i}" for i in range(30)]
    docs = [Document(f"x{i:03d}", "", " ".join(rng.choice(words, size=rng.integers(1, 9)))) for i in range(80)]
    vocab, index = build_index(docs)
    total = sum(len(p) for p in index.post_docs)
    assert total == sum(len(set(tokenize(d.text))) for d in docs)
    for d in docs:
        bot = bot_encode(d.text, vocab)
        for tid, c in bot.entries():
            assert (d.doc_id, c) in index.postings(tid)
        assert index.bot(d.doc_id).entries() == bot.entries()
    for tid in range(len(vocab)):
        ids = [doc for doc, _ in index.postings(tid)]
        assert ids == sorted(ids)


def test_index_save_load_roundtrip(tmp_path, toy_docs):
    _, index = build_index(toy_docs)
    path = tmp_path / "index.json"
    save_index(index, path, {"note": 1})
    loaded, meta = load_index(path, toy_docs)
    assert meta == {"note": 1}
    assert index_to_json(loaded) == index_to_json(index)
    assert loaded.document("d2").body == "dog chased the cat"
    with pytest.raises(CorpusError):
        load_index(path, toy_docs[:2])


def _write_lines(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")


def test_load_queries_freeform_and_closedset(tmp_path):
    path = tmp_path / "q.jsonl"
    _write_lines(
        path,
        [
            {"id": "nq1", "task": "freeform", "question": "who is the sister of for king and country",
             "answers": ["Rebecca St. James"]},
            {"id": "arc1", "task": "closedset", "question": "Which factor will most likely cause a fever?",
             "choices": [{"label": l, "text": t} for l, t in zip("ABCD", ["w", "x", "y", "z"])], "correct": "B"},
        ],
    )
    q1, q2 = load_queries(path)
    assert q1.task_kind == "freeform" and q1.answers == ("Rebecca St. James",)
    assert q2.labels == ("A", "B", "C", "D") and q2.correct == ("B",)


def test_load_queries_reports_line(tmp_path):
    path = tmp_path / "q.jsonl"
    _write_lines(path, [{"id": "a", "task": "freeform", "question": "q?", "answers": ["x"]},
                        {"id": "b", "task": "freeform", "question": "q?"}])
    with pytest.raises(CorpusError, match=r"q\.jsonl:2"):
        load_queries(path)


def test_load_corpus_errors(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": "a", "text": "x"}\n{"id": "a", "text": "y"}\n', encoding="utf-8")
    with pytest.raises(CorpusError, match=":2: duplicate"):
        load_corpus(path)
    path.write_text('{"id": "a", "text": "  "}\n', encoding="utf-8")
    with pytest.raises(CorpusError, match=":1:"):
        load_corpus(path)
    path.write_text("{not json\n", encoding="utf-8")
    with pytest.raises(CorpusError, match=":1: invalid JSON"):
        load_corpus(path)


def test_query_validation():
    with pytest.raises(CorpusError):
        Query("q", "freeform", "x?")
    with pytest.raises(CorpusError):
        Query("q", "closedset", "x?", choices=(("A", "a"),), correct=("A",))
    with pytest.raises(CorpusError):
        Query("q", "closedset", "x?", choices=(("A", "a"), ("a", "b")), correct=("A",))
    with pytest.raises(CorpusError):
        Query("q", "closedset", "x?", choices=(("A", "a"), ("B", "b")), correct=("C",))
