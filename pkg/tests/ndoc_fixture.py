"""Hand-traced five-query fixture for counting freshly scored documents."""

from conftest import freeform
from ragtune.corpus import Document, build_index
from ragtune.genio import MockOracleBackend, RagCache, offline_record
from ragtune.learn import OfflineResult, TrainConfig, pools_from_records

# Five queries with private vocabularies. At initial parameters the late
# retriever ranks each query's docs by shared distinct tokens (ties by id).
NDOC_DOCS = {
    "x1a": "a1 b1 c1 ans1", "x1b": "a1 b1 ans1", "x1c": "a1 b1", "x1d": "a1",
    "x2a": "a2 b2", "x2b": "a2 ans2", "x2c": "zz2 ans2",
    "x3a": "a3 b3 c3 ans3", "x3b": "a3 b3 ans3", "x3c": "a3 ans3", "x3z": "noise3",
    "x4a": "a4 b4", "x4b": "q4 ans4", "x4c": "noise4",
    "x5a": "a5 b5 c5 ans5", "x5b": "a5 b5 c5 ans5 more", "x5c": "a5 b5 ans5", "x5d": "a5", "x5y": "ans5",
    "x5z": "noise5",
}
NDOC_QUERIES = [freeform(f"q{i}", f"a{i} b{i} c{i}", [f"ans{i}"]) for i in range(1, 6)]
# (offline positive, offline negative) per query: hand-picked, not retrieved
NDOC_OFFLINE = {
    "q1": ("x1b", "x1d"),  # scan: x1a fresh +, x1b cached +, x1c fresh - -> 2
    "q2": ("x2b", "x2a"),  # scan: x2a cached - -> 0
    "q3": ("x3c", "x3z"),  # scan: x3a, x3b fresh +, x3c cached +, no negative -> 2
    "q4": ("x4b", "x4c"),  # scan: x4a fresh - -> 1
    "q5": ("x5y", "x5z"),  # scan: x5a, x5b, x5c fresh + (k=3 cut) -> 3
}
NDOC_EXPECTED = {"q1": 2, "q2": 0, "q3": 2, "q4": 1, "q5": 3}


def ndoc_fixture():
    docs = [Document(d, "", body) for d, body in NDOC_DOCS.items()]
    vocab, index = build_index(docs)
    backend = MockOracleBackend(NDOC_QUERIES)
    cache = RagCache()
    records, pools = {}, {}
    for q in NDOC_QUERIES:
        recs = [offline_record(backend, q, index.document(d), cache=cache)[0] for d in NDOC_OFFLINE[q.query_id]]
        assert [r.label for r in recs] == [1, 0]
        records[q.query_id] = recs
        pools[q.query_id] = pools_from_records(q.query_id, recs)
    return vocab, index, backend, cache, OfflineResult(pools, records, [], 0)


NDOC_CONFIG = TrainConfig(epochs=1, schedule="online-only", batch_size=8, late_m=3, late_k=3,
                          eval_every=0, checkpoint_every=0)
