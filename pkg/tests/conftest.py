import numpy as np
import pytest

from ragtune.corpus import Document, Query, build_index
from ragtune.encoder import EncoderParams
from ragtune.genio import MockOracleBackend, RagCache
from ragtune.learn import offline_prepare
from ragtune.search import Retriever
from ragtune.synth import SynthConfig, make_benchmark


def random_corpus(rng: np.random.Generator, n_docs: int, vocab_size: int = 60, max_len: int = 12):
    words = [f"w{i}" for i in range(vocab_size)]
    docs = []
    for i in range(n_docs):
        n = int(rng.integers(1, max_len + 1))
        body = " ".join(rng.choice(words, size=n))
        docs.append(Document(f"doc{i:05d}", "", body))
    return words, docs


def random_params(rng: np.random.Generator, vocab, scale: float = 1.0) -> EncoderParams:
    n = len(vocab)
    return EncoderParams(rng.normal(0, scale, n), rng.normal(0, scale, n), vocab.fingerprint)


@pytest.fixture
def toy_docs():
    return [
        Document("d1", "Cats", "cat cat sat on the mat"),
        Document("d2", "Dogs", "dog chased the cat"),
        Document("d3", "Birds", "bird sang a song"),
        Document("d4", "Fish", "fish swim in the sea with a cat"),
    ]


@pytest.fixture
def toy_index(toy_docs):
    return build_index(toy_docs)


@pytest.fixture(scope="session")
def bench():
    return make_benchmark(SynthConfig(seed=0))


@pytest.fixture(scope="session")
def bench_index(bench):
    return build_index(bench.documents)


@pytest.fixture(scope="session")
def bench_offline(bench, bench_index):
    vocab, index = bench_index
    backend = MockOracleBackend(bench.queries)
    cache = RagCache()
    r = Retriever(EncoderParams.init(vocab), index, "full")
    return offline_prepare(bench.queries, r, backend, cache, k=100), cache


def freeform(qid, question, answers):
    return Query(qid, "freeform", question, answers=tuple(answers))
