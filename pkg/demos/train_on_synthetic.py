"""Walk through the whole pipeline in-process on the planted benchmark.

    python3 demos/train_on_synthetic.py [seed]

Builds the benchmark, indexes it, labels the offline top-100 with the mock
generator, trains the encoder and prints RAG accuracy before and after.
"""

import sys
import time

from ragtune.corpus import build_index
from ragtune.encoder import EncoderParams
from ragtune.evalkit import ir_accuracy, rag_accuracy
from ragtune.genio import CountingBackend, MockOracleBackend, RagCache
from ragtune.learn import TrainConfig, offline_prepare, train
from ragtune.search import Retriever
from ragtune.synth import SynthConfig, make_benchmark

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
bench = make_benchmark(SynthConfig(seed=seed))
print(f"benchmark: {len(bench.documents)} docs, {len(bench.queries)} queries, "
      f"{len(bench.manifest['expected_dropped'])} without a reachable answer")

vocab, index = build_index(bench.documents)
backend = CountingBackend(MockOracleBackend(bench.queries))
cache = RagCache()

untrained = Retriever(EncoderParams.init(vocab), index, "full", name="untrained")
offline = offline_prepare(bench.queries, untrained, backend, cache, k=100)
print(f"offline: kept {len(offline.retained)} queries, dropped {len(offline.dropped)}, "
      f"{backend.calls} generator calls")

t = time.perf_counter()
cfg = TrainConfig(seed=seed)
result = train(cfg, index, bench.queries, backend, offline, cache)
print(f"training: {cfg.epochs} epochs in {time.perf_counter() - t:.1f}s, "
      f"mean fresh docs per online query {result.report['ndoc']['mean']:.2f}")
for snap in result.report["eval_snapshots"]:
    print(f"  epoch {snap['epoch']:>3}  RAG@1 {snap['rag_accuracy@1']:.2f}")

trained = Retriever(result.checkpoint.params, index, "full", name="trained")
oracle = MockOracleBackend(bench.queries)
for r in (untrained, trained):
    print(f"{r.name:>9}: RAG@1 {rag_accuracy(r, oracle, bench.queries, 1).percent:5.1f}  "
          f"IR@1 {ir_accuracy(r, bench.queries, 1).percent:5.1f}")
