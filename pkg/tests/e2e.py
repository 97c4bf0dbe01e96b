"""In-process stub run over a generated corpus, shared by several test modules."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from autoprov import synthgen
from autoprov.assistant import TacticCatalog
from autoprov.cluster import run_stream
from autoprov.core import LogRecord
from autoprov.cpe import run_cpe
from autoprov.detect import build_attack_graph, fit_reference_detector, score_nodes
from autoprov.embed import HashingEmbedder
from autoprov.enrich import BehavioralDB, FunctionalityDB, SignatureIndex, enrich_graph
from autoprov.graph import build_graph
from autoprov.rules import apply_to_stream, induce_rules


@dataclass
class Run:
    corpus: object
    logs: list
    candidates: object
    assignment: dict
    pdb: object
    rule_db: object
    records: list
    stats: object
    benign_graph: object
    test_graph: object
    f_db: object
    b_db: object
    index: object
    scores: list
    attack_graph: object
    responder: object
    embedder: object
    catalog: object


def corpus_logs(corpus) -> list[LogRecord]:
    logs = [LogRecord(f"benign:{i + 1}", ln.text, i, i // 1000) for i, ln in enumerate(corpus.benign)]
    n = len(logs)
    logs += [LogRecord(f"test:{i + 1}", ln.text, n + i, (n + i) // 1000) for i, ln in enumerate(corpus.test)]
    return logs


def run(seed: int = 0, n_seed: int = 10, **spec) -> Run:
    corpus = synthgen.generate(synthgen.CorpusSpec(seed=seed, **spec))
    logs = corpus_logs(corpus)
    emb = HashingEmbedder()
    cands, _, assign = run_stream(logs, emb)
    resp = synthgen.stub_responder(corpus.spec.formats)
    pdb, _, _ = run_cpe(resp, cands)
    rdb, _ = induce_rules(resp, pdb.records(), {l.log_id: l.raw_text for l in logs}, cands.cluster_of())
    recs, stats, _ = apply_to_stream(rdb, logs, assign)
    gb = build_graph(r for r in recs if r.source_log_id.startswith("benign"))
    gt = build_graph(r for r in recs if r.source_log_id.startswith("test"))
    f, b, ix = FunctionalityDB(), BehavioralDB(), SignatureIndex()
    enrich_graph(gb, resp, f, b, ix)
    enrich_graph(gt, resp, f, b, ix)
    scores = score_nodes(fit_reference_detector(gb), gt)
    ag = build_attack_graph(gt, scores, n_seed)
    return Run(corpus, logs, cands, assign, pdb, rdb, recs, stats, gb, gt, f, b, ix, scores, ag, resp, emb,
               TacticCatalog.load())


@lru_cache(maxsize=None)
def default_run() -> Run:
    return run(0)
