import logging

import pytest
from hypothesis import given, settings, strategies as st

from autoprov.core import CPE_ORIGIN, LogRecord, Timestamp
from autoprov.cpe import (
    CandidateProvenanceDB,
    CpeConfig,
    CpeOutput,
    Edge,
    ExtractionError,
    InContextPool,
    assemble_records,
    extract_edges_voted,
    extract_entities,
    extract_entity_types,
    run_cpe,
    summarize_log,
)
from autoprov.llm import ScriptedResponder, ScriptRule
from autoprov.llm.parsers import parse_summary_annotations
from autoprov.synthgen import CorpusSpec, generate, stub_responder

LOG = "pid=441 comm=bash opened /etc/passwd"
SUMMARY = 'The process "bash" (ID-1) {read} the file "/etc/passwd" (ID-2).'
P2 = '"ID-1" = "process"\n"ID-2" = "file"'
P3 = '[RELATED ENTITIES and IP ADDRESSES]\n(ID-1, ID-2)\n\n[ENTITY NAMES]\n"ID-1" = "bash"\n"ID-2" = "/etc/passwd"'
LR = "(ID-1, ID-2) A: [read] {D=->} (timestamp=t1)"
RL = "(ID-1, ID-2) A: [read] {D=<-} (timestamp=t2)"


def _stub(p4_by_vote, default_p4=None):
    rules = [ScriptRule(response=SUMMARY, template="P1"),
             ScriptRule(response=P2, template="P2"),
             ScriptRule(response=P3, template="P3")]
    for vote, answer in p4_by_vote.items():
        if answer == "fail":
            rules.append(ScriptRule(template="P4", vote=vote, error="transport"))
        else:
            rules.append(ScriptRule(response=answer, template="P4", vote=vote))
    if default_p4 is not None:
        rules.append(ScriptRule(response=default_p4, template="P4"))
    return ScriptedResponder(rules)


def test_summary_passthrough_and_errors():
    stub = ScriptedResponder([ScriptRule(response="A fixed paragraph.", template="P1")])
    assert summarize_log(stub, LOG) == "A fixed paragraph."
    blank = ScriptedResponder([ScriptRule(response="   ", template="P1")])
    with pytest.raises(ExtractionError):
        summarize_log(blank, LOG)


def test_synthetic_summary_names_two_ids():
    corpus = generate(CorpusSpec(seed=0, n_benign=50, n_test=0, formats=["auditd", "dns"], attacks=[]))
    line = next(ln for ln in corpus.benign if ln.fmt == "auditd")
    summary = summarize_log(stub_responder(["auditd"]), line.text)
    assert len(parse_summary_annotations(summary).ids) == 2


def test_entity_types_first_wins(caplog):
    stub = ScriptedResponder([ScriptRule(response='"id-1" = "process"\n"id-3" = "NONE"\n"id-1" = "file"', template="P2")])
    with caplog.at_level(logging.WARNING):
        assert extract_entity_types(stub, LOG, SUMMARY) == {"id-1": "process", "id-3": "NONE"}
    assert "conflict" in caplog.text
    with pytest.raises(ExtractionError):
        extract_entity_types(ScriptedResponder([ScriptRule(response="nothing", template="P2")]), LOG, SUMMARY)


def test_extract_entities_sections():
    pairs, names = extract_entities(_stub({}), LOG, SUMMARY)
    assert pairs == [("ID-1", "ID-2")] and names == {"ID-1": "bash", "ID-2": "/etc/passwd"}
    bad = ScriptedResponder([ScriptRule(response="(ID-1, ID-2)", template="P3")])
    with pytest.raises(ExtractionError):
        extract_entities(bad, LOG, SUMMARY)


def test_four_of_seven_votes_left_to_right():
    stub = _stub({4: RL, 5: RL, 6: RL}, default_p4=LR)
    edges = extract_edges_voted(stub, LOG, SUMMARY, [("ID-1", "ID-2")])
    assert edges == [Edge("ID-1", "ID-2", "read", "t1")]


def test_three_valid_votes_two_say_reverse():
    votes = {0: "fail", 1: "fail", 2: "fail", 3: "fail", 4: LR, 5: RL, 6: RL}
    edges = extract_edges_voted(_stub(votes), LOG, SUMMARY, [("ID-1", "ID-2")])
    assert edges == [Edge("ID-2", "ID-1", "read", "t2")]


def test_even_tie_defaults_left_to_right(caplog):
    votes = {0: "fail", 1: "fail", 2: "fail", 3: "fail", 4: "fail", 5: LR, 6: RL}
    with caplog.at_level(logging.WARNING):
        edges = extract_edges_voted(_stub(votes), LOG, SUMMARY, [("ID-1", "ID-2")])
    assert edges[0].sid == "ID-1"
    assert "tie" in caplog.text


def test_all_votes_fail():
    with pytest.raises(ExtractionError):
        extract_edges_voted(_stub({i: "fail" for i in range(7)}), LOG, SUMMARY, [("ID-1", "ID-2")])


def test_multi_action_list_one_edge_each():
    stub = _stub({}, default_p4="(ID-1, ID-2) A: [read, write] {D=->} (timestamp=t1)")
    edges = extract_edges_voted(stub, LOG, SUMMARY, [("ID-1", "ID-2")])
    assert [e.itype for e in edges] == ["read", "write"]


def test_pair_missing_from_runs_noted():
    notes = []
    edges = extract_edges_voted(_stub({}, default_p4=LR), LOG, SUMMARY, [("ID-1", "ID-2"), ("ID-2", "ID-9")],
                                notes=notes)
    assert len(edges) == 1 and len(notes) == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["LR", "RL", "fail"]), min_size=7, max_size=7))
def test_vote_is_mode_of_valid_votes(pattern):
    valid = [p for p in pattern if p != "fail"]
    stub = _stub({i: (LR if p == "LR" else RL if p == "RL" else "fail") for i, p in enumerate(pattern)})
    if not valid:
        with pytest.raises(ExtractionError):
            extract_edges_voted(stub, LOG, SUMMARY, [("ID-1", "ID-2")])
        return
    edges = extract_edges_voted(stub, LOG, SUMMARY, [("ID-1", "ID-2")])
    expected = "RL" if valid.count("RL") > valid.count("LR") else "LR"
    assert (edges[0].sid == "ID-1") == (expected == "LR")


def _output(types, names, edges):
    return CpeOutput("L1", "s", types, names, [], edges)


def test_assemble_full_record():
    out = _output({"ID-1": "process", "ID-2": "file"}, {"ID-1": "bash", "ID-2": "/etc/passwd"},
                  [Edge("ID-1", "ID-2", "read", "2018-04-10T12:00:00Z")])
    (rec,) = assemble_records(out, seq=4)
    assert rec.fields() == {"sid": "ID-1", "stype": "process", "sname": "bash", "did": "ID-2", "dtype": "file",
                            "dname": "/etc/passwd", "itype": "read", "time": "2018-04-10T12:00:00Z"}
    assert rec.time == Timestamp("2018-04-10T12:00:00Z", 1523361600000000)
    assert rec.origin == CPE_ORIGIN and rec.seq == 4


def test_assemble_none_and_endpoints():
    out = _output({"ID-1": "process"}, {"ID-1": "NONE"}, [Edge("10.0.0.1:443", "ID-1", "connect")])
    (rec,) = assemble_records(out)
    assert rec.sid == "10.0.0.1:443" and rec.stype == "source address"
    assert rec.sname is None and rec.dname is None


def test_assemble_unknown_id_warns(caplog):
    with caplog.at_level(logging.WARNING):
        (rec,) = assemble_records(_output({}, {}, [Edge("x", "y", "read")]))
    assert rec.stype is None and "unknown id" in caplog.text


def _candidates(n=3, fmt="auditd"):
    corpus = generate(CorpusSpec(seed=0, n_benign=20 * n, n_test=0, formats=[fmt, "dns"], attacks=[]))
    lines = [ln for ln in corpus.benign if ln.fmt == fmt][:n]
    return [LogRecord(f"l{i}", ln.text, i) for i, ln in enumerate(lines)], lines


def test_run_cpe_empty():
    db, skips, outs = run_cpe(stub_responder(), [])
    assert len(db) == 0 and len(skips) == 0


def test_run_cpe_three_logs_match_oracle():
    logs, lines = _candidates()
    db, skips, _ = run_cpe(stub_responder(["auditd"]), logs)
    assert sorted(db) == ["l0", "l1", "l2"] and len(skips) == 0
    for i, ln in enumerate(lines):
        assert [r.fields() for r in db[f"l{i}"]] == [ln.record]
        assert all(r.origin == CPE_ORIGIN and r.source_log_id == f"l{i}" for r in db[f"l{i}"])


def test_run_cpe_isolates_failure():
    logs, _ = _candidates()
    base = stub_responder(["auditd"])
    stub = ScriptedResponder([ScriptRule(template="P1", binding="log", equals=logs[1].raw_text, error="protocol"),
                              *base.rules])
    db, skips, _ = run_cpe(stub, logs)
    assert sorted(db) == ["l0", "l2"]
    assert [(e.log_id, e.stage) for e in skips.entries] == [("l1", "P1")]


def test_run_cpe_deterministic_with_pool(tmp_path):
    logs, _ = _candidates(6)
    blobs = []
    for i in range(2):
        db, _, _ = run_cpe(stub_responder(["auditd"]), logs, pool=InContextPool(seed=1), config=CpeConfig(rng_seed=1))
        db.save(tmp_path / f"p{i}.jsonl")
        blobs.append((tmp_path / f"p{i}.jsonl").read_bytes())
    assert blobs[0] == blobs[1]
    again = CandidateProvenanceDB.load(tmp_path / "p0.jsonl")
    assert again.records() == db.records()


def test_pool_bounded():
    from autoprov.llm import InContextExample, TemplateId
    pool = InContextPool(capacity=8, sample_size=2, seed=0)
    for i in range(30):
        pool.add(TemplateId.P1, InContextExample(str(i), str(i)))
    assert len(pool) == 8
    assert len(pool.sample(TemplateId.P1)) == 2
    assert pool.sample(TemplateId.P2) == ()
