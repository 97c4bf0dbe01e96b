import logging
import random

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from autoprov.assistant import (
    UNKNOWN_FUNCTIONALITY,
    AssistantError,
    AttackSummary,
    LinearizedGraph,
    TacticCatalog,
    explain,
    flag_unknown_entities,
    inject_context,
    judge_tactic,
    linearize,
    summarize_attack,
    tactic_correctness,
)
from autoprov.core import ProvenanceRecord
from autoprov.detect import AttackGraph
from autoprov.enrich import FunctionalityDB, normalize_entity_name
from autoprov.graph import ProvEdge, build_graph
from autoprov.llm import ScriptedResponder, ScriptRule
from autoprov.llm.parsers import TacticReasoning

CATALOG = TacticCatalog.load()


def edge(s, d, it="read", n=1, seq=0):
    return ProvEdge(s, d, it, None, n, seq)


def test_catalog_ships_fourteen_tactics():
    assert len(CATALOG.names) == 14
    assert "reconnaissance" in CATALOG and "Command and Control" in CATALOG
    with pytest.raises(ValueError):
        TacticCatalog.parse("Execution\ta\nexecution\tb\n")


def test_linearize_suffixes():
    lin = linearize([edge("a", "b", n=10)])
    assert lin.lines == ["a --read--> b (x10)"]
    lin = linearize([edge("a", "b"), edge("a", "b"), edge("a", "b", "write")])
    assert lin.lines == ["a --read--> b (x2)", "a --write--> b"]
    assert linearize([edge("a", "b")]).lines == ["a --read--> b"]


def test_linearize_display_name_smallest():
    g = build_graph([ProvenanceRecord("1", "2", "read", "L", sname="zeta2.exe", dname="f"),
                     ProvenanceRecord("1", "2", "read", "L", sname="zeta1.exe", dname="f")])
    lin = linearize(g.edges, g)
    assert lin.lines == ["zeta1.exe --read--> f (x2)"]
    assert lin.display_to_key["zeta1.exe"] == "zeta.exe"


def test_linearize_empty():
    with pytest.raises(AssistantError, match="empty attack graph"):
        linearize([])


@settings(max_examples=100)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("abc"), st.sampled_from(["read", "write"]),
                          st.integers(1, 20)), min_size=1, max_size=30))
def test_linearize_conserves_counts(spec):
    edges = [edge(s, d, it, n, i) for i, (s, d, it, n) in enumerate(spec)]
    lin = linearize(edges)
    assert sum(lin.counts) == sum(n for *_, n in spec)
    assert linearize(edges).lines == lin.lines
    for line, n in zip(lin.lines, lin.counts):
        assert line.endswith(f"(x{n})") == (n >= 2)


def _p7(answers):
    rules = [ScriptRule(response=a, template="P7", binding="entity", equals=n) for n, a in answers.items()]
    return ScriptedResponder(rules)


def test_flag_unknown(caplog):
    stub = _p7({"firefox": "YES", "xq9r.bin": "NO", "odd": "maybe"})
    with caplog.at_level(logging.WARNING):
        assert flag_unknown_entities(stub, ["firefox", "xq9r.bin", "odd"]) == {"xq9r.bin", "odd"}
    assert "unparseable" in caplog.text


def test_inject_context():
    f = FunctionalityDB()
    f.set(normalize_entity_name("xq9r.bin"), "credential dumper", "Behavioral")
    flags = []
    assert inject_context(["xq9r.bin"], f) == [("xq9r.bin", "credential dumper")]
    assert inject_context([], f) == []
    assert inject_context(["x"], f, flags=flags) == [("x", UNKNOWN_FUNCTIONALITY)]
    assert flags == ["x"]


def _p8(text):
    return ScriptedResponder([ScriptRule(response=text, template="P8")])


LIN = LinearizedGraph(["host --query--> evil.example"], ["host", "evil.example"])


def test_summarize_dns_reconnaissance():
    s = summarize_attack(_p8("Summary: Repeated lookups.\nStage: Reconnaissance\nReasoning: repeated DNS queries"),
                         LIN, [], ["evil.example"], CATALOG)
    assert [(t.tactic, t.reasoning) for t in s.tactics] == [("Reconnaissance", "repeated DNS queries")]


def test_summarize_drops_off_catalog(caplog):
    text = "Summary: x\nStage: Teleportation\nReasoning: r\nStage: Execution\nReasoning: r"
    with caplog.at_level(logging.WARNING):
        s = summarize_attack(_p8(text), LIN, [], [], CATALOG)
    assert s.tactic_names() == ["Execution"] and s.dropped_tactics == ["Teleportation"]


def test_summarize_without_stages():
    s = summarize_attack(_p8("Summary: nothing to see."), LIN, [], [], CATALOG)
    assert s.summary_text == "nothing to see." and s.tactics == []
    assert tactic_correctness(s, [_p8("")] * 3, CATALOG) is None


def test_summarize_unparseable():
    with pytest.raises(AssistantError):
        summarize_attack(_p8("no structure"), LIN, [], [], CATALOG)


def _judge(answer):
    if answer == "error":
        return ScriptedResponder([ScriptRule(template="P9", error="transport")])
    return ScriptedResponder([ScriptRule(response=answer, template="P9")])


@pytest.mark.parametrize("votes, accepted", [
    (("YES", "YES", "NO"), True),
    (("YES", "NO", "NO"), False),
    (("error", "YES", "YES"), True),
    (("NO", "NO", "NO"), False),
])
def test_judge_majority(votes, accepted):
    assert judge_tactic([_judge(v) for v in votes], "Execution", "r", CATALOG) is accepted


def test_judge_requires_three():
    with pytest.raises(ValueError):
        judge_tactic([_judge("YES")] * 2, "Execution", "r", CATALOG)


def _summary(n):
    return AttackSummary("s", [TacticReasoning(name, "r") for name in CATALOG.names[:n]])


def _per_tactic_judges(pattern):
    """pattern: tactic index -> 3 booleans; judge i answers pattern[t][i]."""
    judges = []
    for i in range(3):
        rules = [ScriptRule(response="YES" if votes[i] else "NO", template="P9", binding="tactic",
                            equals=CATALOG.names[t]) for t, votes in enumerate(pattern)]
        judges.append(ScriptedResponder(rules))
    return judges


def test_alpha_tc_examples():
    assert tactic_correctness(_summary(2), _per_tactic_judges([(1, 1, 1), (1, 1, 0)]), CATALOG) == 1.0
    four = [(1, 1, 1), (1, 0, 1), (0, 1, 1), (0, 0, 1)]
    assert tactic_correctness(_summary(4), _per_tactic_judges(four), CATALOG) == 0.75
    assert tactic_correctness(_summary(1), _per_tactic_judges([(1, 0, 0)]), CATALOG) == 0.0


@settings(max_examples=60)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()), min_size=1, max_size=5))
def test_alpha_tc_arithmetic(pattern):
    got = tactic_correctness(_summary(len(pattern)), _per_tactic_judges(pattern), CATALOG)
    assert got == oracles.alpha_tc(pattern)


def test_explain_end_to_end_deterministic():
    g = build_graph([ProvenanceRecord("1", "2", "exec", "L", sname="firefox", dname="xq9r.bin", seq=1),
                     ProvenanceRecord("2", "3", "write", "L", sname="xq9r.bin", dname="loot.zip", seq=2)])
    ag = AttackGraph(["xq9r.bin"], set(g.nodes), g.ordered_edges(), {"xq9r.bin": 1.0})
    f = FunctionalityDB()
    f.set(normalize_entity_name("xq9r.bin"), "packer", "Behavioral")
    stub = ScriptedResponder([
        ScriptRule(response="YES", template="P7", binding="entity", equals="firefox"),
        ScriptRule(response="NO", template="P7"),
        ScriptRule(response="Summary: firefox ran a packer.\nStage: Execution\nReasoning: exec edge", template="P8"),
    ])
    a = explain(stub, ag, g, f, CATALOG)
    b = explain(stub, ag, g, f, CATALOG)
    assert a.to_json() == b.to_json()
    assert a.unknown == ["loot.zip", "xq9r.bin"]
    assert ("xq9r.bin", "packer") in a.summary.context_injected
    assert a.unresolved == ["loot.zip"]
    assert "Execution: exec edge" in a.summary.report()
    assert AttackSummary.from_dict(a.summary.to_dict()).to_dict() == a.summary.to_dict()
