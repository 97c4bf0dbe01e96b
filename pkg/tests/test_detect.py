import sys

import pytest
from hypothesis import given, settings, strategies as st

from autoprov.core import ProvenanceRecord
from autoprov.detect import (
    AttackGraph,
    DetectError,
    NodeScore,
    RarityModel,
    ScoreFileError,
    build_attack_graph,
    fit_reference_detector,
    read_scores_csv,
    run_plugin,
    score_nodes,
    write_scores_csv,
)
from autoprov.graph import build_graph


def labeled(edges, labels):
    recs = [ProvenanceRecord(s, d, it, f"L{i}", sname=s, dname=d, seq=i) for i, (s, it, d) in enumerate(edges)]
    g = build_graph(recs)
    for k, lab in labels.items():
        g.nodes[k].functional_label = lab
    return g


BENIGN = labeled(
    [("firefox", "read", "page"), ("firefox", "write", "cache"), ("bash", "exec", "ls")],
    {"firefox": "web browser", "page": "web page", "cache": "browser cache", "bash": "shell", "ls": "utility"},
)


def test_fit_counts_signatures():
    g = labeled([("a", "read", "b"), ("a", "write", "c"), ("b", "read", "c")],
                {"a": "x", "b": "y", "c": "z"})
    model = fit_reference_detector(g)
    # a: OUT read y, OUT write z; b: IN read x, OUT read z; c: IN write x, IN read y
    assert len(model.signature_counts) == 6 and model.total_nodes == 3
    g = labeled([("a", "read", "b"), ("b", "read", "c"), ("c", "read", "a")], {"a": "x", "b": "x", "c": "x"})
    assert len(fit_reference_detector(g).signature_counts) == 2
    assert fit_reference_detector(BENIGN).to_dict() == fit_reference_detector(BENIGN).to_dict()
    with pytest.raises(DetectError):
        fit_reference_detector(build_graph([]))


def test_score_formula_cases():
    model = fit_reference_detector(BENIGN)
    test = labeled(
        [("firefox", "read", "page"), ("evil", "exec", "payload"), ("bash", "exec", "ls"), ("bash", "write", "note")],
        {"firefox": "web browser", "page": "web page", "evil": "dropper", "payload": "implant",
         "bash": "shell", "ls": "utility", "note": "utility"},
    )
    scores = {s.node_key: s.score for s in score_nodes(model, test)}
    assert scores["page"] == 0.0
    assert scores["evil"] == 1.0
    assert scores["bash"] == 0.25


def test_empty_profile_flagged():
    g = labeled([("a", "read", "b")], {})
    (s,) = [x for x in score_nodes(fit_reference_detector(BENIGN), g) if x.node_key == "a"]
    assert s.score == 0.0 and s.flagged


def test_planted_anomaly_ranks_first():
    model = fit_reference_detector(BENIGN)
    test = labeled([("firefox", "read", "page"), ("odd", "connect", "page"), ("bash", "exec", "ls")],
                   {"firefox": "web browser", "page": "web page", "odd": "tunnel", "bash": "shell", "ls": "utility"})
    assert score_nodes(model, test)[0].node_key == "odd"


@settings(max_examples=30)
@given(st.permutations(["firefox", "page", "cache", "bash", "ls"]))
def test_scoring_permutation_invariant(order):
    labels = {"firefox": "web browser", "page": "web page", "cache": "x", "bash": "shell", "ls": "y"}
    g = labeled([("firefox", "read", "page"), ("firefox", "write", "cache"), ("bash", "exec", "ls")], labels)
    model = fit_reference_detector(BENIGN)
    base = score_nodes(model, g)
    g.nodes = {k: g.nodes[k] for k in order}
    assert score_nodes(model, g) == base


def star():
    return labeled([("hub", "read", f"leaf{c}") for c in "abcd"], {})


def test_attack_graph_star_and_saturation():
    g = star()
    scores = [NodeScore("hub", 0.9)] + [NodeScore(f"leaf{c}", 0.1) for c in "abcd"]
    ag = build_attack_graph(g, scores, 1)
    assert ag.node_keys == set(g.nodes) and len(ag.edges) == 4
    ag = build_attack_graph(g, scores, 50)
    assert sorted(ag.seed_keys) == sorted(g.nodes)


def test_attack_graph_bridges_shared_neighbor():
    g = labeled([("A", "write", "b"), ("b", "read", "C"), ("C", "write", "d")], {})
    ag = build_attack_graph(g, [NodeScore("A", 1.0), NodeScore("C", 0.9), NodeScore("b", 0), NodeScore("d", 0)], 2)
    assert ag.node_keys == {"A", "b", "C", "d"}
    assert len(ag.edges) == 3


@given(st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=5, max_size=5), st.randoms())
def test_attack_graph_tie_invariant(values, rnd):
    g = star()
    keys = sorted(g.nodes)
    scores = [NodeScore(k, v) for k, v in zip(keys, values)]
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    a, b = build_attack_graph(g, scores, 2), build_attack_graph(g, shuffled, 2)
    assert a.seed_keys == b.seed_keys and a.node_keys == b.node_keys


def test_attack_graph_save_load(tmp_path):
    ag = build_attack_graph(star(), [NodeScore("hub", 1.0)], 1)
    ag.save(tmp_path / "ag.jsonl")
    back = AttackGraph.load(tmp_path / "ag.jsonl")
    assert back.seed_keys == ag.seed_keys and back.node_keys == ag.node_keys
    assert [e.to_dict() for e in back.edges] == [e.to_dict() for e in ag.edges]


def test_score_csv_contract(tmp_path):
    write_scores_csv(tmp_path / "s.csv", [NodeScore("b", 0.25), NodeScore("a", 0.5)])
    assert (tmp_path / "s.csv").read_text() == "node_key,score\na,0.5\nb,0.25\n"
    (tmp_path / "t.csv").write_text("node_key,score\na,0.5\n")
    got = read_scores_csv(tmp_path / "t.csv", ["a", "b"])
    assert [(s.node_key, s.score) for s in got] == [("a", 0.5), ("b", 0.0)]
    (tmp_path / "u.csv").write_text("node_key,score\na,0.5\nb,high\n")
    with pytest.raises(ScoreFileError) as err:
        read_scores_csv(tmp_path / "u.csv")
    assert err.value.row == 3


def test_plugin_matches_in_process(tmp_path):
    model = fit_reference_detector(BENIGN)
    model.save(tmp_path / "model.json")
    test = labeled([("firefox", "read", "page"), ("odd", "connect", "page")],
                   {"firefox": "web browser", "page": "web page", "odd": "tunnel"})
    test.save(tmp_path / "g")
    cmd = [sys.executable, "-m", "autoprov.detect_plugin", "--model", str(tmp_path / "model.json"),
           "--nodes", str(tmp_path / "g" / "nodes.jsonl")]
    got = run_plugin(cmd, tmp_path / "g" / "edges.csv", tmp_path / "scores.csv", test.nodes)
    want = score_nodes(model, test)
    assert [(s.node_key, s.score) for s in got] == [(s.node_key, s.score) for s in want]
    assert RarityModel.load(tmp_path / "model.json").to_dict() == model.to_dict()
