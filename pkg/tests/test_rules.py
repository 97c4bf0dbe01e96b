import random

import pytest
from hypothesis import given, settings, strategies as st

from autoprov.core import CPE_ORIGIN, LogRecord, Origin, ProvenanceRecord, Timestamp
from autoprov.llm import ScriptedResponder, ScriptRule
from autoprov.rules import (
    PatternError,
    Rejection,
    RuleDB,
    RuleSet,
    apply_rule_db,
    apply_ruleset,
    apply_to_stream,
    build_ruleset,
    check_pattern,
    induce_field_rule,
    induce_rules,
    validate_rule,
)

LOG = 'ts=2018-04-10T12:00:00Z pid=441 exe="/bin/cat" op=read inode=77 path="/etc/passwd" ObjType=FileObject'
LOG2 = 'ts=2018-04-10T12:00:05Z pid=902 exe="/usr/bin/vim" op=write inode=12 path="/tmp/n.txt" ObjType=FileObject'
OTHER = '{"event":"EVENT_READ","subject":"firefox"}'

RECORD = ProvenanceRecord(sid="441", did="77", itype="read", source_log_id="L1", sname="/bin/cat",
                          dtype="file", dname="/etc/passwd", time=Timestamp("2018-04-10T12:00:00Z"))

GOOD = {
    "Sid": r"pid=(\d+)",
    "Did": r"inode=(\d+)",
    "Itype": r"op=(\w+)",
    "time": r"ts=(\S+)",
    "Sname": r'exe="([^"]+)"',
    "Dname": r'path="([^"]+)"',
    "Dtype": "ObjType=(\\w+)\nToken: FileObject",
}


def _stub(overrides=None, repaired=None):
    answers = {**GOOD, **(overrides or {})}
    rules = []
    for label, answer in (repaired or {}).items():
        rules.append(ScriptRule(response=answer, template="P5",
                                pattern=rf"\[FIELD\]\n{label}\n[\s\S]*\[PREVIOUS REGEX\]"))
    for label, answer in answers.items():
        rules.append(ScriptRule(response=answer, template="P5", binding="field", equals=label))
    return ScriptedResponder(rules)


def test_stub_passthrough_and_no_regex():
    assert induce_field_rule(_stub(), LOG, "sid", "441") == (r"pid=(\d+)", None)
    stub = _stub({"Sid": "No Regex"})
    assert induce_field_rule(stub, LOG, "sid", "441") == (None, None)


def test_normalized_type_token():
    pattern, token = induce_field_rule(_stub(), LOG, "dtype", "file")
    assert token == "FileObject"
    assert validate_rule(pattern, LOG, "file", "dtype", token).ok


def test_validate_rule_cases():
    assert validate_rule(r"pid=(\d+)", "pid=441 x", "441").ok
    bad = validate_rule(r"pid=(\d+)", "pid=441 x", "442")
    assert not bad.ok and bad.capture == "441"
    v = validate_rule(".+", "pid=441", "441")
    assert not v.ok and v.cause == "missing capture group"
    assert not validate_rule("pid=(", "pid=441", "441").ok
    assert not validate_rule(None, "pid=441", "441").ok


@pytest.mark.parametrize("pattern, why", [
    (r"(?<=pid=)(\d+)", "lookaround"),
    (r"x(a)\1", "backreference"),
    (r"(\d+)", "literal anchor"),
    (r"pid=(\d+) ppid=(\d+)", "exactly one"),
])
def test_unsupported_patterns(pattern, why):
    with pytest.raises(PatternError, match=why):
        check_pattern(pattern)


def test_full_ruleset():
    rs = build_ruleset(_stub(), LOG, RECORD, cluster_id=3)
    assert isinstance(rs, RuleSet)
    assert set(rs.field_patterns) == {"sid", "did", "itype", "time", "sname", "dname", "dtype"}
    assert rs.type_map == {"dtype": {"FileObject": "file"}}
    assert rs.cluster_id == 3


def test_time_failure_drops_time_only():
    rs = build_ruleset(_stub({"time": r"ts=(\d+)"}), LOG, RECORD, 0)
    assert isinstance(rs, RuleSet) and "time" not in rs.field_patterns


def test_mandatory_failure_rejects():
    rej = build_ruleset(_stub({"Sid": r"pid=(\d)"}), LOG, RECORD, 0)
    assert isinstance(rej, Rejection) and "sid" in rej.report


def test_repair_round_fixes_pattern():
    stub = _stub({"Sid": r"pid=(\d)"}, repaired={"Sid": r"pid=(\d+)"})
    rs = build_ruleset(stub, LOG, RECORD, 0)
    assert isinstance(rs, RuleSet) and rs.field_patterns["sid"] == r"pid=(\d+)"
    assert isinstance(build_ruleset(stub, LOG, RECORD, 0, max_repair=0), Rejection)


def test_rule_records_refused():
    rec = ProvenanceRecord("a", "b", "read", "L", origin=Origin("Rule", "x"))
    with pytest.raises(ValueError):
        build_ruleset(_stub(), LOG, rec, 0)


def test_round_trip_and_new_values():
    rs = build_ruleset(_stub(), LOG, RECORD, 0)
    back = apply_ruleset(rs, LogRecord("L1", LOG, 0))
    assert back.fields() == RECORD.fields()
    assert back.origin == Origin("Rule", rs.rule_id)
    new = apply_ruleset(rs, LogRecord("L2", LOG2, 1))
    assert new.fields() == {"sid": "902", "stype": None, "sname": "/usr/bin/vim", "did": "12", "dtype": "file",
                            "dname": "/tmp/n.txt", "itype": "write", "time": "2018-04-10T12:00:05Z"}
    assert apply_ruleset(rs, LogRecord("L3", OTHER, 2)) is None


def test_endpoint_roles_implied():
    log = "conn src=10.0.0.5:49152 dst=93.184.216.34:443 op=connect"
    rec = ProvenanceRecord("10.0.0.5:49152", "93.184.216.34:443", "connect", "L", stype="source address",
                           dtype="destination address")
    stub = ScriptedResponder([
        ScriptRule(response=r"src=(\S+)", template="P5", binding="field", equals="Sid"),
        ScriptRule(response=r"dst=(\S+)", template="P5", binding="field", equals="Did"),
        ScriptRule(response=r"op=(\w+)", template="P5", binding="field", equals="Itype"),
    ])
    rs = build_ruleset(stub, log, rec, 0)
    assert set(rs.field_patterns) == {"sid", "did", "itype"}
    assert apply_ruleset(rs, LogRecord("L", log, 0)).fields() == rec.fields()


def test_rule_db_idempotent_and_routing(tmp_path):
    rs = build_ruleset(_stub(), LOG, RECORD, 0)
    db = RuleDB()
    assert db.insert(rs) and not db.insert(RuleSet.from_dict(rs.to_dict()))
    assert len(db) == 1
    assert len(apply_rule_db(db, LogRecord("x", LOG2, 0), cluster_id=0)) == 1
    # unknown cluster falls back to every rule
    assert len(apply_rule_db(db, LogRecord("x", LOG2, 0), cluster_id=9)) == 1
    db.save(tmp_path / "r.jsonl")
    assert [r.to_dict() for r in RuleDB.load(tmp_path / "r.jsonl").rules] == [rs.to_dict()]


def test_two_rules_same_record_dedup():
    rs = build_ruleset(_stub(), LOG, RECORD, 0)
    alt = RuleSet(0, {**rs.field_patterns, "sid": r" pid=(\d+)"}, "L1", "fp", rs.type_map)
    db = RuleDB([rs, alt])
    assert len(db) == 2
    assert len(apply_rule_db(db, LogRecord("x", LOG, 0), 0)) == 1


def test_apply_to_stream_unmatched_rate():
    db = RuleDB([build_ruleset(_stub(), LOG, RECORD, 0)])
    logs = [LogRecord("a", LOG, 0), LogRecord("b", OTHER, 1), LogRecord("c", LOG2, 2), LogRecord("d", OTHER, 3)]
    recs, stats, unmatched = apply_to_stream(db, logs, {"a": 0, "c": 0})
    assert len(recs) == 2 and unmatched == ["b", "d"]
    assert stats.unmatched_rate == 0.5


def test_induce_rules_missing_text():
    db, rej = induce_rules(_stub(), [RECORD], {}, {})
    assert len(db) == 0 and rej[0].report == {"*": "source log text unavailable"}


@settings(max_examples=30)
@given(st.permutations(range(3)), st.integers(0, 10**6))
def test_rule_order_does_not_change_records(perm, pid):
    rs = build_ruleset(_stub(), LOG, RECORD, 0)
    variants = [rs,
                RuleSet(0, {**rs.field_patterns, "sid": r" pid=(\d+)"}, "L1", "fp", rs.type_map),
                RuleSet(0, {k: v for k, v in rs.field_patterns.items() if k != "time"}, "L1", "fp2", rs.type_map)]
    log = LogRecord("x", LOG.replace("441", str(pid)), 0)
    base = sorted(repr(r.key()) for r in apply_rule_db(RuleDB(variants), log, 0))
    again = sorted(repr(r.key()) for r in apply_rule_db(RuleDB([variants[i] for i in perm]), log, 0))
    assert base == again
