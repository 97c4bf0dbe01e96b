import json

import pytest
from hypothesis import given, strategies as st

from autoprov.core import (
    LogRecord,
    Origin,
    PersistenceError,
    ProvenanceRecord,
    SkipReport,
    Timestamp,
    atomic_write_text,
    parse_timestamp,
    read_jsonl,
    read_log_file,
    write_jsonl,
)


def test_iso_timestamp_parses():
    ts = parse_timestamp("2018-04-10T12:00:00Z", ["iso8601"])
    assert ts.raw == "2018-04-10T12:00:00Z"
    assert ts.epoch_micros == 1523361600 * 1_000_000


def test_garbage_timestamp_keeps_raw():
    ts = parse_timestamp("garbage")
    assert ts == Timestamp("garbage", None)


def test_unix_seconds_scaled_to_micros():
    assert parse_timestamp("1523361600", ["unix_s"]).epoch_micros == 1523361600000000


def test_first_matching_format_wins():
    ts = parse_timestamp("2018-04-10T12:00:00Z", ["unix_s", "iso8601"])
    assert ts.epoch_micros == 1523361600000000
    ts = parse_timestamp("1523361600000", ["unix_s", "unix_ms"])
    assert ts.epoch_micros == 1523361600000000


def test_parse_timestamp_needs_formats():
    with pytest.raises(ValueError):
        parse_timestamp("1", [])


def test_record_invariants():
    with pytest.raises(ValueError):
        ProvenanceRecord(sid="", did="b", itype="read", source_log_id="l")
    with pytest.raises(ValueError):
        ProvenanceRecord(sid="a", did="b", itype="", source_log_id="l")
    r = ProvenanceRecord(sid="a", did="b", itype="NO LABEL", source_log_id="l")
    assert r.itype == "NO LABEL"


def test_log_record_rejects_blank_text():
    with pytest.raises(ValueError):
        LogRecord("x", "   ", 0)


def test_origin_round_trip():
    assert Origin.parse("CPE") == Origin("CPE")
    assert Origin.parse(str(Origin("Rule", "abc"))) == Origin("Rule", "abc")
    with pytest.raises(ValueError):
        Origin.parse("Bogus")


def test_write_zero_records(tmp_path):
    p = tmp_path / "empty.jsonl"
    assert write_jsonl(p, []) == 0
    assert p.read_text() == ""
    assert read_jsonl(p) == []


def _records():
    return [
        ProvenanceRecord("id-1", "id-2", "read", "l1", "process", "firefox", "file", "/tmp/a",
                         Timestamp("t1"), seq=1),
        ProvenanceRecord("10.0.0.1:443", "id-3", "connect", "l2", "source address", None, None, None,
                         None, Origin("Rule", "r1"), seq=2),
        ProvenanceRecord("a", "b", "write", "l3", time=Timestamp("1523361600", 1523361600000000)),
    ]


def test_provenance_round_trip(tmp_path):
    p = tmp_path / "recs.jsonl"
    assert write_jsonl(p, _records()) == 3
    assert read_jsonl(p, ProvenanceRecord) == _records()


def test_corrupt_line_named(tmp_path):
    p = tmp_path / "bad.jsonl"
    lines = [json.dumps({"i": i}) for i in range(5)]
    lines[2] = '{"i": 2'
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(PersistenceError) as err:
        read_jsonl(p)
    assert err.value.line == 3
    assert "bad.jsonl:3" in str(err.value)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(PersistenceError) as err:
        read_jsonl(tmp_path / "nope.jsonl")
    assert "nope.jsonl" in str(err.value)


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write_text(tmp_path / "a.txt", "hello")
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]


def test_read_log_file_ids_and_windows(tmp_path):
    p = tmp_path / "host.log"
    p.write_text("a\n\nb\nc\n")
    recs = read_log_file(p, window_size=2)
    assert [r.log_id for r in recs] == ["host:1", "host:3", "host:4"]
    assert [r.arrival_seq for r in recs] == [0, 1, 2]
    assert [r.window_id for r in recs] == [0, 0, 1]


def test_skip_report_counts():
    rep = SkipReport()
    rep.add("l1", "summary", "empty response")
    assert len(rep) == 1


_opt = st.one_of(st.none(), st.text(min_size=1, max_size=12))
_req = st.text(min_size=1, max_size=12).filter(str.strip)


@given(sid=_req, did=_req, itype=_req, stype=_opt, sname=_opt, raw=_opt, seq=st.integers(0, 10**9))
def test_record_dict_round_trip(sid, did, itype, stype, sname, raw, seq):
    rec = ProvenanceRecord(sid, did, itype, "log", stype=stype, sname=sname,
                           time=Timestamp(raw) if raw else None, seq=seq)
    again = ProvenanceRecord.from_dict(json.loads(json.dumps(rec.to_dict())))
    assert again == rec


@given(st.text(min_size=1, max_size=30))
def test_raw_timestamp_preserved(raw):
    assert parse_timestamp(raw).raw == raw
