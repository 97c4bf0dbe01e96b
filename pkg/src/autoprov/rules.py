"""Regex rule induction from CPE records, validation, and rule application."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .core import (
    DEFAULT_TIME_FORMATS,
    LogRecord,
    Origin,
    ProvenanceRecord,
    atomic_write_text,
    is_endpoint,
    iter_jsonl,
    parse_timestamp,
)
from .llm.parsers import parse_regex_response
from .llm.prompts import ChatRequest, TemplateId
from .llm.providers import ChatError, ChatProvider

log = logging.getLogger(__name__)

NO_REGEX = None
FIELDS = ("sid", "stype", "sname", "did", "dtype", "dname", "itype", "time")
MANDATORY = ("sid", "did", "itype")
TYPE_FIELDS = ("stype", "dtype")
# endpoint ids carry a role instead of a type read from the log
ENDPOINT_ROLES = {"stype": ("sid", "source address"), "dtype": ("did", "destination address")}

# field -> (P5 task, label shown to the model)
FIELD_TASKS = {
    "sid": ("TASK 1", "Sid"),
    "did": ("TASK 1", "Did"),
    "stype": ("TASK 1", "Stype"),
    "dtype": ("TASK 1", "Dtype"),
    "itype": ("TASK 2", "Itype"),
    "time": ("TASK 3", "time"),
    "sname": ("TASK 4", "Sname"),
    "dname": ("TASK 4", "Dname"),
}


class PatternError(ValueError):
    pass


_FORBIDDEN = (
    (re.compile(r"\(\?<?[=!]"), "lookaround is not supported"),
    (re.compile(r"\\[1-9]|\(\?P="), "backreferences are not supported"),
    (re.compile(r"\(\?(?!:)"), "only (?:...) inline groups are supported"),
)
_META_ONLY = re.compile(r"\\[dDwWsSbB]|\[[^\]]*\]|\{\d*,?\d*\}|[.^$*+?|()]")


def _strip_escapes(pattern: str) -> str:
    return re.sub(r"\\.", "", pattern)


def check_pattern(pattern: str) -> re.Pattern:
    """Compile ``pattern`` under the supported portable subset or raise PatternError."""
    bare = _strip_escapes(pattern)
    for rx, why in _FORBIDDEN:
        if rx.search(pattern if "backref" in why else bare):
            raise PatternError(why)
    try:
        compiled = re.compile(pattern)
    except re.error as exc:
        raise PatternError(f"does not compile: {exc}") from exc
    if compiled.groups == 0:
        raise PatternError("missing capture group")
    if compiled.groups != 1:
        raise PatternError(f"expected exactly one capture group, found {compiled.groups}")
    # the capture must be anchored to some literal log structure
    outside = _outside_group(pattern)
    if not _META_ONLY.sub("", outside).strip():
        raise PatternError("pattern has no literal anchor outside its capture group")
    return compiled


def _outside_group(pattern: str) -> str:
    """Pattern text with the single capturing group removed."""
    i, n = 0, len(pattern)
    in_class = False
    while i < n:
        c = pattern[i]
        if c == "\\":
            i += 2
            continue
        if in_class:
            in_class = c != "]"
        elif c == "[":
            in_class = True
        elif c == "(" and not pattern.startswith("(?", i):
            depth, j = 1, i + 1
            while j < n and depth:
                if pattern[j] == "\\":
                    j += 2
                    continue
                depth += {"(": 1, ")": -1}.get(pattern[j], 0)
                j += 1
            return pattern[:i] + pattern[j:]
        i += 1
    return pattern


@lru_cache(maxsize=4096)
def _compiled(pattern: str) -> re.Pattern:
    return check_pattern(pattern)


def first_capture(pattern: str, text: str) -> str | None:
    m = _compiled(pattern).search(text)
    return None if m is None else m.group(1)


@dataclass
class Validation:
    ok: bool
    cause: str = ""
    capture: str | None = None


def validate_rule(pattern: str | None, log_text: str, expected_value: str, field_class: str = "",
                  token: str | None = None) -> Validation:
    """First-match capture must equal the expected value (or the identified log
    token when a type was normalized)."""
    if pattern is None:
        return Validation(False, "no regex proposed")
    try:
        _compiled(pattern)
    except PatternError as exc:
        return Validation(False, str(exc))
    got = first_capture(pattern, log_text)
    if got is None:
        return Validation(False, "pattern does not match the log")
    want = token if (field_class in TYPE_FIELDS and token) else expected_value
    if got != want:
        return Validation(False, f"captured {got!r}, expected {want!r}", got)
    return Validation(True, capture=got)


def induce_field_rule(
    provider: ChatProvider,
    log_text: str,
    field_name: str,
    field_value: str,
    previous: str | None = None,
    feedback: str | None = None,
) -> tuple[str | None, str | None]:
    """Ask P5 for a pattern. Returns (pattern or None for "No Regex", log token)."""
    if not field_value:
        raise ValueError("field_value must be non-empty")
    task, label = FIELD_TASKS[field_name]
    bindings = {"log": log_text, "task": task, "field": label, "value": field_value}
    if previous is not None:
        bindings["previous"] = previous
    if feedback is not None:
        bindings["feedback"] = feedback
    proposal = parse_regex_response(provider.complete(ChatRequest(TemplateId.P5, bindings)))
    return proposal.pattern, proposal.token


def _rule_id(field_patterns: Mapping[str, str], type_map: Mapping[str, Mapping[str, str]]) -> str:
    blob = json.dumps({"p": dict(field_patterns), "t": type_map}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RuleSet:
    cluster_id: int
    field_patterns: dict[str, str]
    source_log_id: str
    source_record_fingerprint: str
    # normalized-type fields: captured log token -> type reported by the extractor
    type_map: dict[str, dict[str, str]] = field(default_factory=dict)
    rule_id: str = ""

    def __post_init__(self) -> None:
        missing = [f for f in MANDATORY if f not in self.field_patterns]
        if missing:
            raise ValueError(f"ruleset lacks mandatory patterns: {missing}")
        unknown = set(self.field_patterns) - set(FIELDS)
        if unknown:
            raise ValueError(f"unknown fields: {sorted(unknown)}")
        if not self.rule_id:
            self.rule_id = _rule_id(self.field_patterns, self.type_map)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "cluster_id": self.cluster_id,
            "field_patterns": self.field_patterns,
            "type_map": self.type_map,
            "source_log_id": self.source_log_id,
            "source_record_fingerprint": self.source_record_fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RuleSet":
        return cls(
            cluster_id=d["cluster_id"],
            field_patterns=dict(d["field_patterns"]),
            source_log_id=d["source_log_id"],
            source_record_fingerprint=d["source_record_fingerprint"],
            type_map={k: dict(v) for k, v in d.get("type_map", {}).items()},
            rule_id=d.get("rule_id", ""),
        )


def record_fingerprint(record: ProvenanceRecord) -> str:
    return hashlib.sha256(json.dumps(record.fields(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Rejection:
    source_log_id: str
    report: dict[str, str]


def build_ruleset(
    provider: ChatProvider,
    log_text: str,
    record: ProvenanceRecord,
    cluster_id: int,
    max_repair: int = 1,
) -> RuleSet | Rejection:
    if record.origin.kind != "CPE":
        raise ValueError("rules are induced from CPE records only")
    patterns: dict[str, str] = {}
    type_map: dict[str, dict[str, str]] = {}
    report: dict[str, str] = {}
    fields = record.fields()
    for name, value in fields.items():
        if not value or _implied_role(name, fields):
            continue
        try:
            pattern, token = induce_field_rule(provider, log_text, name, value)
            result = validate_rule(pattern, log_text, value, name, token)
            attempts = 0
            while not result.ok and pattern is not None and attempts < max_repair:
                attempts += 1
                pattern, token = induce_field_rule(
                    provider, log_text, name, value, previous=pattern, feedback=result.cause
                )
                result = validate_rule(pattern, log_text, value, name, token)
        except ChatError as exc:
            result = Validation(False, f"provider error: {exc}")
        if not result.ok:
            report[name] = result.cause
            continue
        patterns[name] = pattern
        if name in TYPE_FIELDS and token and token != value:
            type_map[name] = {token: value}
    failed = [f for f in MANDATORY if f not in patterns]
    if failed:
        return Rejection(record.source_log_id, report)
    return RuleSet(cluster_id, patterns, record.source_log_id, record_fingerprint(record), type_map)


def _implied_role(name: str, values: Mapping[str, str | None]) -> bool:
    if name not in ENDPOINT_ROLES:
        return False
    id_field, role = ENDPOINT_ROLES[name]
    ident = values.get(id_field)
    return bool(ident) and is_endpoint(ident) and values.get(name) == role


def apply_ruleset(
    ruleset: RuleSet,
    log_record: LogRecord,
    time_formats: Sequence[str] = DEFAULT_TIME_FORMATS,
) -> ProvenanceRecord | None:
    """A record iff every mandatory pattern matches; None is the no-match value."""
    values: dict[str, str] = {}
    for name, pattern in ruleset.field_patterns.items():
        got = first_capture(pattern, log_record.raw_text)
        if got is None or got == "":
            if name in MANDATORY:
                return None
            continue
        values[name] = ruleset.type_map.get(name, {}).get(got, got)
    for name, (id_field, role) in ENDPOINT_ROLES.items():
        if name not in values and is_endpoint(values[id_field]):
            values[name] = role
    time = parse_timestamp(values["time"], time_formats) if "time" in values else None
    return ProvenanceRecord(
        sid=values["sid"],
        did=values["did"],
        itype=values["itype"],
        source_log_id=log_record.log_id,
        stype=values.get("stype"),
        sname=values.get("sname"),
        dtype=values.get("dtype"),
        dname=values.get("dname"),
        time=time,
        origin=Origin("Rule", ruleset.rule_id),
        seq=log_record.arrival_seq,
    )


class RuleDB:
    def __init__(self, rules: Iterable[RuleSet] = ()):
        self.rules: list[RuleSet] = []
        self.index: dict[int, list[str]] = {}
        self._by_id: dict[str, RuleSet] = {}
        for r in rules:
            self.insert(r)

    def insert(self, ruleset: RuleSet) -> bool:
        """False when an identical pattern tuple is already stored."""
        if ruleset.rule_id in self._by_id:
            return False
        self.rules.append(ruleset)
        self._by_id[ruleset.rule_id] = ruleset
        self.index.setdefault(ruleset.cluster_id, []).append(ruleset.rule_id)
        return True

    def __len__(self) -> int:
        return len(self.rules)

    def __getitem__(self, rule_id: str) -> RuleSet:
        return self._by_id[rule_id]

    def for_cluster(self, cluster_id: int | None) -> list[RuleSet]:
        return [self._by_id[i] for i in self.index.get(cluster_id, [])] if cluster_id is not None else []

    def save(self, path: Path | str) -> None:
        atomic_write_text(path, "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.rules))

    @classmethod
    def load(cls, path: Path | str) -> "RuleDB":
        return cls(RuleSet.from_dict(d) for d in iter_jsonl(path))


def record_key(record: ProvenanceRecord) -> tuple:
    return record.key()


def apply_rule_db(
    rule_db: RuleDB,
    log_record: LogRecord,
    cluster_id: int | None = None,
    time_formats: Sequence[str] = DEFAULT_TIME_FORMATS,
) -> list[ProvenanceRecord]:
    """Cluster rules first; all other rules only when none of those match."""

    def run(rules: Iterable[RuleSet]) -> list[ProvenanceRecord]:
        out, seen = [], set()
        for r in rules:
            rec = apply_ruleset(r, log_record, time_formats)
            if rec is not None and rec.key() not in seen:
                seen.add(rec.key())
                out.append(rec)
        return out

    own = rule_db.for_cluster(cluster_id)
    found = run(own)
    if found:
        return found
    own_ids = {r.rule_id for r in own}
    return run(r for r in rule_db.rules if r.rule_id not in own_ids)


@dataclass
class ApplyStats:
    n_logs: int = 0
    n_unmatched: int = 0
    n_records: int = 0

    @property
    def unmatched_rate(self) -> float:
        return self.n_unmatched / self.n_logs if self.n_logs else 0.0


def apply_to_stream(
    rule_db: RuleDB,
    logs: Iterable[LogRecord],
    assignments: Mapping[str, int] | None = None,
    time_formats: Sequence[str] = DEFAULT_TIME_FORMATS,
) -> tuple[list[ProvenanceRecord], ApplyStats, list[str]]:
    """Apply the rule DB to every log; returns records, stats and unmatched log ids."""
    records: list[ProvenanceRecord] = []
    unmatched: list[str] = []
    stats = ApplyStats()
    for rec in logs:
        stats.n_logs += 1
        found = apply_rule_db(rule_db, rec, (assignments or {}).get(rec.log_id), time_formats)
        if not found:
            stats.n_unmatched += 1
            unmatched.append(rec.log_id)
        records.extend(found)
    stats.n_records = len(records)
    return records, stats, unmatched


def induce_rules(
    provider: ChatProvider,
    cpe_records: Iterable[ProvenanceRecord],
    log_texts: Mapping[str, str],
    cluster_of: Mapping[str, int],
    rule_db: RuleDB | None = None,
    max_repair: int = 1,
) -> tuple[RuleDB, list[Rejection]]:
    rule_db = rule_db if rule_db is not None else RuleDB()
    rejections: list[Rejection] = []
    for record in cpe_records:
        text = log_texts.get(record.source_log_id)
        if text is None:
            rejections.append(Rejection(record.source_log_id, {"*": "source log text unavailable"}))
            continue
        result = build_ruleset(provider, text, record, cluster_of.get(record.source_log_id, -1), max_repair)
        if isinstance(result, Rejection):
            rejections.append(result)
        else:
            rule_db.insert(result)
    return rule_db, rejections
