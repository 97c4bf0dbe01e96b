"""Candidate provenance extraction: four chat subtasks per log.

summary (P1) -> entity types (P2) -> pairs and names (P3) -> edges (P4, voted)
"""

from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .core import (
    CPE_ORIGIN,
    DEFAULT_TIME_FORMATS,
    NO_LABEL,
    LogRecord,
    ProvenanceRecord,
    SkipReport,
    is_endpoint,
    parse_timestamp,
    read_jsonl,
    write_jsonl,
)
from .llm.parsers import NONE, ParseError, parse_assignments, parse_edge_lines, parse_entity_extraction
from .llm.prompts import ChatRequest, InContextExample, TemplateId
from .llm.providers import ChatError, ChatProvider, complete_many

log = logging.getLogger(__name__)

SOURCE_ROLE = "source address"
DEST_ROLE = "destination address"


class ExtractionError(Exception):
    def __init__(self, stage: str, cause: str):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class InContextPool:
    """Bounded per-template store of prior exchanges, sampled with a seeded RNG."""

    def __init__(self, capacity: int = 8, sample_size: int = 2, seed: int = 0):
        if capacity < 0 or sample_size < 0:
            raise ValueError("capacity and sample_size must be >= 0")
        self.capacity = capacity
        self.sample_size = sample_size
        self._rng = random.Random(seed)
        self._items: dict[TemplateId, list[InContextExample]] = {}
        self._seen: dict[TemplateId, int] = {}

    def add(self, template_id: TemplateId, example: InContextExample) -> None:
        if self.capacity == 0:
            return
        items = self._items.setdefault(template_id, [])
        seen = self._seen.get(template_id, 0) + 1
        self._seen[template_id] = seen
        if len(items) < self.capacity:
            items.append(example)
        else:
            j = self._rng.randrange(seen)
            if j < self.capacity:
                items[j] = example

    def sample(self, template_id: TemplateId) -> tuple[InContextExample, ...]:
        items = self._items.get(template_id, [])
        k = min(self.sample_size, len(items))
        return tuple(self._rng.sample(items, k)) if k else ()

    def __len__(self) -> int:
        return sum(len(v) for v in self._items.values())


@dataclass
class _Ctx:
    provider: ChatProvider
    platform: str
    pool: InContextPool | None = None
    exchanges: list[tuple[TemplateId, InContextExample]] = field(default_factory=list)

    def request(self, tid: TemplateId, vote_index: int | None = None, **bindings: str) -> ChatRequest:
        examples = self.pool.sample(tid) if self.pool is not None else ()
        return ChatRequest(tid, {"platform": self.platform, **bindings}, examples, vote_index=vote_index)

    def ask(self, req: ChatRequest) -> str:
        try:
            text = self.provider.complete(req)
        except ChatError as exc:
            raise ExtractionError(req.template_id.value, f"provider error: {exc}") from exc
        self.record(req, text)
        return text

    def record(self, req: ChatRequest, text: str) -> None:
        self.exchanges.append((req.template_id, InContextExample(req.input_text(), text)))


def _ctx(provider: ChatProvider | _Ctx, platform: str, pool: InContextPool | None) -> _Ctx:
    return provider if isinstance(provider, _Ctx) else _Ctx(provider, platform, pool)


def summarize_log(provider: ChatProvider, log_record: LogRecord | str, platform: str = "system",
                  pool: InContextPool | None = None) -> str:
    ctx = _ctx(provider, platform, pool)
    text = log_record.raw_text if isinstance(log_record, LogRecord) else log_record
    if not text.strip():
        raise ExtractionError("P1", "empty log")
    summary = ctx.ask(ctx.request(TemplateId.P1, log=text)).strip()
    if not summary:
        raise ExtractionError("P1", "empty summary")
    return summary


def extract_entity_types(provider: ChatProvider, log_record: LogRecord | str, summary: str,
                         platform: str = "system", pool: InContextPool | None = None) -> dict[str, str]:
    ctx = _ctx(provider, platform, pool)
    text = log_record.raw_text if isinstance(log_record, LogRecord) else log_record
    parsed = parse_assignments(ctx.ask(ctx.request(TemplateId.P2, log=text, summary=summary)))
    if not parsed.values:
        raise ExtractionError("P2", "no parsable entity-type lines")
    for key, first, other in parsed.conflicts:
        log.warning("entity type conflict for %s: keeping %r over %r", key, first, other)
    return parsed.values


def extract_entities(provider: ChatProvider, log_record: LogRecord | str, summary: str,
                     platform: str = "system", pool: InContextPool | None = None
                     ) -> tuple[list[tuple[str, str]], dict[str, str]]:
    ctx = _ctx(provider, platform, pool)
    text = log_record.raw_text if isinstance(log_record, LogRecord) else log_record
    try:
        parsed = parse_entity_extraction(ctx.ask(ctx.request(TemplateId.P3, log=text, summary=summary)))
    except ParseError as exc:
        raise ExtractionError("P3", str(exc)) from exc
    for key, first, other in parsed.conflicts:
        log.warning("entity name conflict for %s: keeping %r over %r", key, first, other)
    return parsed.pairs, parsed.names


@dataclass(frozen=True)
class Edge:
    sid: str
    did: str
    itype: str
    time_raw: str | None = None


def format_pairs(pairs: Iterable[tuple[str, str]]) -> str:
    return "\n".join(f"({a}, {b})" for a, b in pairs)


def extract_edges_voted(
    provider: ChatProvider,
    log_record: LogRecord | str,
    summary: str,
    pairs: Sequence[tuple[str, str]],
    n_votes: int = 7,
    rng_seed: int = 0,
    platform: str = "system",
    pool: InContextPool | None = None,
    max_workers: int = 1,
    notes: list[str] | None = None,
) -> list[Edge]:
    """Majority vote on the direction of every pair over ``n_votes`` P4 runs.

    Each run that mentions a pair casts one vote (its first line for that
    pair). Actions are the union over runs agreeing with the winner; the
    timestamp comes from the first such run. Ties resolve left-to-right.
    ``rng_seed`` is accepted for interface symmetry; the runs themselves are
    independent draws at the template's sampling temperature.
    """
    if not pairs:
        raise ExtractionError("P4", "no pairs to orient")
    if n_votes < 1 or n_votes % 2 == 0:
        raise ValueError("n_votes must be odd and >= 1")
    ctx = _ctx(provider, platform, pool)
    text = log_record.raw_text if isinstance(log_record, LogRecord) else log_record
    pair_text = format_pairs(pairs)
    reqs = [ctx.request(TemplateId.P4, vote_index=i, log=text, summary=summary, pairs=pair_text)
            for i in range(n_votes)]
    outcomes = complete_many(ctx.provider, reqs, max_workers=max_workers)

    canon = {frozenset(p) if p[0] != p[1] else frozenset([p[0]]): p for p in pairs}
    # per pair: list of (direction, actions, timestamp) in call order
    votes: dict[tuple[str, str], list[tuple[str, tuple[str, ...], str | None]]] = {}
    valid_runs = 0
    for req, out in zip(reqs, outcomes):
        if not out.ok or not (out.text or "").strip():
            continue
        try:
            lines, _ = parse_edge_lines(out.text)
        except ParseError:
            continue
        valid_runs += 1
        ctx.record(req, out.text)
        seen: set[tuple[str, str]] = set()
        for e in lines:
            key = frozenset((e.left_id, e.right_id)) if e.left_id != e.right_id else frozenset([e.left_id])
            pair = canon.get(key)
            if pair is None or pair in seen:
                continue
            seen.add(pair)
            # express the direction relative to the pair's canonical orientation
            flipped = (e.left_id, e.right_id) != pair
            direction = e.direction if not flipped else ("RL" if e.direction == "LR" else "LR")
            votes.setdefault(pair, []).append((direction, e.actions, e.timestamp_raw))
    if valid_runs == 0:
        raise ExtractionError("P4", f"all {n_votes} edge runs failed")

    edges: list[Edge] = []
    for pair in pairs:
        pv = votes.get(pair)
        if not pv:
            if notes is not None:
                notes.append(f"pair {pair} absent from every edge run")
            continue
        counts = Counter(d for d, _, _ in pv)
        if counts["LR"] == counts["RL"]:
            log.warning("direction tie for %s (%d valid votes); using left-to-right", pair, len(pv))
            winner = "LR"
        else:
            winner = "LR" if counts["LR"] > counts["RL"] else "RL"
        actions: list[str] = []
        ts = None
        first = True
        for d, acts, t in pv:
            if d != winner:
                continue
            if first:
                ts, first = t, False
            actions += [a for a in acts if a not in actions]
        src, dst = pair if winner == "LR" else (pair[1], pair[0])
        edges += [Edge(src, dst, a, ts) for a in actions or [NO_LABEL]]
    return edges


@dataclass
class CpeOutput:
    log_id: str
    summary: str
    entity_types: dict[str, str]
    entity_names: dict[str, str]
    pairs: list[tuple[str, str]]
    edges: list[Edge]

    def to_dict(self) -> dict[str, Any]:
        return {
            "log_id": self.log_id,
            "summary": self.summary,
            "entity_types": self.entity_types,
            "entity_names": self.entity_names,
            "pairs": [list(p) for p in self.pairs],
            "edges": [vars(e) for e in self.edges],
        }


def _present(value: str | None) -> str | None:
    if value is None or value.strip().upper() == NONE:
        return None
    return value


def assemble_records(
    output: CpeOutput,
    seq: int = 0,
    time_formats: Sequence[str] = DEFAULT_TIME_FORMATS,
) -> list[ProvenanceRecord]:
    """One provenance record per voted edge."""
    records = []
    for e in output.edges:
        for ident in (e.sid, e.did):
            if ident not in output.entity_types and ident not in output.entity_names and not is_endpoint(ident):
                log.warning("log %s: edge references unknown id %s", output.log_id, ident)

        def type_of(ident: str, role: str) -> str | None:
            t = _present(output.entity_types.get(ident))
            if t is None and is_endpoint(ident):
                return role
            return t

        records.append(
            ProvenanceRecord(
                sid=e.sid,
                did=e.did,
                itype=e.itype,
                source_log_id=output.log_id,
                stype=type_of(e.sid, SOURCE_ROLE),
                sname=None if is_endpoint(e.sid) else _present(output.entity_names.get(e.sid)),
                dtype=type_of(e.did, DEST_ROLE),
                dname=None if is_endpoint(e.did) else _present(output.entity_names.get(e.did)),
                time=parse_timestamp(e.time_raw, time_formats) if e.time_raw else None,
                origin=CPE_ORIGIN,
                seq=seq,
            )
        )
    return records


@dataclass
class CpeConfig:
    platform: str = "system"
    n_votes: int = 7
    rng_seed: int = 0
    max_workers: int = 1
    time_formats: tuple[str, ...] = DEFAULT_TIME_FORMATS


class CandidateProvenanceDB(dict):
    """log_id -> list of CPE provenance records."""

    def records(self) -> list[ProvenanceRecord]:
        return [r for key in sorted(self) for r in self[key]]

    def save(self, path: Path | str) -> int:
        return write_jsonl(path, self.records())

    @classmethod
    def load(cls, path: Path | str) -> "CandidateProvenanceDB":
        db = cls()
        for rec in read_jsonl(path, ProvenanceRecord):
            db.setdefault(rec.source_log_id, []).append(rec)
        return db


def extract_log(provider: ChatProvider, log_record: LogRecord, config: CpeConfig,
                pool: InContextPool | None = None) -> tuple[CpeOutput, list[tuple[TemplateId, InContextExample]]]:
    ctx = _Ctx(provider, config.platform, pool)
    summary = summarize_log(ctx, log_record)
    types = extract_entity_types(ctx, log_record, summary)
    pairs, names = extract_entities(ctx, log_record, summary)
    notes: list[str] = []
    edges = (
        extract_edges_voted(ctx, log_record, summary, pairs, config.n_votes, config.rng_seed,
                            max_workers=config.max_workers, notes=notes)
        if pairs else []
    )
    for note in notes:
        log.info("log %s: %s", log_record.log_id, note)
    return CpeOutput(log_record.log_id, summary, types, names, pairs, edges), ctx.exchanges


def run_cpe(
    provider: ChatProvider,
    candidates: Iterable[LogRecord] | Any,
    pool: InContextPool | None = None,
    config: CpeConfig | None = None,
    seqs: Mapping[str, int] | None = None,
) -> tuple[CandidateProvenanceDB, SkipReport, list[CpeOutput]]:
    """Extract every candidate log; failures are isolated into the skip report.

    ``candidates`` is a list of LogRecords or a CandidateLogSet.
    """
    config = config or CpeConfig()
    if hasattr(candidates, "entries"):
        logs = [LogRecord(lid, text, (seqs or {}).get(lid, i))
                for i, (lid, text, _) in enumerate(candidates.entries)]
    else:
        logs = list(candidates)
    db = CandidateProvenanceDB()
    skips = SkipReport()
    outputs: list[CpeOutput] = []
    for rec in logs:
        try:
            output, exchanges = extract_log(provider, rec, config, pool)
        except ExtractionError as exc:
            skips.add(rec.log_id, exc.stage, exc.cause)
            continue
        records = assemble_records(output, rec.arrival_seq, config.time_formats)
        if pool is not None:
            for tid, ex in exchanges:
                pool.add(tid, ex)
        db[rec.log_id] = records
        outputs.append(output)
    return db, skips, outputs
