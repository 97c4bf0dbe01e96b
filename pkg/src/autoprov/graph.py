"""Provenance graph assembly with name-based entity identity."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .core import ProvenanceRecord, Timestamp, atomic_write_text, dumps_jsonl, is_endpoint, iter_jsonl
from .names import normalize_entity_name

SRC, DST = "SRC", "DST"
MAX_SOURCE_IDS = 8


def resolve_entity(record: ProvenanceRecord, side: str) -> str:
    ident, name = (record.sid, record.sname) if side == SRC else (record.did, record.dname)
    if is_endpoint(ident):
        return ident
    if name:
        return normalize_entity_name(name)
    return f"anon:{record.source_log_id}:{ident}"


@dataclass
class EntityNode:
    node_key: str
    names: set[str] = field(default_factory=set)
    coarse_types: set[str] = field(default_factory=set)
    functional_label: str | None = None
    label_source: str | None = None  # LLM, Behavioral or Manual
    first_seen_seq: int = 0

    @property
    def anonymous(self) -> bool:
        return self.node_key.startswith("anon:")

    def to_dict(self) -> dict[str, Any]:
        return {
            "node_key": self.node_key,
            "names": sorted(self.names),
            "coarse_types": sorted(self.coarse_types),
            "functional_label": self.functional_label,
            "label_source": self.label_source,
            "first_seen_seq": self.first_seen_seq,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EntityNode":
        return cls(
            node_key=d["node_key"],
            names=set(d.get("names", [])),
            coarse_types=set(d.get("coarse_types", [])),
            functional_label=d.get("functional_label"),
            label_source=d.get("label_source"),
            first_seen_seq=d.get("first_seen_seq", 0),
        )


@dataclass
class ProvEdge:
    src_key: str
    dst_key: str
    itype: str
    time: Timestamp | None
    count: int = 1
    first_seq: int = 0
    # (seq, log_id) pairs, lowest seq first
    sources: list[tuple[int, str]] = field(default_factory=list)

    @property
    def source_log_ids(self) -> list[str]:
        return [lid for _, lid in self.sources]

    @property
    def epoch(self) -> int | None:
        return self.time.epoch_micros if self.time else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "src_key": self.src_key,
            "dst_key": self.dst_key,
            "itype": self.itype,
            "time": self.time.to_dict() if self.time else None,
            "count": self.count,
            "first_seq": self.first_seq,
            "sources": [list(s) for s in self.sources],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ProvEdge":
        return cls(
            src_key=d["src_key"],
            dst_key=d["dst_key"],
            itype=d["itype"],
            time=Timestamp.from_dict(d["time"]) if d.get("time") else None,
            count=d.get("count", 1),
            first_seq=d.get("first_seq", 0),
            sources=[(int(s), str(lid)) for s, lid in d.get("sources", [])],
        )


def _bucket(time: Timestamp | None, bucket_s: float) -> Any:
    if time is None:
        return None
    if time.epoch_micros is None:
        return ("raw", time.raw)
    return int(time.epoch_micros // int(bucket_s * 1_000_000))


def _earlier(a: Timestamp | None, b: Timestamp | None) -> Timestamp | None:
    if a is None or b is None:
        return a or b
    ka = (a.epoch_micros is None, a.epoch_micros or 0, a.raw)
    kb = (b.epoch_micros is None, b.epoch_micros or 0, b.raw)
    return a if ka <= kb else b


class ProvenanceGraph:
    def __init__(self, bucket_s: float = 1.0):
        if bucket_s <= 0:
            raise ValueError("bucket_s must be > 0")
        self.bucket_s = bucket_s
        self.nodes: dict[str, EntityNode] = {}
        self.edges: list[ProvEdge] = []
        self.adjacency: dict[str, tuple[list[int], list[int]]] = {}
        self._edge_index: dict[tuple, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _upsert(self, key: str, name: str | None, ctype: str | None, seq: int) -> None:
        node = self.nodes.get(key)
        if node is None:
            node = self.nodes[key] = EntityNode(key, first_seen_seq=seq)
            self.adjacency[key] = ([], [])
        node.first_seen_seq = min(node.first_seen_seq, seq)
        if name:
            node.names.add(name)
        if ctype:
            node.coarse_types.add(ctype)

    def add_record(self, record: ProvenanceRecord) -> "ProvenanceGraph":
        src = resolve_entity(record, SRC)
        dst = resolve_entity(record, DST)
        self._upsert(src, record.sname, record.stype, record.seq)
        self._upsert(dst, record.dname, record.dtype, record.seq)
        key = (src, dst, record.itype, _bucket(record.time, self.bucket_s))
        idx = self._edge_index.get(key)
        source = (record.seq, record.source_log_id)
        if idx is None:
            self._edge_index[key] = len(self.edges)
            self.adjacency[src][1].append(len(self.edges))
            self.adjacency[dst][0].append(len(self.edges))
            self.edges.append(ProvEdge(src, dst, record.itype, record.time, 1, record.seq, [source]))
        else:
            e = self.edges[idx]
            e.count += 1
            e.first_seq = min(e.first_seq, record.seq)
            e.time = _earlier(e.time, record.time)
            if source not in e.sources:
                e.sources = sorted(e.sources + [source])[:MAX_SOURCE_IDS]
        return self

    def in_edges(self, key: str) -> list[ProvEdge]:
        return [self.edges[i] for i in self.adjacency.get(key, ([], []))[0]]

    def out_edges(self, key: str) -> list[ProvEdge]:
        return [self.edges[i] for i in self.adjacency.get(key, ([], []))[1]]

    def neighbors(self, key: str) -> set[str]:
        return {e.src_key for e in self.in_edges(key)} | {e.dst_key for e in self.out_edges(key)}

    def degree(self, key: str) -> int:
        ins, outs = self.adjacency.get(key, ([], []))
        return len(ins) + len(outs)

    def ordered_edges(self, edges: Iterable[ProvEdge] | None = None) -> list[ProvEdge]:
        """Time order when every edge has a parsed time, else arrival order."""
        edges = list(self.edges if edges is None else edges)
        if edges and all(e.epoch is not None for e in edges):
            return sorted(edges, key=lambda e: (e.epoch, e.first_seq, e.src_key, e.dst_key, e.itype))
        return sorted(edges, key=lambda e: (e.first_seq, e.epoch or 0, e.src_key, e.dst_key, e.itype))

    def labels(self) -> dict[str, str | None]:
        return {k: n.functional_label for k, n in self.nodes.items()}

    def copy(self) -> "ProvenanceGraph":
        g = ProvenanceGraph(self.bucket_s)
        g.nodes = {k: EntityNode.from_dict(n.to_dict()) for k, n in self.nodes.items()}
        g.edges = [ProvEdge.from_dict(e.to_dict()) for e in self.edges]
        g._reindex()
        return g

    def _reindex(self) -> None:
        self.adjacency = {k: ([], []) for k in self.nodes}
        self._edge_index = {}
        for i, e in enumerate(self.edges):
            self._edge_index[(e.src_key, e.dst_key, e.itype, _bucket(e.time, self.bucket_s))] = i
            self.adjacency[e.src_key][1].append(i)
            self.adjacency[e.dst_key][0].append(i)

    def rename_node(self, old: str, new: str) -> None:
        """Re-key a node (used by poisoning experiments); edges follow it."""
        if old not in self.nodes:
            raise KeyError(old)
        if new in self.nodes:
            raise ValueError(f"node {new!r} already exists")
        node = self.nodes.pop(old)
        node.node_key = new
        self.nodes[new] = node
        for e in self.edges:
            if e.src_key == old:
                e.src_key = new
            if e.dst_key == old:
                e.dst_key = new
        self._reindex()

    # --- persistence ---------------------------------------------------------

    def save(self, directory: Path | str) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        atomic_write_text(d / "nodes.jsonl", dumps_jsonl(self.nodes[k] for k in sorted(self.nodes)))
        atomic_write_text(d / "edges.jsonl", dumps_jsonl(self.edges))
        atomic_write_text(d / "edges.csv", edges_csv(self))
        atomic_write_text(d / "graph.json", f'{{"bucket_s": {self.bucket_s!r}}}\n')

    @classmethod
    def load(cls, directory: Path | str) -> "ProvenanceGraph":
        d = Path(directory)
        meta = next(iter_jsonl(d / "graph.json"), {}) if (d / "graph.json").exists() else {}
        g = cls(meta.get("bucket_s", 1.0))
        for row in iter_jsonl(d / "nodes.jsonl"):
            node = EntityNode.from_dict(row)
            g.nodes[node.node_key] = node
        g.edges = [ProvEdge.from_dict(row) for row in iter_jsonl(d / "edges.jsonl")]
        g._reindex()
        return g


def build_graph(records: Iterable[ProvenanceRecord], bucket_s: float = 1.0) -> ProvenanceGraph:
    g = ProvenanceGraph(bucket_s)
    for r in records:
        g.add_record(r)
    return g


EDGE_CSV_COLUMNS = ("src", "dst", "itype", "time", "count")


def edges_csv(graph: ProvenanceGraph) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EDGE_CSV_COLUMNS)
    for e in graph.ordered_edges():
        w.writerow([e.src_key, e.dst_key, e.itype, e.time.raw if e.time else "", e.count])
    return buf.getvalue()


def read_edges_csv(path: Path | str) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
