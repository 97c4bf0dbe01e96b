"""Functional labels for graph nodes: LLM labels first, behavioral fallback."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .core import NO_LABEL, atomic_write_text, iter_jsonl
from .embed import EmbeddingProvider
from .graph import ProvenanceGraph
from .llm.parsers import ParseError, parse_label_line
from .llm.prompts import ChatRequest, TemplateId
from .llm.providers import ChatError, ChatProvider
from .names import normalize_entity_name, normalize_name_flagged

__all__ = [
    "BehavioralDB",
    "BehavioralSignature",
    "ClassificationError",
    "EnrichResult",
    "FunctionalityDB",
    "LabelConflict",
    "SignatureIndex",
    "behavioral_profile",
    "classify_unknown",
    "enrich_graph",
    "infer_label_llm",
    "normalize_entity_name",
    "normalize_name_flagged",
    "profile_vector",
]

log = logging.getLogger(__name__)

LLM, BEHAVIORAL, MANUAL = "LLM", "Behavioral", "Manual"
PROVENANCES = (LLM, BEHAVIORAL, MANUAL)


class LabelConflict(ValueError):
    pass


class ClassificationError(Exception):
    pass


class FunctionalityDB:
    """normalized name -> (label, provenance). NO_LABEL is never stored."""

    def __init__(self) -> None:
        self._entries: dict[str, tuple[str, str]] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, name: str) -> str | None:
        entry = self._entries.get(name)
        return entry[0] if entry else None

    def provenance(self, name: str) -> str | None:
        entry = self._entries.get(name)
        return entry[1] if entry else None

    def set(self, name: str, label: str, provenance: str = LLM) -> None:
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        if not label or not label.strip() or label == NO_LABEL:
            raise ValueError("labels must be non-empty and not NO LABEL")
        old = self._entries.get(name)
        if old is not None and old[0] != label and provenance != MANUAL:
            raise LabelConflict(f"{name!r} already labeled {old[0]!r}; only a manual entry may relabel")
        self._entries[name] = (label, provenance)

    def items(self) -> Iterable[tuple[str, str, str]]:
        for name in sorted(self._entries):
            label, prov = self._entries[name]
            yield name, label, prov

    def copy(self) -> "FunctionalityDB":
        db = FunctionalityDB()
        db._entries = dict(self._entries)
        return db

    def save(self, path: Path | str) -> None:
        atomic_write_text(path, "".join(
            json.dumps({"name": n, "label": lab, "provenance": p}, sort_keys=True, ensure_ascii=False) + "\n"
            for n, lab, p in self.items()
        ))

    @classmethod
    def load(cls, path: Path | str) -> "FunctionalityDB":
        db = cls()
        for row in iter_jsonl(path):
            db._entries[row["name"]] = (row["label"], row.get("provenance", LLM))
        return db

    def load_manual(self, path: Path | str) -> int:
        """Pre-load ``name<TAB>label`` lines as Manual entries."""
        n = 0
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            name, _, label = line.partition("\t")
            if label.strip():
                self.set(normalize_entity_name(name.strip()), label.strip(), MANUAL)
                n += 1
        return n


@dataclass(frozen=True, order=True)
class BehavioralSignature:
    direction: str  # IN or OUT
    itype: str
    neighbor_label: str

    def __post_init__(self) -> None:
        if self.direction not in ("IN", "OUT"):
            raise ValueError("direction must be IN or OUT")
        if not self.itype or not self.neighbor_label:
            raise ValueError("signature components must be non-empty")

    def as_list(self) -> list[str]:
        return [self.direction, self.itype, self.neighbor_label]


class SignatureIndex:
    """Append-only registry: signature -> dimension."""

    def __init__(self, signatures: Iterable[BehavioralSignature] = ()):
        self._order: list[BehavioralSignature] = []
        self._pos: dict[BehavioralSignature, int] = {}
        for s in signatures:
            self.register(s)

    @property
    def d(self) -> int:
        return len(self._order)

    def register(self, sig: BehavioralSignature) -> int:
        i = self._pos.get(sig)
        if i is None:
            i = self._pos[sig] = len(self._order)
            self._order.append(sig)
        return i

    def get(self, sig: BehavioralSignature) -> int | None:
        return self._pos.get(sig)

    def __iter__(self):
        return iter(self._order)

    def copy(self) -> "SignatureIndex":
        return SignatureIndex(self._order)

    def save(self, path: Path | str) -> None:
        atomic_write_text(path, "".join(json.dumps(s.as_list()) + "\n" for s in self._order))

    @classmethod
    def load(cls, path: Path | str) -> "SignatureIndex":
        rows = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
        return cls(BehavioralSignature(*r) for r in rows)


class BehavioralDB:
    """node_key -> (set bits, label). Vectors are materialized at the current d,
    so entries written before the index grew are implicitly zero-extended."""

    def __init__(self) -> None:
        self.entries: dict[str, tuple[frozenset[int], str]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, node_key: str, bits: Iterable[int], label: str) -> None:
        bits = frozenset(int(b) for b in bits)
        old = self.entries.get(node_key)
        if old is not None:
            # the same entity seen again: its profile is the union of observations
            bits = bits | old[0]
            label = old[1]
        self.entries[node_key] = (bits, label)

    def vector(self, node_key: str, d: int) -> np.ndarray:
        v = np.zeros(d, dtype=np.int8)
        v[[b for b in self.entries[node_key][0] if b < d]] = 1
        return v

    def copy(self) -> "BehavioralDB":
        db = BehavioralDB()
        db.entries = dict(self.entries)
        return db

    def save(self, path: Path | str) -> None:
        atomic_write_text(path, "".join(
            json.dumps({"node_key": k, "bits": sorted(b), "label": lab}, ensure_ascii=False) + "\n"
            for k, (b, lab) in sorted(self.entries.items())
        ))

    @classmethod
    def load(cls, path: Path | str) -> "BehavioralDB":
        db = cls()
        for row in iter_jsonl(path):
            db.entries[row["node_key"]] = (frozenset(row["bits"]), row["label"])
        return db


# --- labels ------------------------------------------------------------------


def infer_label_llm(
    provider: ChatProvider,
    name: str,
    f_db: FunctionalityDB | None = None,
    platform: str = "system",
) -> str:
    """Cache-first P6 lookup; failures degrade to NO_LABEL."""
    if f_db is not None and name in f_db:
        return f_db.get(name)
    try:
        text = provider.complete(ChatRequest(TemplateId.P6, {"platform": platform, "entity": name}))
        label = parse_label_line(text).label
    except (ChatError, ParseError) as exc:
        log.warning("label inference failed for %r: %s", name, exc)
        return NO_LABEL
    if label != NO_LABEL and f_db is not None:
        f_db.set(name, label, LLM)
    return label


LabelOf = Callable[[str], "str | None"]


def _label_fn(labels: Mapping[str, str | None] | FunctionalityDB | LabelOf) -> LabelOf:
    if callable(labels):
        return labels
    return labels.get


def behavioral_profile(graph: ProvenanceGraph, node_key: str,
                       labels: Mapping[str, str | None] | FunctionalityDB | LabelOf) -> set[BehavioralSignature]:
    if node_key not in graph.nodes:
        raise KeyError(node_key)
    label_of = _label_fn(labels)
    sigs = set()
    for e in graph.in_edges(node_key):
        lab = label_of(e.src_key)
        if lab and lab != NO_LABEL:
            sigs.add(BehavioralSignature("IN", e.itype, lab))
    for e in graph.out_edges(node_key):
        lab = label_of(e.dst_key)
        if lab and lab != NO_LABEL:
            sigs.add(BehavioralSignature("OUT", e.itype, lab))
    return sigs


def profile_bits(profile: Iterable[BehavioralSignature], index: SignatureIndex, grow: bool) -> list[int]:
    bits = []
    for sig in sorted(profile):
        i = index.register(sig) if grow else index.get(sig)
        if i is not None:
            bits.append(i)
    return sorted(bits)


def profile_vector(profile: Iterable[BehavioralSignature], index: SignatureIndex, grow: bool) -> np.ndarray:
    bits = profile_bits(profile, index, grow)
    v = np.zeros(index.d, dtype=np.int8)
    v[bits] = 1
    return v


def classify_unknown(x_query: np.ndarray | Iterable[int], b_db: BehavioralDB) -> tuple[str, str]:
    """Label of the most cosine-similar reference; ties -> smallest node_key.

    Returns (label, reference node_key). Similarities are compared exactly:
    for binary vectors cos = |q & r| / sqrt(|q| |r|), so ranking by
    |q & r|^2 / |r| is exact in rationals.
    """
    if not len(b_db):
        raise ClassificationError("no reference")
    if isinstance(x_query, np.ndarray):
        q = frozenset(int(i) for i in np.flatnonzero(x_query))
    else:
        q = frozenset(x_query)
    if not q:
        raise ClassificationError("no behavioral evidence")
    best: tuple[Fraction, str] | None = None
    best_label = ""
    for key in sorted(b_db.entries):
        bits, label = b_db.entries[key]
        if not bits:
            continue
        overlap = len(q & bits)
        score = Fraction(overlap * overlap, len(bits))
        if best is None or score > best[0]:
            best, best_label = (score, key), label
    if best is None or best[0] == 0:
        raise ClassificationError("no behavioral evidence")
    return best_label, best[1]


# --- enrichment passes -----------------------------------------------------


@dataclass
class EnrichResult:
    graph: ProvenanceGraph
    f_db: FunctionalityDB
    b_db: BehavioralDB
    index: SignatureIndex
    label_vectors: dict[str, np.ndarray] = field(default_factory=dict)
    llm_labeled: list[str] = field(default_factory=list)
    behavioral: dict[str, str] = field(default_factory=dict)  # node -> reference used
    unlabeled: list[str] = field(default_factory=list)
    sweeps: int = 0

    def node_feature(self, node_key: str) -> np.ndarray | None:
        lab = self.graph.nodes[node_key].functional_label
        return self.label_vectors.get(lab) if lab else None

    def summary(self) -> dict[str, Any]:
        return {
            "nodes": len(self.graph.nodes),
            "llm_labeled": len(self.llm_labeled),
            "behavioral": len(self.behavioral),
            "unlabeled": len(self.unlabeled),
            "sweeps": self.sweeps,
            "signatures": self.index.d,
        }


def _set_label(graph: ProvenanceGraph, key: str, label: str, source: str) -> None:
    node = graph.nodes[key]
    node.functional_label = label
    node.label_source = source


def reference_pass(graph: ProvenanceGraph, b_db: BehavioralDB, index: SignatureIndex,
                   exclude: Iterable[str] = ()) -> int:
    """Register every labeled node's profile as a behavioral reference."""
    skip = set(exclude)
    labels = graph.labels()
    n = 0
    for key in sorted(graph.nodes):
        lab = labels[key]
        if key in skip or not lab or lab == NO_LABEL:
            continue
        prof = behavioral_profile(graph, key, labels)
        if prof:
            b_db.add(key, profile_bits(prof, index, grow=True), lab)
            n += 1
    return n


def behavioral_sweeps(
    graph: ProvenanceGraph,
    targets: Iterable[str],
    f_db: FunctionalityDB,
    b_db: BehavioralDB,
    index: SignatureIndex,
    max_sweeps: int = 3,
) -> tuple[dict[str, str], list[str], int]:
    """Classify target nodes behaviorally; each sweep sees labels as of its start.

    Returns (node -> reference key, still-unlabeled nodes, sweeps run).
    """
    pending = sorted(set(targets))
    used: dict[str, str] = {}
    sweeps = 0
    while pending and sweeps < max_sweeps:
        sweeps += 1
        labels = graph.labels()
        found: list[tuple[str, str, str, list[int]]] = []
        for key in pending:
            bits = profile_bits(behavioral_profile(graph, key, labels), index, grow=False)
            try:
                label, ref = classify_unknown(bits, b_db)
            except ClassificationError:
                continue
            found.append((key, label, ref, bits))
        if not found:
            break
        for key, label, ref, bits in found:
            _set_label(graph, key, label, BEHAVIORAL)
            if key not in f_db:
                f_db.set(key, label, BEHAVIORAL)
            b_db.add(key, bits, label)
            used[key] = ref
        done = {k for k, *_ in found}
        pending = [k for k in pending if k not in done]
    return used, pending, sweeps


def encode_labels(labels: Iterable[str], embedder: EmbeddingProvider) -> dict[str, np.ndarray]:
    return {lab: embedder.embed(lab).vector for lab in sorted(set(labels))}


def enrich_graph(
    graph: ProvenanceGraph,
    provider: ChatProvider,
    f_db: FunctionalityDB | None = None,
    b_db: BehavioralDB | None = None,
    index: SignatureIndex | None = None,
    embedder: EmbeddingProvider | None = None,
    platform: str = "system",
    max_sweeps: int = 3,
) -> EnrichResult:
    """Label nodes in place and return the updated databases."""
    f_db = f_db if f_db is not None else FunctionalityDB()
    b_db = b_db if b_db is not None else BehavioralDB()
    index = index if index is not None else SignatureIndex()
    result = EnrichResult(graph, f_db, b_db, index)

    # pass 1: LLM labels for named nodes, cache first
    unknown = []
    for key in sorted(graph.nodes):
        node = graph.nodes[key]
        if node.names and not node.anonymous:
            cached = f_db.provenance(key)
            label = infer_label_llm(provider, key, f_db, platform)
            if label == NO_LABEL:
                unknown.append(key)
                continue
            _set_label(graph, key, label, cached or LLM)
            if cached is None:
                result.llm_labeled.append(key)
        elif graph.degree(key) > 0:
            unknown.append(key)

    # pass 2: references from every labeled node
    reference_pass(graph, b_db, index)

    # pass 3: behavioral classification of the rest
    used, pending, sweeps = behavioral_sweeps(graph, unknown, f_db, b_db, index, max_sweeps)
    result.behavioral = used
    result.unlabeled = pending
    result.sweeps = sweeps
    if pending:
        log.info("%d node(s) left unlabeled after %d sweep(s)", len(pending), sweeps)

    # pass 4: label feature vectors
    if embedder is not None:
        labels = [n.functional_label for n in graph.nodes.values() if n.functional_label]
        result.label_vectors = encode_labels(labels, embedder)
    return result
