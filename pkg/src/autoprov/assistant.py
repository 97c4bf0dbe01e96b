"""Post-detection assistant: linearized attack graphs, summaries and tactics."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .detect import AttackGraph
from .enrich import FunctionalityDB
from .graph import ProvEdge, ProvenanceGraph
from .llm.parsers import ParseError, TacticReasoning, parse_summary_response, parse_yes_no, tactic_key
from .llm.prompts import ChatRequest, TemplateId
from .llm.providers import ChatError, ChatProvider, complete_many
from .names import normalize_entity_name

log = logging.getLogger(__name__)

UNKNOWN_FUNCTIONALITY = "unknown functionality"


class AssistantError(Exception):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class TacticCatalog:
    entries: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        keys = [tactic_key(n) for n, _ in self.entries]
        if len(keys) != len(set(keys)):
            raise ValueError("tactic names must be unique after case-folding")

    @classmethod
    def parse(cls, text: str) -> "TacticCatalog":
        rows = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            name, _, desc = line.partition("\t")
            rows.append((name.strip(), desc.strip()))
        return cls(tuple(rows))

    @classmethod
    def load(cls, path: Path | str | None = None) -> "TacticCatalog":
        if path is None:
            text = resources.files("autoprov").joinpath("assets", "tactics.tsv").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.parse(text)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    def lookup(self, name: str) -> tuple[str, str] | None:
        k = tactic_key(name)
        for n, d in self.entries:
            if tactic_key(n) == k:
                return n, d
        return None

    def __contains__(self, name: str) -> bool:
        return self.lookup(name) is not None


# --- linearization -----------------------------------------------------------


@dataclass
class LinearizedGraph:
    lines: list[str]
    entity_names: list[str]
    counts: list[int] = field(default_factory=list)
    display_to_key: dict[str, str] = field(default_factory=dict)

    def text(self) -> str:
        return "\n".join(self.lines)


def display_name(graph: ProvenanceGraph | None, key: str) -> str:
    node = graph.nodes.get(key) if graph is not None else None
    return min(node.names) if node is not None and node.names else key


def linearize(attack_graph: AttackGraph | Sequence[ProvEdge], graph: ProvenanceGraph | None = None) -> LinearizedGraph:
    """Edges in time order; consecutive repeats collapse into one ``(xN)`` line."""
    edges = attack_graph.edges if isinstance(attack_graph, AttackGraph) else list(attack_graph)
    if not edges:
        raise AssistantError("empty attack graph")
    runs: list[list[Any]] = []  # [src, dst, itype, count]
    for e in edges:
        if runs and runs[-1][:3] == [e.src_key, e.dst_key, e.itype]:
            runs[-1][3] += e.count
        else:
            runs.append([e.src_key, e.dst_key, e.itype, e.count])
    lines, counts, names = [], [], []
    to_key: dict[str, str] = {}
    for src, dst, itype, n in runs:
        s, d = display_name(graph, src), display_name(graph, dst)
        for name, key in ((s, src), (d, dst)):
            if name not in to_key:
                to_key[name] = key
                names.append(name)
        lines.append(f"{s} --{itype}--> {d}" + (f" (x{n})" if n >= 2 else ""))
        counts.append(n)
    return LinearizedGraph(lines, names, counts, to_key)


# --- unknown entities ----------------------------------------------------------


def flag_unknown_entities(provider: ChatProvider, entity_names: Iterable[str], max_workers: int = 1) -> set[str]:
    """P7 per entity; anything other than a clean YES marks the entity unknown."""
    names = list(dict.fromkeys(entity_names))
    reqs = [ChatRequest(TemplateId.P7, {"entity": n}) for n in names]
    unknown = set()
    for name, out in zip(names, complete_many(provider, reqs, max_workers)):
        if not out.ok:
            log.warning("unknown-entity check failed for %r: %s", name, out.error)
            unknown.add(name)
            continue
        answer = parse_yes_no(out.text or "")
        if answer is None:
            log.warning("unparseable unknown-entity answer for %r: %r", name, out.text)
        if answer is not True:
            unknown.add(name)
    return unknown


def inject_context(
    unknown: Iterable[str],
    f_db: FunctionalityDB | Mapping[str, str],
    name_to_key: Mapping[str, str] | None = None,
    flags: list[str] | None = None,
) -> list[tuple[str, str]]:
    out = []
    for name in sorted(unknown):
        key = (name_to_key or {}).get(name) or normalize_entity_name(name)
        label = f_db.get(key)
        if not label:
            label = UNKNOWN_FUNCTIONALITY
            if flags is not None:
                flags.append(name)
        out.append((name, label))
    return out


# --- summary and tactics ---------------------------------------------------------


@dataclass
class AttackSummary:
    summary_text: str
    tactics: list[TacticReasoning]
    context_injected: list[tuple[str, str]] = field(default_factory=list)
    dropped_tactics: list[str] = field(default_factory=list)

    def tactic_names(self) -> list[str]:
        return [t.tactic for t in self.tactics]

    def to_dict(self) -> dict[str, Any]:
        return {
            "summary": self.summary_text,
            "tactics": [{"tactic": t.tactic, "reasoning": t.reasoning, "flagged": t.flagged} for t in self.tactics],
            "context": [list(c) for c in self.context_injected],
            "dropped_tactics": self.dropped_tactics,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AttackSummary":
        return cls(
            d["summary"],
            [TacticReasoning(t["tactic"], t["reasoning"], t.get("flagged", False)) for t in d["tactics"]],
            [tuple(c) for c in d.get("context", [])],
            list(d.get("dropped_tactics", [])),
        )

    def report(self) -> str:
        parts = ["Summary:", self.summary_text, ""]
        if self.context_injected:
            parts.append("Context supplied for unfamiliar entities:")
            parts += [f"  {n}: {lab}" for n, lab in self.context_injected]
            parts.append("")
        parts.append("Tactics:")
        parts += [f"  {t.tactic}: {t.reasoning}" for t in self.tactics] or ["  (none)"]
        return "\n".join(parts) + "\n"


def summarize_attack(
    provider: ChatProvider,
    linearized: LinearizedGraph,
    context: Sequence[tuple[str, str]],
    malicious_keys: Sequence[str],
    catalog: TacticCatalog,
) -> AttackSummary:
    if not linearized.lines:
        raise AssistantError("empty attack graph")
    bindings = {
        "edges": linearized.text(),
        "malicious": "\n".join(malicious_keys),
        "metadata": "\n".join(f"({n}, {lab})" for n, lab in context) or "(none)",
        "tactics": "\n".join(catalog.names),
    }
    try:
        raw = provider.complete(ChatRequest(TemplateId.P8, bindings))
    except ChatError as exc:
        raise AssistantError(f"summary request failed: {exc}") from exc
    try:
        text, tactics = parse_summary_response(raw)
    except ParseError as exc:
        raise AssistantError(str(exc), raw) from exc
    kept, dropped, seen = [], [], set()
    for t in tactics:
        hit = catalog.lookup(t.tactic)
        if hit is None:
            log.warning("dropping off-catalog tactic %r", t.tactic)
            dropped.append(t.tactic)
            continue
        if t.key in seen:
            continue
        seen.add(t.key)
        kept.append(t)
    return AttackSummary(text, kept, list(context), dropped)


def judge_tactic(judges: Sequence[ChatProvider], tactic: str, reasoning: str, catalog: TacticCatalog) -> bool:
    """Accepted when at least two of the three judges answer YES."""
    if len(judges) != 3:
        raise ValueError("exactly three judges are required")
    hit = catalog.lookup(tactic)
    if hit is None:
        raise ValueError(f"tactic {tactic!r} is not in the catalog")
    req = ChatRequest(TemplateId.P9, {"tactic": hit[0], "reasoning": reasoning, "reference": hit[1]})
    votes = 0
    for i, judge in enumerate(judges):
        try:
            votes += parse_yes_no(judge.complete(req)) is True
        except ChatError as exc:
            log.warning("judge %d failed on %r: %s", i, tactic, exc)
    return votes >= 2


def tactic_correctness(summary: AttackSummary, judges: Sequence[ChatProvider], catalog: TacticCatalog) -> float | None:
    """Share of tactics the judges accept; None when there are no tactics."""
    if not summary.tactics:
        return None
    passed = sum(judge_tactic(judges, t.tactic, t.reasoning, catalog) for t in summary.tactics)
    return passed / len(summary.tactics)


@dataclass
class Explanation:
    linearized: LinearizedGraph
    unknown: list[str]
    summary: AttackSummary
    unresolved: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "lines": self.linearized.lines,
            "unknown": self.unknown,
            "unresolved": self.unresolved,
            **self.summary.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


def explain(
    provider: ChatProvider,
    attack_graph: AttackGraph,
    graph: ProvenanceGraph,
    f_db: FunctionalityDB,
    catalog: TacticCatalog,
    max_workers: int = 1,
) -> Explanation:
    """Full assistant path for one attack graph."""
    lin = linearize(attack_graph, graph)
    unknown = flag_unknown_entities(provider, lin.entity_names, max_workers)
    unresolved: list[str] = []
    labels = {k: n.functional_label for k, n in graph.nodes.items() if n.functional_label}
    lookup = _ChainLookup(f_db, labels)
    context = inject_context(unknown, lookup, lin.display_to_key, unresolved)
    malicious = [display_name(graph, k) for k in attack_graph.seed_keys]
    summary = summarize_attack(provider, lin, context, malicious, catalog)
    return Explanation(lin, sorted(unknown), summary, unresolved)


class _ChainLookup:
    def __init__(self, *maps):
        self.maps = maps

    def get(self, key: str) -> str | None:
        for m in self.maps:
            v = m.get(key)
            if v:
                return v
        return None
