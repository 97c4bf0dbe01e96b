"""Entity-name poisoning and the robustness metrics built on it."""

from __future__ import annotations

import logging
import random
import re
import string
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from ..assistant import AssistantError, TacticCatalog, explain, tactic_correctness
from ..detect import AttackGraph
from ..embed import EmbeddingProvider
from ..enrich import BehavioralDB, FunctionalityDB, SignatureIndex, behavioral_sweeps
from ..graph import ProvenanceGraph
from ..llm.parsers import tactic_key
from ..llm.providers import ChatProvider

log = logging.getLogger(__name__)

_ALNUM_RUN = re.compile(r"[A-Za-z0-9]+")
_SCHEME = re.compile(r"^[A-Za-z][A-Za-z0-9+.-]*://")
_LETTERS = string.ascii_lowercase
_ALPHABET = string.ascii_lowercase + string.digits


class PoisonError(ValueError):
    pass


def poison_size(rate: float, n_names: int) -> int:
    """max(1, floor(rate * n / 100)), computed exactly."""
    if not 0 <= rate <= 100:
        raise PoisonError("rate must lie in [0, 100]")
    return max(1, int(Fraction(rate) * n_names // 100))


def _random_run(length: int, rng: random.Random) -> str:
    return rng.choice(_LETTERS) + "".join(rng.choice(_ALPHABET) for _ in range(length - 1))


def poison_name(name: str, rng: random.Random) -> str:
    """Same separators, component count and final extension; alphanumeric runs
    replaced by random strings of the same length."""
    m = _SCHEME.match(name)
    scheme, rest = (m.group(0), name[m.end():]) if m else ("", name)
    cut = max(rest.rfind("/"), rest.rfind("\\")) + 1
    final = rest[cut:]
    dot = final.rfind(".")
    ext = final[dot:] if dot > 0 else ""
    body = rest[: len(rest) - len(ext)]
    return scheme + _ALNUM_RUN.sub(lambda mm: _random_run(len(mm.group(0)), rng), body) + ext


@dataclass
class PoisonPlan:
    rate: float
    seed: int
    mapping: dict[str, str]  # original node key -> poisoned key

    def to_dict(self) -> dict[str, Any]:
        return {"rate": self.rate, "seed": self.seed, "mapping": dict(sorted(self.mapping.items()))}


def attack_entity_names(attack_graph: AttackGraph, graph: ProvenanceGraph) -> list[str]:
    """Node keys of named entities in the attack graph, sorted."""
    return sorted(k for k in attack_graph.node_keys
                  if k in graph.nodes and graph.nodes[k].names and not graph.nodes[k].anonymous)


def plan_poisoning(names: Sequence[str], rate: float, seed: int, taken: set[str] | None = None) -> PoisonPlan:
    if not names:
        raise PoisonError("no named entities to poison")
    rng = random.Random(seed)
    size = poison_size(rate, len(names))
    chosen = sorted(rng.sample(sorted(names), size))
    used = set(taken or ()) | set(names)
    mapping: dict[str, str] = {}
    for name in chosen:
        for _ in range(1000):
            new = poison_name(name, rng)
            if new not in used:
                break
        else:
            raise PoisonError(f"could not find a fresh poisoned name for {name!r}")
        used.add(new)
        mapping[name] = new
    return PoisonPlan(rate, seed, mapping)


def poison_names(
    attack_graph: AttackGraph, graph: ProvenanceGraph, rate: float, seed: int
) -> tuple[PoisonPlan, ProvenanceGraph, AttackGraph]:
    """Rename a sample of attack-graph entities in a copy of the graph.

    Poisoned nodes lose their names and labels; the returned attack graph
    refers to the poisoned keys.
    """
    names = attack_entity_names(attack_graph, graph)
    plan = plan_poisoning(names, rate, seed, set(graph.nodes))
    poisoned = graph.copy()
    for old, new in plan.mapping.items():
        poisoned.rename_node(old, new)
        node = poisoned.nodes[new]
        node.names = {new}
        node.functional_label = None
        node.label_source = None
    pi = plan.mapping
    edges = [e for e in poisoned.ordered_edges()
             if e.src_key in {pi.get(k, k) for k in attack_graph.node_keys}
             and e.dst_key in {pi.get(k, k) for k in attack_graph.node_keys}]
    ag = AttackGraph(
        [pi.get(k, k) for k in attack_graph.seed_keys],
        {pi.get(k, k) for k in attack_graph.node_keys},
        edges,
        {pi.get(k, k): v for k, v in attack_graph.scores.items()},
    )
    return plan, poisoned, ag


def tactic_consistency(original: Sequence[str], poisoned: Sequence[str]) -> float:
    """|M_o & M_p| / |M_o| over case-folded tactic names."""
    mo = {tactic_key(t) for t in original}
    mp = {tactic_key(t) for t in poisoned}
    if not mo:
        raise ValueError("original tactic set is empty")
    return len(mo & mp) / len(mo)


def summary_similarity(embedder: EmbeddingProvider, original: str, poisoned: str) -> float:
    """Cosine similarity of whole-summary embeddings."""
    if not original.strip() or not poisoned.strip():
        raise ValueError("summaries must be non-empty")
    if original == poisoned:
        return 1.0
    a, b = embedder.embed(original).vector, embedder.embed(poisoned).vector
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


@dataclass
class SweepContext:
    graph: ProvenanceGraph
    attack_graph: AttackGraph
    f_db: FunctionalityDB
    b_db: BehavioralDB
    index: SignatureIndex
    provider: ChatProvider
    judges: Sequence[ChatProvider]
    catalog: TacticCatalog
    embedder: EmbeddingProvider
    max_sweeps: int = 3


@dataclass
class SweepRow:
    rate: float
    n_poisoned: int = 0
    n_relabeled: int = 0
    alpha_tc: float | None = None
    alpha_r: float | None = None
    similarity: float | None = None
    error: str | None = None
    poisoned: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rate": self.rate,
            "n_poisoned": self.n_poisoned,
            "n_relabeled": self.n_relabeled,
            "alpha_tc": self.alpha_tc,
            "alpha_r": self.alpha_r,
            "similarity": self.similarity,
            "error": self.error,
            "poisoned": self.poisoned,
        }


def relabel_poisoned(ctx: SweepContext, plan: PoisonPlan, poisoned: ProvenanceGraph
                     ) -> tuple[FunctionalityDB, list[str]]:
    """Behavioral re-classification of poisoned nodes on copies of the databases.

    The reference set is left as built: poisoning renames entities in the
    attack graph, it does not rewrite the history the references came from.
    """
    f_db = ctx.f_db.copy()
    b_db = ctx.b_db.copy()
    index = ctx.index.copy()
    _, pending, _ = behavioral_sweeps(poisoned, plan.mapping.values(), f_db, b_db, index, ctx.max_sweeps)
    return f_db, pending


def robustness_sweep(ctx: SweepContext, rates: Sequence[float], seed: int) -> list[SweepRow]:
    if not rates:
        return []
    original = explain(ctx.provider, ctx.attack_graph, ctx.graph, ctx.f_db, ctx.catalog)
    orig_tactics = original.summary.tactic_names()
    rows = []
    for rate in rates:
        row = SweepRow(rate)
        try:
            plan, pgraph, pattack = poison_names(ctx.attack_graph, ctx.graph, rate, seed)
            row.n_poisoned = len(plan.mapping)
            row.poisoned = dict(sorted(plan.mapping.items()))
            f_db, pending = relabel_poisoned(ctx, plan, pgraph)
            row.n_relabeled = row.n_poisoned - len(pending)
            result = explain(ctx.provider, pattack, pgraph, f_db, ctx.catalog)
            row.alpha_tc = tactic_correctness(result.summary, ctx.judges, ctx.catalog)
            row.alpha_r = tactic_consistency(orig_tactics, result.summary.tactic_names()) if orig_tactics else None
            row.similarity = summary_similarity(ctx.embedder, original.summary.summary_text,
                                                result.summary.summary_text)
        except (PoisonError, AssistantError, ValueError) as exc:
            log.warning("robustness sweep at rate %s failed: %s", rate, exc)
            row.error = str(exc)
        rows.append(row)
    return rows
