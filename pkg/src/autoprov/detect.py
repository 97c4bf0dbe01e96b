"""Reference anomaly detector, node-score CSV contract, and attack graphs."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .core import NO_LABEL, atomic_write_text, dumps_jsonl, iter_jsonl
from .enrich import behavioral_profile
from .graph import ProvEdge, ProvenanceGraph

log = logging.getLogger(__name__)

DEFAULT_N_SEED = 10


class DetectError(Exception):
    pass


@dataclass(frozen=True)
class NodeScore:
    node_key: str
    score: float
    flagged: bool = False  # empty profile: scored 0 for lack of evidence

    def sort_key(self) -> tuple[float, str]:
        return (-self.score, self.node_key)


def rank(scores: Iterable[NodeScore]) -> list[NodeScore]:
    """Descending score, ties broken by node_key."""
    return sorted(scores, key=NodeScore.sort_key)


def _sig_key(sig) -> str:
    return "\t".join(sig.as_list())


def _node_label(graph: ProvenanceGraph, key: str) -> str:
    return graph.nodes[key].functional_label or NO_LABEL


@dataclass
class RarityModel:
    signature_counts: dict[str, int] = field(default_factory=dict)
    label_counts: dict[str, int] = field(default_factory=dict)
    total_nodes: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "signature_counts": dict(sorted(self.signature_counts.items())),
            "label_counts": dict(sorted(self.label_counts.items())),
            "total_nodes": self.total_nodes,
        }

    def save(self, path: Path | str) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "RarityModel":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["signature_counts"], d["label_counts"], d["total_nodes"])


def fit_reference_detector(benign_graph: ProvenanceGraph) -> RarityModel:
    if not benign_graph.nodes:
        raise DetectError("cannot fit on an empty graph")
    model = RarityModel()
    labels = benign_graph.labels()
    for key in sorted(benign_graph.nodes):
        for sig in behavioral_profile(benign_graph, key, labels):
            k = _sig_key(sig)
            model.signature_counts[k] = model.signature_counts.get(k, 0) + 1
        lab = _node_label(benign_graph, key)
        model.label_counts[lab] = model.label_counts.get(lab, 0) + 1
        model.total_nodes += 1
    return model


def score_node(model: RarityModel, graph: ProvenanceGraph, key: str,
               labels: Mapping[str, str | None] | None = None) -> NodeScore:
    prof = behavioral_profile(graph, key, labels if labels is not None else graph.labels())
    if not prof:
        return NodeScore(key, 0.0, flagged=True)
    unseen = sum(1 for s in prof if model.signature_counts.get(_sig_key(s), 0) == 0)
    label_unseen = model.label_counts.get(_node_label(graph, key), 0) == 0
    return NodeScore(key, 0.5 * unseen / len(prof) + 0.5 * (1.0 if label_unseen else 0.0))


def score_nodes(model: RarityModel, graph: ProvenanceGraph) -> list[NodeScore]:
    labels = graph.labels()
    return rank(score_node(model, graph, key, labels) for key in graph.nodes)


# --- plugin contract ----------------------------------------------------------

SCORE_COLUMNS = ("node_key", "score")


def scores_csv(scores: Iterable[NodeScore]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for s in rank(scores):
        w.writerow([s.node_key, repr(float(s.score))])
    return buf.getvalue()


def write_scores_csv(path: Path | str, scores: Iterable[NodeScore]) -> None:
    atomic_write_text(path, scores_csv(scores))


class ScoreFileError(DetectError):
    def __init__(self, row: int, cause: str):
        super().__init__(f"row {row}: {cause}")
        self.row = row


def read_scores_csv(path: Path | str, node_keys: Iterable[str] | None = None) -> list[NodeScore]:
    """Parse a node-score CSV; nodes missing from the file default to 0."""
    out: dict[str, NodeScore] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SCORE_COLUMNS:
            raise ScoreFileError(1, f"expected header {','.join(SCORE_COLUMNS)}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ScoreFileError(row_no, f"expected 2 columns, found {len(row)}")
            try:
                value = float(row[1])
            except ValueError:
                raise ScoreFileError(row_no, f"non-numeric score {row[1]!r}") from None
            if not math.isfinite(value):
                raise ScoreFileError(row_no, f"non-finite score {row[1]!r}")
            out[row[0]] = NodeScore(row[0], value)
    if node_keys is not None:
        for key in node_keys:
            if key not in out:
                log.warning("score file has no row for %s; using 0", key)
                out[key] = NodeScore(key, 0.0)
    return rank(out.values())


def run_plugin(command: Sequence[str], edges_csv: Path | str, out_csv: Path | str,
               node_keys: Iterable[str] | None = None) -> list[NodeScore]:
    """Run an external detector: ``command + [edges_csv, out_csv]``."""
    proc = subprocess.run([*command, str(edges_csv), str(out_csv)], capture_output=True, text=True)
    if proc.returncode != 0:
        raise DetectError(f"detector exited with {proc.returncode}: {proc.stderr.strip()[:500]}")
    return read_scores_csv(out_csv, node_keys)


# --- attack graphs ----------------------------------------------------------


@dataclass
class AttackGraph:
    seed_keys: list[str]
    node_keys: set[str]
    edges: list[ProvEdge]
    scores: dict[str, float]

    def __len__(self) -> int:
        return len(self.node_keys)

    def save(self, path: Path | str) -> None:
        header = {
            "seed_keys": self.seed_keys,
            "node_keys": sorted(self.node_keys),
            "scores": {k: self.scores[k] for k in sorted(self.scores)},
        }
        atomic_write_text(path, json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n" + dumps_jsonl(self.edges))

    @classmethod
    def load(cls, path: Path | str) -> "AttackGraph":
        rows = list(iter_jsonl(path))
        if not rows:
            raise DetectError(f"{path}: empty attack graph file")
        h = rows[0]
        return cls(h["seed_keys"], set(h["node_keys"]), [ProvEdge.from_dict(r) for r in rows[1:]], h["scores"])


def build_attack_graph(graph: ProvenanceGraph, scores: Sequence[NodeScore], n_seed: int = DEFAULT_N_SEED) -> AttackGraph:
    """Top seeds, their one-hop neighborhoods, and every edge among included nodes."""
    if n_seed < 1:
        raise ValueError("n_seed must be >= 1")
    if not scores:
        raise DetectError("empty score list")
    ranked = rank(s for s in scores if s.node_key in graph.nodes)
    seeds = [s.node_key for s in ranked[:n_seed]]
    nodes = set(seeds)
    for key in seeds:
        nodes |= graph.neighbors(key)
    edges = [e for e in graph.edges if e.src_key in nodes and e.dst_key in nodes]
    score_map = {s.node_key: s.score for s in ranked if s.node_key in nodes}
    return AttackGraph(seeds, nodes, graph.ordered_edges(edges), score_map)
