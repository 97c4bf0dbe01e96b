"""Log-type discovery: diversity sampling plus streaming micro-clustering.

Each window of logs is embedded, a diverse subset is picked with greedy
farthest-point sampling, only that subset updates the micro-clusters, and
a few members of every touched cluster become extraction candidates.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .core import LogRecord, atomic_write_text, iter_jsonl
from .embed import Embedding, EmbeddingProvider, fnv1a_64

RESERVOIR_CAP = 64
DEFAULT_RADIUS = 0.3
DEFAULT_K = 32
DEFAULT_M = 3
DEFAULT_W_MIN = 0.5


def _as_matrix(embeddings: Sequence[Embedding] | np.ndarray) -> np.ndarray:
    if isinstance(embeddings, np.ndarray):
        return embeddings
    return np.vstack([e.vector for e in embeddings])


GFP_TIE = 1e-12


def _first_max(score: np.ndarray) -> int:
    # scores within rounding noise of the maximum tie; the lowest index wins
    return int(np.flatnonzero(score >= score.max() - GFP_TIE)[0])


def gfp_sample(embeddings: Sequence[Embedding] | np.ndarray, k: int) -> list[int]:
    """Greedy farthest-point selection under cosine distance.

    The first pick is the vector farthest from the mean direction; every
    later pick maximizes its minimum distance to the picks so far. Ties go to
    the lowest index. Returns indices in selection order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    X = _as_matrix(embeddings)
    n = X.shape[0]
    if n == 0:
        raise ValueError("gfp_sample needs at least one embedding")
    mean = X.mean(axis=0)
    norm = np.linalg.norm(mean)
    to_mean = 1.0 - (X @ (mean / norm)) if norm > 0 else np.ones(n)
    picks = [_first_max(to_mean)]
    chosen = np.zeros(n, dtype=bool)
    chosen[picks[0]] = True
    min_dist = 1.0 - X @ X[picks[0]]
    while len(picks) < min(k, n):
        score = np.where(chosen, -np.inf, min_dist)
        j = _first_max(score)
        picks.append(j)
        chosen[j] = True
        min_dist = np.minimum(min_dist, 1.0 - X @ X[j])
    return picks


@dataclass
class MicroCluster:
    cluster_id: int
    center: np.ndarray
    weight: float
    last_update_seq: int
    member_sample: list[str] = field(default_factory=list)
    n_members: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "cluster_id": self.cluster_id,
            "center": [float(x) for x in self.center],
            "weight": self.weight,
            "last_update_seq": self.last_update_seq,
            "member_sample": list(self.member_sample),
            "n_members": self.n_members,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MicroCluster":
        return cls(
            cluster_id=d["cluster_id"],
            center=np.asarray(d["center"], dtype=np.float64),
            weight=d["weight"],
            last_update_seq=d["last_update_seq"],
            member_sample=list(d.get("member_sample", [])),
            n_members=d.get("n_members", 0),
        )

    def _remember(self, log_id: str) -> None:
        # deterministic reservoir: the replacement slot comes from the id hash
        self.n_members += 1
        if len(self.member_sample) < RESERVOIR_CAP:
            self.member_sample.append(log_id)
            return
        j = fnv1a_64(log_id.encode("utf-8")) % self.n_members
        if j < RESERVOIR_CAP:
            self.member_sample[j] = log_id


@dataclass
class ClustererState:
    radius: float = DEFAULT_RADIUS
    decay: float = 0.0
    w_min: float = DEFAULT_W_MIN
    clusters: list[MicroCluster] = field(default_factory=list)
    next_cluster_id: int = 0
    last_seq: int | None = None

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        if self.decay < 0:
            raise ValueError("decay must be >= 0")

    def centers(self) -> np.ndarray:
        return np.vstack([c.center for c in self.clusters]) if self.clusters else np.zeros((0, 0))

    def nearest(self, vector: np.ndarray) -> tuple[MicroCluster | None, float]:
        if not self.clusters:
            return None, float("inf")
        dists = 1.0 - self.centers() @ vector
        i = int(np.argmin(dists))
        return self.clusters[i], float(dists[i])

    def save(self, path: Path | str) -> None:
        """Header line with parameters, then one micro-cluster per line."""
        header = {
            "kind": "clusterer",
            "radius": self.radius,
            "decay": self.decay,
            "w_min": self.w_min,
            "next_cluster_id": self.next_cluster_id,
            "last_seq": self.last_seq,
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(c.to_dict(), sort_keys=True) for c in self.clusters]
        atomic_write_text(path, "".join(line + "\n" for line in lines))

    @classmethod
    def load(cls, path: Path | str) -> "ClustererState":
        rows = list(iter_jsonl(path))
        if not rows or rows[0].get("kind") != "clusterer":
            raise ValueError(f"{path}: not a clusterer checkpoint")
        h = rows[0]
        return cls(
            radius=h["radius"],
            decay=h["decay"],
            w_min=h["w_min"],
            clusters=[MicroCluster.from_dict(r) for r in rows[1:]],
            next_cluster_id=h["next_cluster_id"],
            last_seq=h.get("last_seq"),
        )


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def insert(state: ClustererState, log_id: str, embedding: Embedding | np.ndarray, seq: int) -> int:
    """Add one sampled log to the clusterer and return its cluster id."""
    x = embedding.vector if isinstance(embedding, Embedding) else np.asarray(embedding)
    if state.decay > 0 and state.last_seq is not None and state.clusters:
        factor = 2.0 ** (-state.decay * (seq - state.last_seq))
        for c in state.clusters:
            c.weight *= factor
        state.clusters = [c for c in state.clusters if c.weight >= state.w_min]
    state.last_seq = seq

    best, dist = state.nearest(x)
    if best is not None and dist <= state.radius:
        best.center = _unit(best.center * best.weight + x)
        best.weight += 1.0
        best.last_update_seq = seq
        best._remember(log_id)
        return best.cluster_id

    c = MicroCluster(
        cluster_id=state.next_cluster_id,
        center=np.array(x, dtype=np.float64),
        weight=1.0,
        last_update_seq=seq,
    )
    c._remember(log_id)
    state.clusters.append(c)
    state.next_cluster_id += 1
    return c.cluster_id


@dataclass
class CandidateLogSet:
    entries: list[tuple[str, str, int]] = field(default_factory=list)
    window_id: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def cluster_of(self) -> dict[str, int]:
        return {log_id: cid for log_id, _, cid in self.entries}

    def to_rows(self) -> list[dict[str, Any]]:
        return [
            {"log_id": lid, "raw_text": text, "cluster_id": cid, "window_id": self.window_id}
            for lid, text, cid in self.entries
        ]


def select_representatives(
    state: ClustererState,
    window_members: Mapping[int, Sequence[str]],
    m: int,
    rng_seed: int,
    texts: Mapping[str, str] | None = None,
    window_id: int = 0,
) -> CandidateLogSet:
    """Uniformly sample ``min(m, |members|)`` logs per cluster, seeded."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = random.Random(rng_seed)
    entries = []
    for cid in sorted(window_members):
        members = list(window_members[cid])
        picked = rng.sample(members, min(m, len(members)))
        for log_id in picked:
            entries.append((log_id, (texts or {}).get(log_id, ""), cid))
    return CandidateLogSet(entries, window_id)


def process_window(
    state: ClustererState,
    logs: Sequence[LogRecord],
    provider: EmbeddingProvider,
    k: int = DEFAULT_K,
    m: int = DEFAULT_M,
    rng_seed: int = 0,
) -> tuple[CandidateLogSet, ClustererState, dict[str, int]]:
    if not logs:
        return CandidateLogSet(), state, {}
    window_ids = {log.window_id for log in logs}
    if len(window_ids) != 1:
        raise ValueError(f"logs span several windows: {sorted(window_ids)}")
    X = np.vstack([provider.embed(log.raw_text).vector for log in logs])
    sampled = sorted(gfp_sample(X, k))

    assignments: dict[str, int] = {}
    members: dict[int, list[str]] = {}
    for i in sampled:
        log = logs[i]
        cid = insert(state, log.log_id, X[i], log.arrival_seq)
        assignments[log.log_id] = cid
        members.setdefault(cid, []).append(log.log_id)

    # non-sampled logs follow the frozen centers; they never move them
    if state.clusters:
        ids = np.array([c.cluster_id for c in state.clusters])
        rest = [i for i in range(len(logs)) if logs[i].log_id not in assignments]
        if rest:
            nearest = np.argmin(1.0 - X[rest] @ state.centers().T, axis=1)
            for i, j in zip(rest, nearest):
                assignments[logs[i].log_id] = int(ids[j])

    texts = {log.log_id: log.raw_text for log in logs}
    window_id = next(iter(window_ids))
    candidates = select_representatives(state, members, m, rng_seed + window_id, texts, window_id)
    return candidates, state, assignments


def run_stream(
    logs: Sequence[LogRecord],
    provider: EmbeddingProvider,
    state: ClustererState | None = None,
    k: int = DEFAULT_K,
    m: int = DEFAULT_M,
    rng_seed: int = 0,
) -> tuple[CandidateLogSet, ClustererState, dict[str, int]]:
    """Process consecutive windows. The merged candidate set keeps at most ``m``
    logs per cluster: clusters already represented are not re-sampled."""
    state = state or ClustererState()
    merged = CandidateLogSet()
    per_cluster: dict[int, int] = {}
    assignments: dict[str, int] = {}
    windows: dict[int, list[LogRecord]] = {}
    for log in logs:
        windows.setdefault(log.window_id, []).append(log)
    for wid in sorted(windows):
        cands, state, assigned = process_window(state, windows[wid], provider, k, m, rng_seed)
        assignments.update(assigned)
        for entry in cands.entries:
            cid = entry[2]
            if per_cluster.get(cid, 0) < m:
                merged.entries.append(entry)
                per_cluster[cid] = per_cluster.get(cid, 0) + 1
    return merged, state, assignments
