"""Clustering and detection metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from sklearn.metrics import adjusted_rand_score, average_precision_score, roc_auc_score

BENIGN = "benign"


class MetricError(ValueError):
    pass


def adjusted_rand_index(pred: Mapping[Hashable, Hashable] | Sequence[Hashable],
                        truth: Mapping[Hashable, Hashable] | Sequence[Hashable]) -> float:
    """Pair-counting ARI; mappings must cover the same items."""
    if isinstance(pred, Mapping) != isinstance(truth, Mapping):
        raise MetricError("pass two mappings or two sequences")
    if isinstance(pred, Mapping):
        if set(pred) != set(truth):
            raise MetricError("prediction and truth cover different items")
        items = sorted(pred, key=str)
        p, t = [pred[i] for i in items], [truth[i] for i in items]
    else:
        if len(pred) != len(truth):
            raise MetricError("prediction and truth differ in length")
        p, t = list(pred), list(truth)
    if len(p) < 2:
        raise MetricError("ARI needs at least two items")
    # labels may be of any hashable type; encode them as integers
    enc = lambda xs: np.unique([str(x) for x in xs], return_inverse=True)[1]  # noqa: E731
    return float(adjusted_rand_score(enc(t), enc(p)))


@dataclass(frozen=True)
class LabeledRanking:
    items: tuple[tuple[str, float, str], ...]  # (node_key, score, "benign" or attack id)

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple((k, float(s), lab) for k, s, lab in self.items))
        if any(not math.isfinite(s) for _, s, _ in self.items):
            raise MetricError("scores must be finite")

    @classmethod
    def from_scores(cls, scores: Mapping[str, float] | Iterable, attack_of: Mapping[str, str]) -> "LabeledRanking":
        pairs = scores.items() if isinstance(scores, Mapping) else ((s.node_key, s.score) for s in scores)
        return cls(tuple((k, s, attack_of.get(k, BENIGN)) for k, s in pairs))

    @property
    def attack_ids(self) -> set[str]:
        return {lab for _, _, lab in self.items if lab != BENIGN}

    def ordered(self) -> list[tuple[str, float, str]]:
        return sorted(self.items, key=lambda it: (-it[1], it[0]))

    def _binary(self) -> tuple[np.ndarray, np.ndarray]:
        y = np.array([lab != BENIGN for _, _, lab in self.items], dtype=int)
        s = np.array([sc for _, sc, _ in self.items], dtype=float)
        return y, s


def auc_roc(ranking: LabeledRanking) -> float:
    """Probability a random attack item outscores a random benign one; ties count half."""
    y, s = ranking._binary()
    if y.min(initial=1) == y.max(initial=0):
        raise MetricError("AUC-ROC needs both benign and attack items")
    return float(roc_auc_score(y, s))


def auc_pr(ranking: LabeledRanking) -> float:
    """Step-wise area under precision-recall; tied scores form one threshold."""
    y, s = ranking._binary()
    if not y.any():
        raise MetricError("AUC-PR needs at least one attack item")
    return float(average_precision_score(y, s))


def adp(ranking: LabeledRanking, attack_ids: Iterable[str] | None = None) -> float:
    """Mean over attacks of precision at the first rank where the attack surfaces."""
    attacks = set(attack_ids) if attack_ids is not None else ranking.attack_ids
    if not attacks:
        raise MetricError("ADP needs at least one attack")
    order = ranking.ordered()
    first: dict[str, int] = {}
    hits = 0
    prec_at: list[float] = []
    for k, (_, _, lab) in enumerate(order, start=1):
        if lab != BENIGN:
            hits += 1
            first.setdefault(lab, k)
        prec_at.append(hits / k)
    missing = attacks - set(first)
    if missing:
        raise MetricError(f"attacks without any ranked node: {sorted(missing)}")
    return sum(prec_at[first[a] - 1] for a in attacks) / len(attacks)
