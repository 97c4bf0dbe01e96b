from .metrics import LabeledRanking, adjusted_rand_index, adp, auc_pr, auc_roc
from .robustness import (
    PoisonPlan,
    SweepContext,
    poison_name,
    poison_names,
    poison_size,
    robustness_sweep,
    summary_similarity,
    tactic_consistency,
)

__all__ = [name for name in dir() if not name.startswith("_")]
