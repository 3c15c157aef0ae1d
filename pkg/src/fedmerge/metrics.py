"""Leave-one-out ranking metrics: HR@K and NDCG@K over 100 candidates.

Each client ranks its held-out item against its 99 sampled negatives using
its own personalized model (p, local table). Scores are the pre-sigmoid dot
products (the sigmoid is monotone, so ranks are identical and saturation
cannot manufacture float ties); remaining ties are broken by item id, smaller
id ranking better, so metrics are deterministic.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricRecord:
    round_index: int
    hr: dict  # K -> mean HR@K over clients
    ndcg: dict  # K -> mean NDCG@K over clients
    train_loss: float  # mean per-example BCE across clients (nan before training)
    seconds: float = 0.0  # wall clock; excluded from metrics.csv for determinism


def rank_test_item(scores, candidate_ids, test_item) -> int:
    """1-based rank of the test item among the candidates.

    rank = 1 + #(strictly higher scores) + #(tied scores with smaller id).
    """
    scores = np.asarray(scores, dtype=np.float64)
    candidate_ids = np.asarray(candidate_ids)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    pos = np.nonzero(candidate_ids == test_item)[0]
    if len(pos) == 0:
        raise ValueError(f"test item {test_item} not among candidates")
    s = scores[pos[0]]
    higher = int(np.sum(scores > s))
    tied_smaller = int(
        np.sum((scores == s) & (candidate_ids < test_item))
    )
    return 1 + higher + tied_smaller


def hr_at_k(rank: int, K: int) -> int:
    if rank < 1:
        raise ValueError("rank is 1-based")
    return 1 if rank <= K else 0


def ndcg_at_k(rank: int, K: int) -> float:
    if rank < 1:
        raise ValueError("rank is 1-based")
    if rank > K:
        return 0.0
    return 1.0 / math.log2(rank + 1.0)


def evaluate_all(states, ks=(5, 10), which: str = "test") -> MetricRecord:
    """Score every client with its own (p, local table) and average.

    ``which`` selects the held-out item: 'test' or 'validation'. States are
    read-only; the reduction order is fixed (client index) for determinism.
    """
    ks = tuple(ks)
    hr_totals = {k: 0.0 for k in ks}
    ndcg_totals = {k: 0.0 for k in ks}
    for state in states:
        candidates = state.split.candidates_for(which)
        held_out = candidates[-1]
        scores = state.local_table[candidates] @ state.user_vec
        rank = rank_test_item(scores, candidates, held_out)
        for k in ks:
            hr_totals[k] += hr_at_k(rank, k)
            ndcg_totals[k] += ndcg_at_k(rank, k)
    n = len(states)
    return MetricRecord(
        round_index=-1,
        hr={k: hr_totals[k] / n for k in ks},
        ndcg={k: ndcg_totals[k] / n for k in ks},
        train_loss=float("nan"),
    )
