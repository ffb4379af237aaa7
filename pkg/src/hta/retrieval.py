"""Similarity, dual-softmax re-scoring, and retrieval metrics (R@K, MdR, MnR).

Ground truth is the diagonal of a square similarity matrix. Ranks break ties
pessimistically: a candidate tying with the ground-truth score counts ahead
of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RetrievalReport:
    r1: float
    r5: float
    r10: float
    avg: float
    mdr: float
    mnr: float

    def as_dict(self) -> dict:
        return {"R@1": self.r1, "R@5": self.r5, "R@10": self.r10,
                "Avg": self.avg, "MdR": self.mdr, "MnR": self.mnr}


def similarity(queries: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Pairwise dot products of unit-norm rows: [Q, D] x [C, D] -> [Q, C]."""
    q = np.asarray(queries, dtype=np.float64)
    c = np.asarray(candidates, dtype=np.float64)
    if q.ndim != 2 or c.ndim != 2 or q.shape[1] != c.shape[1]:
        raise ValueError(f"embedding dims differ: {q.shape} vs {c.shape}")
    return q @ c.T


def dual_softmax(s: np.ndarray, alpha: float = 100.0) -> np.ndarray:
    """Elementwise product of row-softmax(alpha*S) and column-softmax(alpha*S);
    inference-time re-scoring only."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"dual_softmax needs a square matrix, got {s.shape}")
    z = alpha * s
    row = np.exp(z - z.max(axis=1, keepdims=True))
    row /= row.sum(axis=1, keepdims=True)
    col = np.exp(z - z.max(axis=0, keepdims=True))
    col /= col.sum(axis=0, keepdims=True)
    return row * col


def ranks(s: np.ndarray) -> np.ndarray:
    """Pessimistic rank of the diagonal entry within each row."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"paired evaluation needs a square matrix, got {s.shape}")
    if not np.isfinite(s).all():
        raise ValueError("similarity matrix contains non-finite entries")
    diag = np.diag(s)
    beat = s >= diag[:, None]
    np.fill_diagonal(beat, False)
    return 1 + beat.sum(axis=1)


def metrics_from_ranks(r: np.ndarray) -> RetrievalReport:
    r = np.asarray(r)
    if r.ndim != 1 or len(r) == 0 or (r < 1).any():
        raise ValueError("ranks must be a non-empty 1-D array of values >= 1")
    q = len(r)

    def recall(k):
        return 100.0 * float((r <= k).sum()) / q

    r1, r5, r10 = recall(1), recall(5), recall(10)
    order = np.sort(r)
    mdr = float(order[(q - 1) // 2])   # lower of the two middles for even Q
    return RetrievalReport(r1, r5, r10, (r1 + r5 + r10) / 3.0, mdr,
                           float(r.mean()))


def evaluate(s: np.ndarray) -> RetrievalReport:
    return metrics_from_ranks(ranks(s))
