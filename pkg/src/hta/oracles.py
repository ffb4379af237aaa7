"""Independent brute-force oracles: entry-by-entry mask predicates and a
sort-based retrieval ranker. Deliberately written with explicit loops so they
share no code path with the vectorized constructors they check."""

from __future__ import annotations

import numpy as np

from .masks import TokenLayout
from .tape import MASK_NEG


def reference_slt_mask(layout: TokenLayout) -> np.ndarray:
    tn = layout.T * layout.N
    out = np.empty((tn, tn))
    for i in range(tn):
        for j in range(tn):
            out[i, j] = 0.0 if abs(j - i) % layout.N == 0 else MASK_NEG
    return out


def reference_stacked_mask(layout: TokenLayout,
                           mst_self_direction: str = "finer_or_equal") -> np.ndarray:
    """Square global mask, rows [cls; mst; patch], evaluated predicate by
    predicate. Patch and [MST] rows never attend the [CLS] column."""
    s = layout.seq_len
    uv = layout.num_mst
    n = layout.N
    out = np.full((s, s), MASK_NEG)

    def col_kind(j):
        if j == 0:
            return "cls", 0
        if j <= uv:
            return "mst", j - 1
        return "patch", j - 1 - uv

    out[0, :] = 0.0                                   # [CLS] attends everything
    for row in range(1, s):
        if row <= uv:                                 # [MST] row
            i = row - 1
            level = i // layout.V
            for j in range(s):
                kind, k = col_kind(j)
                if kind == "mst":
                    other = k // layout.V
                    if mst_self_direction == "finer_or_equal":
                        allowed = level >= other
                    else:
                        allowed = level <= other
                    if allowed:
                        out[row, j] = 0.0
                elif kind == "patch":
                    if (k // n) % (layout.r ** level) == 0:
                        out[row, j] = 0.0
        else:                                         # patch row
            i = row - 1 - uv
            for j in range(s):
                kind, k = col_kind(j)
                if kind == "mst":
                    out[row, j] = 0.0
                elif kind == "patch" and k // n == i // n:
                    out[row, j] = 0.0
    return out


def brute_force_ranks(s: np.ndarray) -> np.ndarray:
    """Pessimistic ground-truth ranks by explicitly sorting each row with ties
    ordered against the diagonal entry."""
    s = np.asarray(s, dtype=np.float64)
    q = s.shape[0]
    ranks = np.empty(q, dtype=np.int64)
    for i in range(q):
        # score descending; among equal scores the ground truth sorts last
        order = sorted(range(q), key=lambda j: (-s[i, j], 1 if j == i else 0))
        ranks[i] = order.index(i) + 1
    return ranks
