"""OSPA set-to-set distance with localization/cardinality split.

The distance between point sets X and Y (|X| = m <= n = |Y| after an
internal swap) cuts pairwise distances at ``c``, solves the optimal
assignment of the smaller set into the larger, and combines:

    ospa = ( (1/n) * (sum_i d_i^p + c^p (n - m)) )^(1/p)

The localization and cardinality parts are reported from the same
assignment, so for p = 1 they add up to the total exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(slots=True)
class OspaConfig:
    c: float = 25.0   # cut-off distance (m)
    p: float = 1.0    # order

    def __post_init__(self):
        if self.c <= 0 or self.p < 1:
            raise ValueError("require c > 0 and p >= 1")


@dataclass(slots=True)
class OspaResult:
    ospa: float
    loc: float
    card: float


def ospa(X, Y, cfg: OspaConfig | None = None) -> OspaResult:
    """OSPA distance between two point sets (rows are points)."""
    cfg = cfg or OspaConfig()
    A = np.atleast_2d(np.asarray(X, dtype=float)) if len(X) else np.zeros((0, 1))
    B = np.atleast_2d(np.asarray(Y, dtype=float)) if len(Y) else np.zeros((0, 1))
    if len(A) > len(B):
        A, B = B, A
    m, n = len(A), len(B)
    if n == 0:
        return OspaResult(0.0, 0.0, 0.0)
    if m == 0:
        return OspaResult(cfg.c, 0.0, cfg.c)
    diff = A[:, None, :] - B[None, :, :]
    d = np.minimum(np.sqrt(np.sum(diff * diff, axis=2)), cfg.c)
    rows, cols = linear_sum_assignment(d ** cfg.p)
    loc_pow = float(np.sum(d[rows, cols] ** cfg.p))
    card_pow = cfg.c ** cfg.p * (n - m)
    return OspaResult(
        ((loc_pow + card_pow) / n) ** (1.0 / cfg.p),
        (loc_pow / n) ** (1.0 / cfg.p),
        (card_pow / n) ** (1.0 / cfg.p),
    )
