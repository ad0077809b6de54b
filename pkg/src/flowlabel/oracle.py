"""Exact linear assignment, used only to verify the entropic solver."""
from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .sinkhorn import CorrespondenceSet

EXHAUSTIVE_MAX_N = 8
ORACLE_MAX_N = 64


def _square(cost) -> np.ndarray:
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"assignment oracle needs a square matrix, got shape {C.shape}")
    if C.shape[0] > ORACLE_MAX_N:
        raise ValueError(f"oracle is limited to n <= {ORACLE_MAX_N}")
    return C


@lru_cache(maxsize=None)
def _permutations(n: int) -> np.ndarray:
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    perms.setflags(write=False)
    return perms


def _enumerate_totals(cost):
    C = _square(cost)
    n = len(C)
    if n > EXHAUSTIVE_MAX_N:
        raise ValueError(f"exhaustive search is limited to n <= {EXHAUSTIVE_MAX_N}")
    perms = _permutations(n)
    return perms, C[np.arange(n)[None, :], perms].sum(axis=1)


def exhaustive_assignment(cost):
    """Best permutation by enumerating all n! candidates (n <= 8).

    Ties keep the lexicographically first permutation.
    """
    perms, totals = _enumerate_totals(cost)
    best = int(np.argmin(totals))
    return CorrespondenceSet.from_targets(perms[best].copy()), float(totals[best])


def ranked_assignment_costs(cost, top: int = 2) -> np.ndarray:
    """The ``top`` smallest assignment totals by enumeration (n <= 8)."""
    _, totals = _enumerate_totals(cost)
    return np.sort(totals)[:top]


def exact_assignment(cost):
    """Minimum-cost perfect matching of a square cost matrix.

    Uses exhaustive enumeration for n <= 8 and the shortest augmenting path
    solver from scipy for 8 < n <= 64.

    Returns
    -------
    (CorrespondenceSet, float)
        The permutation as a correspondence set and its total cost.
    """
    C = _square(cost)
    if len(C) <= EXHAUSTIVE_MAX_N:
        return exhaustive_assignment(C)
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(len(C), dtype=np.intp)
    perm[rows] = cols
    return CorrespondenceSet.from_targets(perm), float(C[rows, cols].sum())


def polynomial_assignment(cost):
    """scipy's solver at any n <= 64, exposed for cross-checking."""
    C = _square(cost)
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(len(C), dtype=np.intp)
    perm[rows] = cols
    return CorrespondenceSet.from_targets(perm), float(C[rows, cols].sum())
