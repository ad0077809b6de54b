"""Random-walk refinement and propagation of pseudo labels.

Labels are ``(n, 3)`` arrays; every function here also accepts a
:class:`~flowlabel.core.FlowField` wherever a label array is expected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .core import FlowField
from .cost import pairwise_sq_dist
from .features import knn_table

INFINITE = math.inf


@dataclass(frozen=True)
class RandomWalkParams:
    """``steps`` is a positive int for the iterative walk or ``math.inf``
    for the closed-form limit."""

    theta_r: float = 0.75
    alpha: float = 0.5
    steps: Union[int, float] = INFINITE

    def __post_init__(self):
        if not self.theta_r > 0:
            raise ValueError("theta_r must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.closed_form:
            if self.alpha >= 1.0:
                raise ValueError("closed-form walk needs alpha < 1")
        elif int(self.steps) != self.steps or self.steps < 0:
            raise ValueError("steps must be a non-negative integer or inf")

    @property
    def closed_form(self) -> bool:
        return math.isinf(self.steps)


def _vectors(x) -> np.ndarray:
    if isinstance(x, FlowField):
        return x.vectors
    arr = np.asarray(x, dtype=np.float64)
    return arr.reshape(-1, 3) if arr.size == 0 else arr


def affinity(points_a, points_b, theta_r: float) -> np.ndarray:
    """Gaussian affinity ``exp(-|a_i - b_j|^2 / (2 theta_r^2))``."""
    if not theta_r > 0:
        raise ValueError("theta_r must be positive")
    a = _vectors(points_a)
    b = _vectors(points_b)
    with np.errstate(under="ignore"):
        return np.exp(-pairwise_sq_dist(a, b) / (2.0 * theta_r * theta_r))


def transition_undirected(W) -> np.ndarray:
    """Row-normalize an affinity matrix over off-diagonal entries.

    The diagonal of the result is exactly zero.

    Raises
    ------
    ValueError
        For a node whose off-diagonal affinities sum to zero (fewer than two
        labeled nodes, or theta_r far too small for the point spacing).
    """
    W = np.array(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("undirected transition needs a square affinity matrix")
    np.fill_diagonal(W, 0.0)
    totals = W.sum(axis=1)
    if np.any(totals <= 0):
        raise ValueError("isolated node: off-diagonal affinity sum is zero")
    return W / totals[:, None]


def transition_directed(W) -> np.ndarray:
    """Row-normalize an unlabeled-to-labeled affinity over all columns."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError("affinity must be a matrix")
    if W.shape[0] == 0:
        return W.copy()
    totals = W.sum(axis=1)
    if np.any(totals <= 0):
        raise ValueError("unlabeled node has zero affinity to every labeled node")
    return W / totals[:, None]


def _log_affinity(points_a, points_b, theta_r):
    return -pairwise_sq_dist(_vectors(points_a), _vectors(points_b)) / (2.0 * theta_r * theta_r)


def _normalize_log(logw):
    # softmax equals W / sum(W) but cannot produce an all-zero row through underflow
    out = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
    return out / out.sum(axis=1, keepdims=True)


def undirected_from_points(points, theta_r: float) -> np.ndarray:
    """Undirected transition matrix over labeled points, computed stably."""
    if not theta_r > 0:
        raise ValueError("theta_r must be positive")
    pts = _vectors(points)
    if len(pts) < 2:
        raise ValueError("undirected walk needs at least two labeled points")
    logw = _log_affinity(pts, pts, theta_r)
    np.fill_diagonal(logw, -np.inf)
    A = _normalize_log(logw)
    np.fill_diagonal(A, 0.0)
    return A


def directed_from_points(unlabeled, labeled, theta_r: float) -> np.ndarray:
    """Directed ``(n_s, n_m)`` transition matrix, computed stably."""
    if not theta_r > 0:
        raise ValueError("theta_r must be positive")
    src = _vectors(unlabeled)
    dst = _vectors(labeled)
    if len(dst) == 0:
        raise ValueError("directed walk needs at least one labeled point")
    if len(src) == 0:
        return np.zeros((0, len(dst)))
    return _normalize_log(_log_affinity(src, dst, theta_r))


def refine_iterative(A1, D0, alpha: float, steps: int) -> np.ndarray:
    """Apply ``D <- alpha A1 D + (1 - alpha) D0`` ``steps`` times from ``D0``."""
    A1 = np.asarray(A1, dtype=np.float64)
    D0 = _vectors(D0)
    D = D0.copy()
    keep = (1.0 - alpha) * D0
    for _ in range(int(steps)):
        D = alpha * (A1 @ D) + keep
    return D


def refine_closed_form(A1, D0, alpha: float) -> np.ndarray:
    """Infinite-step limit ``(1 - alpha) (I - alpha A1)^-1 D0``.

    Solved with an LU factorization (partial pivoting); the inverse is never
    formed.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("closed-form refinement needs 0 <= alpha < 1")
    A1 = np.asarray(A1, dtype=np.float64)
    D0 = _vectors(D0)
    if len(D0) == 0:
        return D0.copy()
    system = np.eye(len(A1)) - alpha * A1
    try:
        return scipy.linalg.solve(system, (1.0 - alpha) * D0, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise np.linalg.LinAlgError("random-walk system is singular") from exc


def refine(A1, D0, params: RandomWalkParams) -> np.ndarray:
    if params.closed_form:
        return refine_closed_form(A1, D0, params.alpha)
    return refine_iterative(A1, D0, params.alpha, int(params.steps))


def propagate_directed(A2, refined) -> np.ndarray:
    """Labels for unlabeled points as ``A2 @ refined``."""
    A2 = np.asarray(A2, dtype=np.float64)
    refined = _vectors(refined)
    if A2.ndim != 2 or A2.shape[1] != len(refined):
        raise ValueError(
            f"transition has {A2.shape[-1]} columns but {len(refined)} labeled points were given"
        )
    return A2 @ refined


def naive_smooth(points, labels, k: int) -> np.ndarray:
    """Replace each label by the mean label of its k nearest points (self included)."""
    pts = _vectors(points)
    lab = _vectors(labels)
    if len(pts) != len(lab):
        raise ValueError("points and labels differ in length")
    if k > len(pts):
        raise ValueError(f"k={k} exceeds point count {len(pts)}")
    if k < 1:
        raise ValueError("k must be at least 1")
    nbrs = knn_table(pts, k, self_first=True)
    return lab[nbrs].mean(axis=1)
