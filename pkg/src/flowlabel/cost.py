"""Pairwise matching cost from coordinate, color and normal measures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PointCloud

MEASURES = ("coordinate", "color", "normal")


@dataclass(frozen=True)
class CostParams:
    """Bandwidths and enabled measures for :func:`build_cost_matrix`.

    ``theta_d`` is in meters, ``theta_c`` in unit-normalized RGB. The
    coordinate measure cannot be disabled.
    """

    theta_d: float = 1.75
    theta_c: float = 0.2
    measures: tuple = MEASURES

    def __post_init__(self):
        if not self.theta_d > 0 or not self.theta_c > 0:
            raise ValueError("theta_d and theta_c must be positive")
        measures = tuple(m for m in MEASURES if m in set(self.measures))
        unknown = set(self.measures) - set(MEASURES)
        if unknown:
            raise ValueError(f"unknown measures: {sorted(unknown)}")
        if "coordinate" not in measures:
            raise ValueError("the coordinate measure is always required")
        object.__setattr__(self, "measures", measures)

    @classmethod
    def parse_measures(cls, text: str, **kwargs) -> "CostParams":
        """Build from a comma list such as ``"coord,color,normal"``."""
        alias = {"coord": "coordinate", "norm": "normal", "normals": "normal"}
        names = [alias.get(t.strip(), t.strip()) for t in text.split(",") if t.strip()]
        return cls(measures=tuple(names), **kwargs)


def _gaussian_cost(sq_dist, theta):
    # 1 - exp(-x) loses precision near 0; -expm1 keeps small costs exact
    return -np.expm1(-np.asarray(sq_dist) / (2.0 * theta * theta))


def coordinate_cost(p, q, theta_d: float) -> float:
    """Gaussian coordinate cost ``1 - exp(-|p-q|^2 / (2 theta_d^2))``."""
    if not theta_d > 0:
        raise ValueError("theta_d must be positive")
    d = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return float(_gaussian_cost(d @ d, theta_d))


def color_cost(c1, c2, theta_c: float) -> float:
    if not theta_c > 0:
        raise ValueError("theta_c must be positive")
    d = np.asarray(c1, dtype=np.float64) - np.asarray(c2, dtype=np.float64)
    return float(_gaussian_cost(d @ d, theta_c))


def normal_cost(n1, n2, valid1: bool = True, valid2: bool = True) -> float:
    """Sign-invariant cosine cost ``1 - |n1.n2| / (|n1||n2|)``.

    Returns 1 when either normal is flagged invalid or has zero length.
    """
    if not (valid1 and valid2):
        return 1.0
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    denom = np.linalg.norm(n1) * np.linalg.norm(n2)
    if denom == 0:
        return 1.0
    return float(min(1.0, max(0.0, 1.0 - abs(n1 @ n2) / denom)))


def pairwise_sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact ``|a_i - b_j|^2`` for small feature dimension, shape (n_a, n_b)."""
    out = np.zeros((len(a), len(b)))
    for dim in range(a.shape[1]):
        diff = a[:, dim, None] - b[None, :, dim]
        out += diff * diff
    return out


def build_cost_matrix(a: PointCloud, b: PointCloud, params: CostParams = CostParams()) -> np.ndarray:
    """Dense ``(n_a, n_b)`` cost: sum of the enabled per-measure costs.

    Raises
    ------
    ValueError
        If color or normal is enabled but either cloud lacks that attribute.
    """
    cost = _gaussian_cost(pairwise_sq_dist(a.positions, b.positions), params.theta_d)
    if "color" in params.measures:
        if not (a.has_colors and b.has_colors):
            raise ValueError("color measure enabled but a cloud has no colors")
        cost += _gaussian_cost(pairwise_sq_dist(a.colors, b.colors), params.theta_c)
    if "normal" in params.measures:
        if not (a.has_normals and b.has_normals):
            raise ValueError("normal measure enabled but a cloud has no normals")
        cost += normal_cost_matrix(a.normals, b.normals, a.normal_valid, b.normal_valid)
    return cost


def normal_cost_matrix(na, nb, valid_a=None, valid_b=None) -> np.ndarray:
    """Vectorized :func:`normal_cost` over all pairs."""
    na = np.asarray(na, dtype=np.float64)
    nb = np.asarray(nb, dtype=np.float64)
    len_a = np.linalg.norm(na, axis=1)
    len_b = np.linalg.norm(nb, axis=1)
    ok_a = len_a > 0 if valid_a is None else (np.asarray(valid_a) & (len_a > 0))
    ok_b = len_b > 0 if valid_b is None else (np.asarray(valid_b) & (len_b > 0))
    unit_a = na / np.where(len_a > 0, len_a, 1.0)[:, None]
    unit_b = nb / np.where(len_b > 0, len_b, 1.0)[:, None]
    cost = np.clip(1.0 - np.abs(unit_a @ unit_b.T), 0.0, 1.0)
    cost[~ok_a, :] = 1.0
    cost[:, ~ok_b] = 1.0
    return cost
