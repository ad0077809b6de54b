"""Nearest-neighbor queries and PCA surface normals."""
from __future__ import annotations

import numpy as np

from .core import PointCloud

DEFAULT_K = 16
ISOTROPY_RATIO = 0.9
# middle/largest eigenvalue ratio under which a neighborhood counts as a line
COLLINEAR_RATIO = 1e-9

_BLOCK_ELEMENTS = 2_000_000


def _points(cloud_or_points) -> np.ndarray:
    if isinstance(cloud_or_points, PointCloud):
        return cloud_or_points.positions
    return np.asarray(cloud_or_points, dtype=np.float64).reshape(-1, 3)


def knn_indices(cloud, query, k: int) -> np.ndarray:
    """Indices of the ``k`` points nearest to ``query``.

    Sorted by ascending Euclidean distance; equal distances keep the lower
    index first.
    """
    pts = _points(cloud)
    if k > len(pts):
        raise ValueError(f"k={k} exceeds cloud size {len(pts)}")
    if k < 0:
        raise ValueError("k must be non-negative")
    d2 = np.sum((pts - np.asarray(query, dtype=np.float64)) ** 2, axis=1)
    return np.argsort(d2, kind="stable")[:k]


def knn_table(points, k: int, queries=None, self_first: bool = False) -> np.ndarray:
    """k-NN indices for every query row (defaults to ``points`` itself).

    Exact brute force over chunks of queries, with the same ordering rule as
    :func:`knn_indices`. Returns an ``(m, k)`` integer array. With
    ``self_first`` each point is its own first neighbor even when another
    point coincides with it.
    """
    pts = _points(points)
    qs = pts if queries is None else _points(queries)
    if k > len(pts):
        raise ValueError(f"k={k} exceeds cloud size {len(pts)}")
    out = np.empty((len(qs), k), dtype=np.intp)
    # direct differences (not the expanded dot-product form) keep ties exact
    chunk = max(1, _BLOCK_ELEMENTS // max(len(pts), 1))
    for start in range(0, len(qs), chunk):
        block = qs[start : start + chunk]
        d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        if self_first and queries is None:
            rows = np.arange(len(block))
            d2[rows, start + rows] = -1.0
        out[start : start + len(block)] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def _neighborhood_eigen(pts: np.ndarray, neighbors: np.ndarray):
    local = pts[neighbors]
    centered = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / neighbors.shape[1]
    return np.linalg.eigh(cov)


def estimate_normals(cloud: PointCloud, k: int = DEFAULT_K) -> PointCloud:
    """Attach PCA normals computed from each point's k-neighborhood.

    The normal is the eigenvector of the neighborhood covariance with the
    smallest eigenvalue. Its sign is arbitrary. A point is flagged invalid
    when the neighborhood has no dominant plane: smallest/largest eigenvalue
    ratio above 0.9, a line-like (rank-1) or fully collapsed neighborhood.

    Parameters
    ----------
    cloud : PointCloud
    k : int
        Neighborhood size including the point itself, ``k >= 3``.

    Returns
    -------
    PointCloud
        Copy of ``cloud`` with ``normals`` and ``normal_valid`` set.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    if len(cloud) < k:
        raise ValueError(f"cloud has {len(cloud)} points, fewer than k={k}")
    pts = cloud.positions
    neighbors = knn_table(pts, k)
    evals, evecs = _neighborhood_eigen(pts, neighbors)
    normals = evecs[:, :, 0].copy()
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    largest = evals[:, 2]
    scale = np.where(largest > 0, largest, 1.0)
    isotropic = evals[:, 0] / scale > ISOTROPY_RATIO
    line_like = evals[:, 1] / scale <= COLLINEAR_RATIO
    valid = (largest > 0) & ~isotropic & ~line_like
    normals[~valid] = 0.0
    return cloud.with_normals(normals, valid)


def eigenvalue_ratio(points, neighbors) -> np.ndarray:
    """Smallest/largest covariance eigenvalue ratio per neighborhood row."""
    evals, _ = _neighborhood_eigen(_points(points), np.atleast_2d(neighbors))
    return evals[:, 0] / np.where(evals[:, 2] > 0, evals[:, 2], 1.0)
