"""Geometric data types shared by every stage of the labeling pipeline.

Arrays are stored as float64 ``(n, 3)`` numpy arrays and marked read-only
after construction, so instances can be shared freely between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

NORMAL_TOLERANCE = 1e-6


def _as_vectors(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """One frame of points with optional per-point color and normal.

    Parameters
    ----------
    positions : array_like, shape (n, 3)
        Coordinates in meters.
    colors : array_like, shape (n, 3), optional
        RGB in [0, 1] per channel.
    normals : array_like, shape (n, 3), optional
        Unit normals. Rows flagged False in ``normal_valid`` hold zeros.
    normal_valid : array_like of bool, shape (n,), optional
        Defaults to all True when ``normals`` is given.
    """

    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    normal_valid: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "positions", _as_vectors(self.positions, "positions"))
        if self.colors is not None:
            object.__setattr__(self, "colors", _as_vectors(self.colors, "colors"))
        if self.normals is not None:
            object.__setattr__(self, "normals", _as_vectors(self.normals, "normals"))
            if self.normal_valid is None:
                valid = np.ones(len(self.normals), dtype=bool)
            else:
                valid = np.array(self.normal_valid, dtype=bool).reshape(-1)
            valid.setflags(write=False)
            object.__setattr__(self, "normal_valid", valid)
        elif self.normal_valid is not None:
            raise ValueError("normal_valid given without normals")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def has_colors(self) -> bool:
        return self.colors is not None

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def with_positions(self, positions) -> "PointCloud":
        return replace(self, positions=positions)

    def with_normals(self, normals, valid=None) -> "PointCloud":
        return replace(self, normals=normals, normal_valid=valid)

    def subset(self, index) -> "PointCloud":
        """Return the cloud restricted to ``index`` (mask or integer array)."""
        pick = lambda a: None if a is None else a[index]  # noqa: E731
        return PointCloud(
            self.positions[index],
            pick(self.colors),
            pick(self.normals),
            pick(self.normal_valid),
        )


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-point displacement vectors in meters."""

    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vectors", _as_vectors(self.vectors, "vectors"))
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("flow vectors must be finite")

    def __len__(self) -> int:
        return len(self.vectors)

    @classmethod
    def zeros(cls, n: int) -> "FlowField":
        return cls(np.zeros((n, 3)))

    def __neg__(self) -> "FlowField":
        return FlowField(-self.vectors)


@dataclass(frozen=True, eq=False)
class PseudoLabelSet:
    """Flow labels plus a validity mask.

    Invalid rows are stored as zero vectors and must only be read through
    ``valid``.
    """

    labels: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.float64)
        if labels.ndim == 1 and labels.size == 0:
            labels = labels.reshape(0, 3)
        if labels.ndim != 2 or labels.shape[1] != 3:
            raise ValueError(f"labels must have shape (n, 3), got {labels.shape}")
        if self.valid is None:
            valid = np.ones(len(labels), dtype=bool)
        else:
            valid = np.array(self.valid, dtype=bool).reshape(-1)
        if len(valid) != len(labels):
            raise ValueError("labels and valid differ in length")
        if not np.all(np.isfinite(labels[valid])):
            raise ValueError("valid labels must be finite")
        labels[~valid] = 0.0
        labels.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "valid", valid)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def labeled_index(self) -> np.ndarray:
        return np.flatnonzero(self.valid)

    @property
    def unlabeled_index(self) -> np.ndarray:
        return np.flatnonzero(~self.valid)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @classmethod
    def all_invalid(cls, n: int) -> "PseudoLabelSet":
        return cls(np.zeros((n, 3)), np.zeros(n, dtype=bool))


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_cloud(cloud: PointCloud) -> ValidationReport:
    """Check a cloud against its invariants without raising.

    Returns a report whose ``violations`` is a tuple of short messages such as
    ``"non-finite coordinate"`` or ``"color out of range"``.
    """
    problems = []
    n = len(cloud.positions)
    if n == 0:
        problems.append("empty cloud")
    if not np.all(np.isfinite(cloud.positions)):
        problems.append("non-finite coordinate")
    if cloud.colors is not None:
        if len(cloud.colors) != n:
            problems.append("color length mismatch")
        elif not np.all(np.isfinite(cloud.colors)) or np.any(
            (cloud.colors < 0.0) | (cloud.colors > 1.0)
        ):
            problems.append("color out of range")
    if cloud.normals is not None:
        if len(cloud.normals) != n or len(cloud.normal_valid) != n:
            problems.append("normal length mismatch")
        else:
            norms = np.linalg.norm(cloud.normals[cloud.normal_valid], axis=1)
            if np.any(np.abs(norms - 1.0) > NORMAL_TOLERANCE) or not np.all(
                np.isfinite(norms)
            ):
                problems.append("normal not unit length")
    return ValidationReport(tuple(problems))


def prewarp(cloud: PointCloud, flow: FlowField) -> PointCloud:
    """Translate every point of ``cloud`` by its flow vector.

    Colors and normals are carried over untouched.
    """
    if len(flow) != len(cloud):
        raise ValueError(
            f"flow length {len(flow)} does not match cloud size {len(cloud)}"
        )
    return cloud.with_positions(cloud.positions + flow.vectors)
