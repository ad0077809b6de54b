"""End-to-end pseudo-label generation and refinement."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import FlowField, PointCloud, PseudoLabelSet, prewarp
from .cost import CostParams, build_cost_matrix
from .sinkhorn import (
    DEFAULT_MAX_DISPLACEMENT,
    SinkhornParams,
    extract_labels,
    greedy_search,
    harden,
    labels_from_points,
    sinkhorn,
    soft_match,
)
from .walk import (
    RandomWalkParams,
    directed_from_points,
    naive_smooth,
    propagate_directed,
    refine,
    undirected_from_points,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("hard", "soft", "greedy")
SOURCES = ("raw", "prewarp")
REFINEMENTS = ("off", "naive", "walk", "full")
DEFAULT_NAIVE_K = 16


@dataclass(frozen=True)
class PipelineConfig:
    """Every switch of the labeling pipeline.

    ``strategy`` is ``"hard"`` (plan argmax), ``"soft"`` (plan-weighted
    barycenter) or ``"greedy"`` (per-row cheapest target, no transport
    constraints). ``refinement`` is ``"off"``, ``"naive"`` (k-NN mean),
    ``"walk"`` (undirected walk on labeled points only) or ``"full"`` (walk
    plus propagation to unlabeled points).
    """

    cost: CostParams = field(default_factory=CostParams)
    sinkhorn: SinkhornParams = field(default_factory=SinkhornParams)
    walk: RandomWalkParams = field(default_factory=RandomWalkParams)
    max_displacement: float = DEFAULT_MAX_DISPLACEMENT
    strategy: str = "hard"
    source: str = "raw"
    refinement: str = "full"
    naive_k: int = DEFAULT_NAIVE_K

    def __post_init__(self):
        if not self.max_displacement > 0:
            raise ValueError("max_displacement must be positive")
        for name, allowed in (("strategy", STRATEGIES), ("source", SOURCES),
                              ("refinement", REFINEMENTS)):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.naive_k < 1:
            raise ValueError("naive_k must be at least 1")


@dataclass(frozen=True, eq=False)
class LabelReport:
    labels: PseudoLabelSet
    labeled_count: int
    unlabeled_count: int
    transport_cost_total: float
    timings_ms: dict
    refinement_applied: str
    warnings: tuple = ()
    # stage-5 labels before any refinement
    initial_labels: Optional[PseudoLabelSet] = None

    def __eq__(self, other):
        if not isinstance(other, LabelReport):
            return NotImplemented
        return (np.array_equal(self.labels.labels, other.labels.labels)
                and np.array_equal(self.labels.valid, other.labels.valid)
                and self.labeled_count == other.labeled_count
                and self.transport_cost_total == other.transport_cost_total
                and self.refinement_applied == other.refinement_applied)


class _Timer:
    def __init__(self):
        self.ms = {}

    def __call__(self, name):
        timer = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.ms[name] = timer.ms.get(name, 0.0) + 1e3 * (time.perf_counter() - self.t0)

        return _Span()


def generate_labels(P: PointCloud, Q: PointCloud, F_pred: Optional[FlowField] = None,
                    config: PipelineConfig = PipelineConfig()) -> LabelReport:
    """Produce refined pseudo labels for every point of ``P``.

    Stages: optional pre-warp of ``P`` by ``F_pred``, cost matrix, transport
    plan, correspondences, displacement-filtered labels measured from the
    original ``P``, then the configured refinement.

    With fewer than two valid labels any refinement is skipped and a warning
    is recorded in the report.
    """
    timer = _Timer()
    if config.source == "prewarp":
        if F_pred is None:
            raise ValueError("source='prewarp' requires a predicted flow")
        with timer("prewarp"):
            source = prewarp(P, F_pred)
    else:
        source = P

    with timer("cost"):
        C = build_cost_matrix(source, Q, config.cost)

    if config.strategy == "greedy":
        with timer("match"):
            corr = greedy_search(C)
            total = float(C[np.arange(len(C)), corr.target_index].sum() / len(C))
        with timer("extract"):
            initial = extract_labels(P, Q, corr, config.max_displacement)
    else:
        with timer("transport"):
            plan = sinkhorn(C, config.sinkhorn)
            total = plan.total_cost(C)
        with timer("extract"):
            if config.strategy == "hard":
                initial = extract_labels(P, Q, harden(plan), config.max_displacement)
            else:
                initial = labels_from_points(P, soft_match(plan, Q), config.max_displacement)

    labels, applied, warnings = _refine(P, initial, config, timer)
    return LabelReport(
        labels=labels,
        labeled_count=initial.n_valid,
        unlabeled_count=len(P) - initial.n_valid,
        transport_cost_total=total,
        timings_ms=dict(timer.ms),
        refinement_applied=applied,
        warnings=tuple(warnings),
        initial_labels=initial,
    )


def _refine(P, initial: PseudoLabelSet, config, timer):
    mode = config.refinement
    if mode == "off":
        return initial, "off", []
    labeled = initial.labeled_index
    if len(labeled) < 2:
        msg = f"only {len(labeled)} valid labels; refinement '{mode}' skipped"
        logger.warning(msg)
        return initial, "off", [msg]

    pts = P.positions
    if mode == "naive":
        k = min(config.naive_k, len(labeled))
        with timer("refine"):
            smoothed = naive_smooth(pts[labeled], initial.labels[labeled], k)
        out = np.zeros_like(initial.labels)
        out[labeled] = smoothed
        return PseudoLabelSet(out, initial.valid), mode, []

    with timer("refine"):
        A1 = undirected_from_points(pts[labeled], config.walk.theta_r)
        refined = refine(A1, initial.labels[labeled], config.walk)
    out = np.zeros_like(initial.labels)
    out[labeled] = refined
    valid = initial.valid.copy()
    if mode == "full":
        unlabeled = initial.unlabeled_index
        with timer("propagate"):
            A2 = directed_from_points(pts[unlabeled], pts[labeled], config.walk.theta_r)
            out[unlabeled] = propagate_directed(A2, refined)
        valid[:] = True
    return PseudoLabelSet(out, valid), mode, []


def training_loss(labels: PseudoLabelSet, F_pred) -> float:
    """Mean Euclidean distance between valid labels and the prediction.

    Returns 0.0 when no label is valid; use :func:`training_loss_report` to
    tell that case apart.
    """
    return training_loss_report(labels, F_pred)[0]


def training_loss_report(labels: PseudoLabelSet, F_pred):
    pred = F_pred.vectors if isinstance(F_pred, FlowField) else np.asarray(F_pred, dtype=np.float64)
    if pred.shape != labels.labels.shape:
        raise ValueError("labels and prediction differ in length")
    if labels.n_valid == 0:
        return 0.0, True
    diff = labels.labels[labels.valid] - pred[labels.valid]
    return float(np.linalg.norm(diff, axis=1).mean()), False


def self_label_round(P: PointCloud, Q: PointCloud, F_pred: FlowField,
                     config: PipelineConfig = PipelineConfig()):
    """Label with ``F_pred`` as the pre-warp and score ``F_pred`` against them.

    Returns ``(LabelReport, loss)``.
    """
    report = generate_labels(P, Q, F_pred, replace(config, source="prewarp"))
    return report, training_loss(report.labels, F_pred)
