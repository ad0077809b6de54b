"""Scene-flow accuracy metrics: EPE, AS, AR and Out."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import FlowField, PseudoLabelSet

STRICT_ABS, STRICT_REL = 0.05, 0.05
RELAXED_ABS, RELAXED_REL = 0.1, 0.1
OUTLIER_ABS, OUTLIER_REL = 0.3, 0.1
GT_NORM_FLOOR = 1e-8


@dataclass(frozen=True)
class MetricReport:
    epe: float
    as_pct: float
    ar_pct: float
    out_pct: float
    point_count: int

    def as_dict(self) -> dict:
        return asdict(self)

    def to_lines(self) -> str:
        """Machine-readable ``key=value`` lines (see :func:`parse_report`)."""
        return "\n".join(f"{k}={v!r}" for k, v in asdict(self).items()) + "\n"

    def to_table(self) -> str:
        head = f"{'EPE(m)':>10} {'AS(%)':>8} {'AR(%)':>8} {'Out(%)':>8} {'points':>8}"
        row = (f"{self.epe:>10.4f} {self.as_pct:>8.2f} {self.ar_pct:>8.2f} "
               f"{self.out_pct:>8.2f} {self.point_count:>8d}")
        return head + "\n" + row + "\n"


def parse_report(text: str) -> MetricReport:
    values = {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    try:
        return MetricReport(
            epe=float(values["epe"]),
            as_pct=float(values["as_pct"]),
            ar_pct=float(values["ar_pct"]),
            out_pct=float(values["out_pct"]),
            point_count=int(values["point_count"]),
        )
    except KeyError as exc:
        raise ValueError(f"missing metric {exc.args[0]!r}") from None


def _vectors(x) -> np.ndarray:
    if isinstance(x, FlowField):
        return x.vectors
    if isinstance(x, PseudoLabelSet):
        return x.labels
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def point_errors(pred, gt):
    """Per-point end-point error and relative error."""
    pred = _vectors(pred)
    gt = _vectors(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    err = np.linalg.norm(pred - gt, axis=1)
    rel = err / np.maximum(np.linalg.norm(gt, axis=1), GT_NORM_FLOOR)
    return err, rel


def evaluate(pred, gt, mask=None) -> MetricReport:
    """EPE (mean end-point error, meters) and AS/AR/Out percentages.

    A point counts toward AS when its error is below 0.05 m or its relative
    error below 5%, toward AR below 0.1 m or 10%, and toward Out when the
    error exceeds 0.3 m or the relative error exceeds 10%. Points with
    ``mask`` False are ignored.
    """
    err, rel = point_errors(pred, gt)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != err.shape:
            raise ValueError("mask length does not match the flow")
        err, rel = err[mask], rel[mask]
    if len(err) == 0:
        raise ValueError("no points to evaluate")
    strict = (err < STRICT_ABS) | (rel < STRICT_REL)
    relaxed = (err < RELAXED_ABS) | (rel < RELAXED_REL)
    outlier = (err > OUTLIER_ABS) | (rel > OUTLIER_REL)
    return MetricReport(
        epe=float(err.mean()),
        as_pct=100.0 * float(strict.mean()),
        ar_pct=100.0 * float(relaxed.mean()),
        out_pct=100.0 * float(outlier.mean()),
        point_count=int(len(err)),
    )


def label_quality(labels: PseudoLabelSet, gt) -> MetricReport:
    """Metrics over the valid labels only; ``point_count`` is the valid count."""
    if labels.n_valid == 0:
        raise ValueError("label set has no valid labels")
    return evaluate(labels.labels, gt, labels.valid)
