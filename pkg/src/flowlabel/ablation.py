"""Ablation grid over matching measures, constraints, strategies and refinement."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .cost import CostParams
from .metrics import label_quality
from .pipeline import PipelineConfig, generate_labels
from .walk import RandomWalkParams

COORD = ("coordinate",)
COORD_COLOR = ("coordinate", "color")
ALL_MEASURES = ("coordinate", "color", "normal")


@dataclass(frozen=True)
class AblationRow:
    table: str
    name: str
    config: PipelineConfig


@dataclass(frozen=True)
class AblationResult:
    table: str
    name: str
    as_pct: float
    ar_pct: float
    epe: float
    coverage: float
    scenes: int

    def line(self) -> str:
        return (f"{self.table:<3} {self.name:<22} AS={self.as_pct:7.2f} AR={self.ar_pct:7.2f} "
                f"EPE={self.epe:8.4f} coverage={self.coverage:6.3f}")


def ablation_grid(base: PipelineConfig = None) -> list:
    """Rows of the four ablation tables.

    ``base`` supplies bandwidths and solver settings. Generation rows use raw
    matching without refinement; the matching-strategy table pre-warps with the
    ground-truth flow; refinement rows build on the full-measure transport
    labels.
    """
    if base is None:
        base = PipelineConfig()
    gen = replace(base, source="raw", refinement="off", strategy="hard")

    def measures(m):
        return replace(gen.cost, measures=m)

    rows = [
        AblationRow("A1", "greedy", replace(gen, strategy="greedy", cost=measures(COORD))),
        AblationRow("A1", "greedy+color", replace(gen, strategy="greedy", cost=measures(COORD_COLOR))),
        AblationRow("A1", "greedy+color+normal", replace(gen, strategy="greedy", cost=measures(ALL_MEASURES))),
        AblationRow("A1", "ot", replace(gen, cost=measures(COORD))),
        AblationRow("A1", "ot+color", replace(gen, cost=measures(COORD_COLOR))),
        AblationRow("A1", "ot+color+normal", replace(gen, cost=measures(ALL_MEASURES))),
        AblationRow("A2", "raw-hard", replace(gen, cost=measures(ALL_MEASURES))),
        AblationRow("A2", "prewarp-soft", replace(gen, source="prewarp", strategy="soft")),
        AblationRow("A2", "prewarp-hard", replace(gen, source="prewarp")),
        AblationRow("A3", "off", gen),
        AblationRow("A3", "naive", replace(gen, refinement="naive")),
        AblationRow("A3", "walk", replace(gen, refinement="walk")),
        AblationRow("A3", "walk+propagate", replace(gen, refinement="full")),
    ]
    for steps in (1, 5, 10, 20, math.inf):
        walk = replace(gen.walk, steps=steps)
        label = "inf" if math.isinf(steps) else str(steps)
        rows.append(AblationRow("A4", f"steps={label}", replace(gen, refinement="full", walk=walk)))
    return rows


def run_ablation(scenes, rows=None) -> list:
    """Mean label quality of every row over ``scenes``.

    ``scenes`` yields objects with ``P``, ``Q`` and ``gt_flow``; the ground
    truth doubles as the predicted flow for pre-warped rows. Scores are
    averaged per scene.
    """
    rows = ablation_grid() if rows is None else rows
    scores = {(r.table, r.name): [] for r in rows}
    count = 0
    for scene in scenes:
        count += 1
        for row in rows:
            report = generate_labels(scene.P, scene.Q, scene.gt_flow, row.config)
            if report.labels.n_valid == 0:
                scores[(row.table, row.name)].append((0.0, 0.0, np.nan, 0.0))
                continue
            m = label_quality(report.labels, scene.gt_flow)
            scores[(row.table, row.name)].append(
                (m.as_pct, m.ar_pct, m.epe, m.point_count / len(scene.P)))
    results = []
    for row in rows:
        arr = np.array(scores[(row.table, row.name)], dtype=np.float64).reshape(-1, 4)
        means = np.nanmean(arr, axis=0) if len(arr) else np.full(4, np.nan)
        results.append(AblationResult(row.table, row.name, *map(float, means), scenes=count))
    return results


def result_table(results) -> dict:
    return {(r.table, r.name): r for r in results}
