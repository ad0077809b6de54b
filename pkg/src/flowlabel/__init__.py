"""Pseudo scene-flow labels from optimal transport and random-walk refinement."""
from .core import FlowField, PointCloud, PseudoLabelSet, ValidationReport, prewarp, validate_cloud
from .cost import CostParams, build_cost_matrix, color_cost, coordinate_cost, normal_cost
from .features import estimate_normals, knn_indices
from .metrics import MetricReport, evaluate, label_quality
from .oracle import exact_assignment
from .pipeline import LabelReport, PipelineConfig, generate_labels, self_label_round, training_loss
from .sinkhorn import (
    CorrespondenceSet,
    SinkhornParams,
    TransportPlan,
    extract_labels,
    greedy_search,
    harden,
    sinkhorn,
    soft_match,
)
from .synth import SceneSpec, SynthScene, corrupt_labels, generate
from .walk import (
    RandomWalkParams,
    affinity,
    naive_smooth,
    propagate_directed,
    refine_closed_form,
    refine_iterative,
    transition_undirected,
)

__version__ = "0.1.0"
