"""Sparse heatmap generation and reconstruction-based search for Euclidean TSP."""

from .gcn import (
    Heatmap,
    ModelWeights,
    forward,
    heatmap_from_csv,
    inverse_distance_heatmap,
    load_weights,
    save_weights,
)
from .instances import (
    Instance,
    LabeledInstance,
    Metric,
    Tour,
    generate_uniform,
    held_karp_optimal,
    optimality_gap,
    parse_tsplib,
    tour_length,
)
from .metrics import (
    HeatmapQuality,
    average_rank,
    coverage,
    evaluate_run,
    heatmap_quality,
    missing_rate,
    ordered_heatmap,
)
from .rbs import (
    Budget,
    SolveConfig,
    SolveResult,
    solve,
    solve_many,
)
from .subgraph import SubgraphSet, build_knn, rescale

__all__ = [
    "Budget",
    "Heatmap",
    "HeatmapQuality",
    "Instance",
    "LabeledInstance",
    "Metric",
    "ModelWeights",
    "SolveConfig",
    "SolveResult",
    "SubgraphSet",
    "Tour",
    "average_rank",
    "build_knn",
    "coverage",
    "evaluate_run",
    "forward",
    "generate_uniform",
    "heatmap_from_csv",
    "heatmap_quality",
    "held_karp_optimal",
    "inverse_distance_heatmap",
    "load_weights",
    "missing_rate",
    "optimality_gap",
    "ordered_heatmap",
    "parse_tsplib",
    "rescale",
    "save_weights",
    "solve",
    "solve_many",
    "tour_length",
]

__version__ = "0.1.0"
