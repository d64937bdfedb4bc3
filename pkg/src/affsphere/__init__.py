"""Numerical toolkit for meromorphic cubic differentials and convex
projective structures: the metric equation solver, flat-connection
transport, developing maps with polygon extraction at higher-order
poles, and the support-function inverse direction on convex domains.
"""

from .convexgeom import (
    ConvexDomain,
    ConvexityLossError,
    MAConfig,
    MetricField,
    SupportField,
    blaschke_metric,
    density_ratio,
    hilbert_area_density,
    hilbert_norm,
    inclusion_bounds_check,
    support_solve,
)
from .cubicdiff import (
    INFINITY,
    CubicDifferential,
    PoleAnalysis,
    PoleEvaluationError,
    SectorDecomposition,
    UnsupportedOrderError,
    classify_pole,
    half_plane_chart,
    special_sectors,
    winding_sector_label,
)
from .develop import (
    DevPath,
    PolygonConfig,
    PolygonReport,
    classify_end_order3,
    classify_sl3,
    comparison_transform,
    dev_limit,
    develop_path,
    holonomy_eigen_from_residue,
    holonomy_loop,
    polygon_extract,
)
from .transport import (
    SL3,
    ConnectionSampler,
    PathSpec,
    connection_matrix,
    equilateral_real_form,
    parallel_transport,
    titeica_transport,
    varpi,
    varpi_max,
)
from .wangpde import (
    Grid2D,
    NonConvergenceError,
    PreconditionError,
    ScalarField,
    SolverConfig,
    barriers,
    decay_fit,
    flat_candidate,
    solve,
    u_field,
    wang_residual,
)

__version__ = "0.1.0"

__all__ = [
    "CubicDifferential",
    "PoleAnalysis",
    "SectorDecomposition",
    "INFINITY",
    "classify_pole",
    "special_sectors",
    "winding_sector_label",
    "half_plane_chart",
    "PoleEvaluationError",
    "UnsupportedOrderError",
    "Grid2D",
    "ScalarField",
    "SolverConfig",
    "solve",
    "barriers",
    "flat_candidate",
    "wang_residual",
    "u_field",
    "decay_fit",
    "NonConvergenceError",
    "PreconditionError",
    "SL3",
    "ConnectionSampler",
    "PathSpec",
    "connection_matrix",
    "equilateral_real_form",
    "parallel_transport",
    "titeica_transport",
    "varpi",
    "varpi_max",
    "DevPath",
    "develop_path",
    "dev_limit",
    "comparison_transform",
    "holonomy_loop",
    "holonomy_eigen_from_residue",
    "classify_sl3",
    "classify_end_order3",
    "PolygonConfig",
    "PolygonReport",
    "polygon_extract",
    "ConvexDomain",
    "SupportField",
    "MetricField",
    "MAConfig",
    "support_solve",
    "blaschke_metric",
    "inclusion_bounds_check",
    "hilbert_norm",
    "hilbert_area_density",
    "density_ratio",
    "ConvexityLossError",
]
