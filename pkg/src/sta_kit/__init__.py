"""Spatio-temporal alignment of time series with unbalanced optimal transport."""

from .align_core import sdtw, sdtw_backward, sdtw_forward, sdtw_value_and_grad, softmin
from .errors import (
    CapacityError,
    ConvergenceWarning,
    DomainError,
    InternalConsistencyError,
    SeparabilityWarning,
    StaError,
    UnsupportedError,
)
from .sta import CostProvider, SpatioTemporalSeries, pairwise_matrix, s_cost_matrix, sta_gradient
from .uot import (
    UotParams,
    gibbs_kernel,
    ground_metric_graph,
    ground_metric_grid,
    normalize_by_median,
    sinkhorn_divergence,
    sinkhorn_symmetric,
    sinkhorn_unbalanced,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConvergenceWarning",
    "CostProvider",
    "DomainError",
    "InternalConsistencyError",
    "SeparabilityWarning",
    "SpatioTemporalSeries",
    "StaError",
    "UnsupportedError",
    "UotParams",
    "gibbs_kernel",
    "ground_metric_graph",
    "ground_metric_grid",
    "normalize_by_median",
    "pairwise_matrix",
    "s_cost_matrix",
    "sdtw",
    "sdtw_backward",
    "sdtw_forward",
    "sdtw_value_and_grad",
    "sinkhorn_divergence",
    "sinkhorn_symmetric",
    "sinkhorn_unbalanced",
    "softmin",
    "sta_gradient",
]
