"""Coverage-based pool active learning: uncertainty herding and friends."""

from uherd.core import FeatureMatrix, PoolState, PreconditionError, ScheduleConfig, mark_labeled
from uherd.coverage import (
    BoundParams,
    CoverageVector,
    brute_force_optimal,
    error_bound,
    gcoverage,
    marginal_gain,
    maxherding_select,
    ucoverage,
    uherding_select,
)
from uherd.kernel import KernelConfig, adapt_radius, kernel_row, kernel_value, lipschitz_bound
from uherd.uncertainty import (
    PredictionSet,
    UncertaintyProfile,
    compute_ece,
    confidence_uncertainty,
    constant_uncertainty,
    entropy_uncertainty,
    margin_uncertainty,
    scaled_softmax,
    select_temperature,
)

__version__ = "0.1.0"
