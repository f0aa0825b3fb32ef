from .base import (
    Estimate,
    collapse_cells,
    composite,
    expansion,
    hajek_mean,
    optimal_gamma,
    post_stratified,
    split_population,
)
from .calibration import (
    CalibrationFit,
    CalibrationSpec,
    calibrate,
    calibration_estimate,
    dummies,
    intercept,
    linear_in_label,
    min_distance_weights,
    totals_from_sample,
)
from .matching import (
    MatchAssignment,
    Metric,
    default_epsilon,
    default_metric,
    nn_match,
    sm_domain_means,
    sm_estimate,
    two_phase_sm,
)
from .propensity import (
    PropensityFit,
    fit_propensity,
    ipw,
    normalise_propensities,
    reference_ipw,
    reference_propensities,
)
