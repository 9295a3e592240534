"""Calibrated combination of binned probabilistic forecasts."""

__version__ = "0.1.0"

from .binned import (
    AlignedRecord,
    BinnedDistribution,
    BinStructure,
    ForecastRecord,
    Observation,
    cumulative_at_edges,
    locate_bin,
    validate,
)
from .calibration import calibration_report, cramer_distance, empirical_cdf, pit
from .combinators import EnsembleParams, Method, combine, combine_bmc, combine_lp, ensemble_cdf_at
from .estimation import (
    FitConfig,
    FitResult,
    TrainingSet,
    binned_loglik,
    fit,
    fit_all_targets,
    fit_methods,
    fit_warm,
)
from .scoring import ScoreRecord, aggregate, log_score
from .selection import CVResult, loso_cv, one_se_select
from .special import BetaParams, beta_cdf, beta_pdf
