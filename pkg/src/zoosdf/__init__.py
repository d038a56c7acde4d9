"""Factor-zoo SDF toolkit: spike-and-slab Gibbs estimation, BMA aggregation,
pricing diagnostics, benchmark estimators, simulation lab, trading backtests,
and SDF dynamics."""

from .panel import (
    DurationInputs,
    FactorMeta,
    ReturnPanel,
    duration_adjust,
    load_panel,
    save_panel,
    standardize,
    unstandardize,
)
from .priors import PriorConfig, PriorState, build_D, calibrate_psi, compute_psi, sparsity_hyperparams
from .gibbs import PosteriorDraws, merge_draws, run_chain, run_chains
from .bma import BmaSdf, bma_sdf_series, factor_probabilities, posterior_mprs
from .pricing import PricingReport, cross_section_fit, implied_premia, oos_price
from .tslayer import CrossSectionInputs, TimeSeriesDraw, extract_cross_section, sample_ts_params

__version__ = "0.1.0"

__all__ = [
    "BmaSdf",
    "CrossSectionInputs",
    "DurationInputs",
    "FactorMeta",
    "PosteriorDraws",
    "PricingReport",
    "PriorConfig",
    "PriorState",
    "ReturnPanel",
    "TimeSeriesDraw",
    "bma_sdf_series",
    "build_D",
    "calibrate_psi",
    "compute_psi",
    "cross_section_fit",
    "duration_adjust",
    "extract_cross_section",
    "factor_probabilities",
    "implied_premia",
    "load_panel",
    "merge_draws",
    "oos_price",
    "posterior_mprs",
    "run_chain",
    "run_chains",
    "sample_ts_params",
    "save_panel",
    "sparsity_hyperparams",
    "standardize",
    "unstandardize",
]
