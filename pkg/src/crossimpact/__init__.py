"""Execution scheduling and cost analysis under fund-driven cross-impact."""

from .calibration import MarketProfiles, VolumePanel, calibrate, compute_profiles, forward_profiles
from .costratio import (
    CostRatioInputs,
    CostRatioReport,
    cost_ratio,
    cost_ratio_extremes,
    direct_cost_ratio,
    market_ratio_curve,
    single_stock_ratio,
    theta_bound_summary,
)
from .errors import ConvergenceError, DimensionError, IllConditionedError, Infeasible, ModelError
from .estimation import (
    ImpactCoefficients,
    TransactionRecord,
    fit_mle,
    log_likelihood,
    predict_shortfall,
    simulate_records,
)
from .impact import (
    ImpactMatrix,
    IntradayLiquidity,
    LiquidityModel,
    build_impact_matrix,
    clearing_decomposition,
    extreme_case_cost,
    one_period_cost,
    price_impact,
    to_notional_units,
    total_cost,
)
from .orderflow import OrderFlowParams, simulate_panel, theoretical_moments
from .schedule import (
    MixtureProfile,
    Schedule,
    optimal_schedule,
    qp_oracle,
    separable_vwap_schedule,
    tilting_schedule,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "CostRatioInputs",
    "CostRatioReport",
    "DimensionError",
    "IllConditionedError",
    "ImpactCoefficients",
    "ImpactMatrix",
    "Infeasible",
    "IntradayLiquidity",
    "LiquidityModel",
    "MarketProfiles",
    "MixtureProfile",
    "ModelError",
    "OrderFlowParams",
    "Schedule",
    "TransactionRecord",
    "VolumePanel",
    "build_impact_matrix",
    "calibrate",
    "clearing_decomposition",
    "compute_profiles",
    "cost_ratio",
    "cost_ratio_extremes",
    "direct_cost_ratio",
    "extreme_case_cost",
    "fit_mle",
    "forward_profiles",
    "log_likelihood",
    "market_ratio_curve",
    "one_period_cost",
    "optimal_schedule",
    "predict_shortfall",
    "price_impact",
    "qp_oracle",
    "separable_vwap_schedule",
    "simulate_panel",
    "simulate_records",
    "single_stock_ratio",
    "theoretical_moments",
    "theta_bound_summary",
    "tilting_schedule",
    "to_notional_units",
    "total_cost",
]
