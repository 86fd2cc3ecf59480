"""Causal effect estimation on observational panel data.

The workflow follows design, estimation and diagnostics: build comparable
treated and control groups, estimate the effect (including two-way fixed
effects and network spillovers), then check the assumptions with
backward-causality, A/A and balance diagnostics.
"""

__version__ = "0.1.0"

from .design import (
    BalanceReport,
    PropensityModel,
    cem_match,
    fit_logistic,
    predict_propensity,
    standardized_mean_diff,
    stratify,
)
from .diagnostics import DiagnosticReport, aa_test, backward_causality_check, balance_report
from .errors import CausalError, ConfigError
from .estimators import EffectEstimate, doubly_robust, ipw_estimate, naive_diff, regression_adjust
from .fixed_effects import (
    FixedEffectsFit,
    FixedEffectsSpec,
    fit_fe,
    fit_spillover_fe,
    fit_weighted_fe,
    within_transform,
)
from .panel import (
    ArmScheme,
    Network,
    PanelDataset,
    WindowConfig,
    load_network,
    load_panel,
    neighborhood_covariate_summary,
    neighborhood_treatment,
    relabel_arms,
)
from .pipeline import run_estimators
from .simulation import SimulationConfig, load_preset, run_benchmark, simulate

__all__ = [
    "ArmScheme", "BalanceReport", "CausalError", "ConfigError", "DiagnosticReport", "EffectEstimate",
    "FixedEffectsFit", "FixedEffectsSpec", "Network", "PanelDataset", "PropensityModel",
    "SimulationConfig", "WindowConfig", "aa_test", "backward_causality_check", "balance_report",
    "cem_match", "doubly_robust", "fit_fe", "fit_logistic", "fit_spillover_fe", "fit_weighted_fe",
    "ipw_estimate", "load_network", "load_panel", "load_preset", "naive_diff",
    "neighborhood_covariate_summary", "neighborhood_treatment", "predict_propensity",
    "regression_adjust", "relabel_arms", "run_benchmark", "run_estimators", "simulate",
    "standardized_mean_diff", "stratify", "within_transform",
]
