"""Equilibrium toolkit for transferable-utility matching markets with
regional floor and ceiling quotas: tax-fixed equilibria, welfare-maximizing
tax design, surplus estimation from observed matchings, and counterfactual
policy comparisons."""

from .ae import ChooSiowKernel, IpfpConfig, KernelRangeError, build_kernel, solve_ae, solve_ae_grid
from .eae import (
    EaeConfig,
    InfeasibleQuotaError,
    KKTReport,
    dual_value,
    outer_step,
    solve_eae,
    verify_kkt,
)
from .estimation import (
    CovariateBasis,
    EstimationConfig,
    EstimationError,
    FitReport,
    SurplusModel,
    estimate,
    kl_divergence,
    log_likelihood,
    surplus_from_covariates,
)
from .logit import ErrorModel, GumbelLogitModel, entropy, g_gradient, g_value, h_gradient, h_value
from .market import (
    Diagnostics,
    EquilibriumResult,
    MarketFileError,
    MarketSpec,
    Matching,
    SchemaViolationError,
    SurplusMatrix,
    SystematicUtilities,
    TaxScheme,
    UnknownRegionError,
    ValidationReport,
    load_market,
    load_result,
    load_surplus,
    load_taxes,
    region_mass,
    region_masses,
    save_market,
    save_result,
    validate_market,
)
from .policies import (
    OrderingReport,
    PolicyResult,
    bbae,
    cap_reduced_ae,
    eae_upper_bound,
    welfare_ordering_check,
)
from .welfare import WelfareBreakdown, agent_welfare, breakdown, location_offset, pm_surplus, social_welfare

__version__ = "0.1.0"

__all__ = [
    "ChooSiowKernel",
    "IpfpConfig",
    "KernelRangeError",
    "build_kernel",
    "solve_ae",
    "solve_ae_grid",
    "EaeConfig",
    "InfeasibleQuotaError",
    "KKTReport",
    "dual_value",
    "outer_step",
    "solve_eae",
    "verify_kkt",
    "CovariateBasis",
    "EstimationConfig",
    "EstimationError",
    "FitReport",
    "SurplusModel",
    "estimate",
    "kl_divergence",
    "log_likelihood",
    "surplus_from_covariates",
    "ErrorModel",
    "GumbelLogitModel",
    "entropy",
    "g_gradient",
    "g_value",
    "h_gradient",
    "h_value",
    "Diagnostics",
    "EquilibriumResult",
    "MarketFileError",
    "MarketSpec",
    "Matching",
    "SchemaViolationError",
    "SurplusMatrix",
    "SystematicUtilities",
    "TaxScheme",
    "UnknownRegionError",
    "ValidationReport",
    "load_market",
    "load_result",
    "load_surplus",
    "load_taxes",
    "region_mass",
    "region_masses",
    "save_market",
    "save_result",
    "validate_market",
    "OrderingReport",
    "PolicyResult",
    "bbae",
    "cap_reduced_ae",
    "eae_upper_bound",
    "welfare_ordering_check",
    "WelfareBreakdown",
    "agent_welfare",
    "breakdown",
    "location_offset",
    "pm_surplus",
    "social_welfare",
]
