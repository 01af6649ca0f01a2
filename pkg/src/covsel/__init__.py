"""Penalized model selection over structured Gaussian factor-analysis
covariance classes: profiled quasi-likelihood fits, population pseudo-true
targets, penalty classification, and Monte Carlo consistency experiments."""

from .estimators import FactorClassMLE, FactorOrderSelector
from .fit import FitOptions, FitResult, brute_force_fit, fit_class
from .gauss_criterion import (
    NotPositiveDefiniteError,
    PopulationTarget,
    SampleMoments,
    compute_moments,
    d2q_form,
    full_loglik,
    gaussian_kl,
    grad_profiled,
    population_gamma,
    population_q,
    profiled_loglik,
)
from .model_space import (
    CandidateFamily,
    ClassBounds,
    FactorPoint,
    ModelSpec,
    SupportPattern,
    ValidationError,
    complexity,
    construct_sigma,
    dense_gap_table,
    family_from_dict,
    load_family,
    redundant_representation,
    validate_family,
)
from .penalties import (
    PenaltyClassification,
    PenaltySystem,
    classify_penalty,
    penalties_for,
    penalty_value,
)
from .population import (
    AssumptionDiagnostics,
    PopulationSummary,
    diagnose_assumptions,
    margin_constant_correct_spec,
    population_fit,
    pseudo_true_summary,
)
from .select import NumericalError, SelectionReport, select_model
from .simulate import (
    DataLaw,
    McReport,
    MonteCarloPlan,
    build_flat_margin_class,
    generate_data,
    overfit_gain_trace,
    pathology_two_point,
    run_monte_carlo,
    sigma_plus,
    suboptimal_loss_trace,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionDiagnostics",
    "CandidateFamily",
    "ClassBounds",
    "DataLaw",
    "FactorClassMLE",
    "FactorOrderSelector",
    "FactorPoint",
    "FitOptions",
    "FitResult",
    "McReport",
    "ModelSpec",
    "MonteCarloPlan",
    "NotPositiveDefiniteError",
    "NumericalError",
    "PenaltyClassification",
    "PenaltySystem",
    "PopulationSummary",
    "PopulationTarget",
    "SampleMoments",
    "SelectionReport",
    "SupportPattern",
    "ValidationError",
    "brute_force_fit",
    "build_flat_margin_class",
    "classify_penalty",
    "complexity",
    "compute_moments",
    "construct_sigma",
    "d2q_form",
    "dense_gap_table",
    "diagnose_assumptions",
    "family_from_dict",
    "fit_class",
    "full_loglik",
    "gaussian_kl",
    "generate_data",
    "grad_profiled",
    "load_family",
    "margin_constant_correct_spec",
    "overfit_gain_trace",
    "pathology_two_point",
    "penalties_for",
    "penalty_value",
    "population_fit",
    "population_gamma",
    "population_q",
    "profiled_loglik",
    "pseudo_true_summary",
    "redundant_representation",
    "run_monte_carlo",
    "select_model",
    "sigma_plus",
    "suboptimal_loss_trace",
    "validate_family",
]
