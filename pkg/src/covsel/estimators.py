"""Sklearn-style estimators wrapping the functional core.

These exist so the selector composes with the wider ecosystem: both classes
follow the fit/attributes convention (trailing-underscore fitted state),
support ``get_params``/``set_params``/``clone``, and validate inputs with the
standard helpers.  ``score`` returns the per-observation profiled criterion
on new data, higher is better.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .fit import FitOptions, fit_class
from .gauss_criterion import compute_moments, profiled_loglik
from .model_space import CandidateFamily, ModelSpec, ValidationError
from .penalties import PenaltySystem, system_from_dict
from .select import select_model


def _options(est) -> FitOptions:
    return FitOptions(starts=est.starts, max_iters=est.max_iters,
                      grad_tolerance=est.grad_tolerance, seed=est.seed)


def _validated(X, p_expected: int | None = None) -> np.ndarray:
    X = check_array(X, ensure_2d=True, dtype=np.float64, ensure_min_samples=1)
    if p_expected is not None and X.shape[1] != p_expected:
        raise ValidationError(f"X has {X.shape[1]} features; the model expects {p_expected}")
    return X


class FactorClassMLE(BaseEstimator):
    """Profiled quasi-likelihood fit of one structured covariance class.

    Parameters
    ----------
    spec : ModelSpec
        The covariance class to fit.
    starts, max_iters, grad_tolerance, seed :
        Optimizer controls; see FitOptions.

    Attributes
    ----------
    covariance_ : ndarray of shape (p, p)
        The fitted class member.
    loadings_, uniquenesses_ : ndarray
        Maximizing parameters (factor classes only).
    loglik_ : float
        Attained profiled log-likelihood T.
    result_ : FitResult
        Full optimizer outcome.
    """

    def __init__(self, spec: ModelSpec = None, starts: int = 8, max_iters: int = 500,
                 grad_tolerance: float = 1e-8, seed: int = 0):
        self.spec = spec
        self.starts = starts
        self.max_iters = max_iters
        self.grad_tolerance = grad_tolerance
        self.seed = seed

    def fit(self, X, y=None):
        if self.spec is None:
            raise ValidationError("FactorClassMLE requires a spec")
        X = _validated(X, self.spec.p)
        moments = compute_moments(X)
        result = fit_class(self.spec, moments, _options(self))
        self.moments_ = moments
        self.result_ = result
        self.covariance_ = result.sigma
        self.loglik_ = result.t_value
        if result.best_point is not None:
            self.loadings_ = result.best_point.loadings
            self.uniquenesses_ = result.best_point.uniqueness
        self.n_features_in_ = X.shape[1]
        return self

    def get_covariance(self) -> np.ndarray:
        check_is_fitted(self, "covariance_")
        return self.covariance_

    def score(self, X, y=None) -> float:
        """Per-observation profiled criterion of the fitted covariance on X."""
        check_is_fitted(self, "covariance_")
        moments = compute_moments(_validated(X, self.n_features_in_))
        return profiled_loglik(self.covariance_, moments) / moments.n


class FactorOrderSelector(BaseEstimator):
    """Penalized selection over a candidate family of covariance classes.

    Parameters
    ----------
    family : CandidateFamily
        Ordered candidates with complexity counts.
    penalty : str, dict, or PenaltySystem, default "bic"
        Catalogue name, penalty document, or a prebuilt system.
    starts, max_iters, grad_tolerance, seed :
        Optimizer controls applied to every candidate fit.

    Attributes
    ----------
    selected_index_ : int
        1-based index of the selected model.
    selected_order_ : int
        Its factor order (nominal order for explicit sets).
    covariance_ : ndarray
        The selected model's fitted covariance.
    report_ : SelectionReport
        Scores, penalties, margins, and per-model statuses.
    """

    def __init__(self, family: CandidateFamily = None, penalty="bic", starts: int = 8,
                 max_iters: int = 500, grad_tolerance: float = 1e-8, seed: int = 0):
        self.family = family
        self.penalty = penalty
        self.starts = starts
        self.max_iters = max_iters
        self.grad_tolerance = grad_tolerance
        self.seed = seed

    def _system(self) -> PenaltySystem:
        if isinstance(self.penalty, PenaltySystem):
            return self.penalty
        return system_from_dict(self.penalty)

    def fit(self, X, y=None):
        if self.family is None:
            raise ValidationError("FactorOrderSelector requires a family")
        X = _validated(X, self.family.p)
        moments = compute_moments(X)
        report = select_model(self.family, moments, self._system(), _options(self))
        self.moments_ = moments
        self.report_ = report
        self.selected_index_ = report.selected_index
        self.selected_order_ = report.selected_order
        self.scores_ = np.asarray(report.scores)
        self.t_values_ = np.asarray(report.t_values)
        self.covariance_ = report.selected_fit.sigma
        self.n_features_in_ = X.shape[1]
        return self

    def get_covariance(self) -> np.ndarray:
        check_is_fitted(self, "covariance_")
        return self.covariance_

    def score(self, X, y=None) -> float:
        """Per-observation profiled criterion of the selected covariance on X."""
        check_is_fitted(self, "covariance_")
        moments = compute_moments(_validated(X, self.n_features_in_))
        return profiled_loglik(self.covariance_, moments) / moments.n
