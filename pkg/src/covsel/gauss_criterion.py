"""Gaussian quasi-likelihood evaluations and their population counterparts.

Everything here consumes sufficient statistics only: the profiled criterion

    profiled_loglik(sigma) = -(n/2) * (log det sigma + tr(S @ inv(sigma)))

depends on the data through (n, sample mean, sample covariance) alone, and
its population analogue

    population_q(sigma) = -(1/2) * (log det sigma + tr(cov0 @ inv(sigma)))

depends on the data-generating law through (mean0, cov0) alone.  Covariances
use the 1/n normalization throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .model_space import DIAGONAL, FactorPoint, ModelSpec, ValidationError, construct_sigma


class NotPositiveDefiniteError(ValueError):
    """A matrix required to be positive definite failed its factorization."""


def _as_symmetric(cov: np.ndarray, what: str) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    scale = 1.0 + np.abs(cov).max()
    if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, atol=1e-8 * scale):
        raise ValidationError(f"{what} must be a symmetric square matrix")
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class SampleMoments:
    """Sample size, mean, and (1/n-normalized) covariance of an observed sample."""

    n: int
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("sample size must be at least 1")
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _as_symmetric(self.cov, "sample covariance")
        if cov.shape[0] != mean.size:
            raise ValidationError("mean and covariance dimensions disagree")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def p(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class PopulationTarget:
    """Mean and positive-definite covariance of the data-generating law."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _as_symmetric(self.cov, "target covariance")
        if cov.shape[0] != mean.size:
            raise ValidationError("mean and covariance dimensions disagree")
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise ValidationError("target covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def p(self) -> int:
        return self.mean.size

    def as_moments(self) -> SampleMoments:
        """View the target as n=1 moments; this turns the profiled criterion
        into the population criterion exactly."""
        return SampleMoments(1, self.mean, self.cov)


def compute_moments(data: np.ndarray) -> SampleMoments:
    """Sample mean and 1/n covariance of an (n, p) data matrix.

    1-D input is treated as n scalar observations.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValidationError("data must be a nonempty (n, p) matrix")
    n = data.shape[0]
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / n
    return SampleMoments(n, mean, 0.5 * (cov + cov.T))


def chol_lower(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; failure is signaled, never clamped."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    try:
        return linalg.cholesky(sigma, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite: {exc}") from exc


def _logdet_and_trace_solve(sigma: np.ndarray, rhs: np.ndarray) -> tuple[float, float]:
    """log det sigma and tr(rhs @ inv(sigma)) from one Cholesky factorization."""
    low = chol_lower(sigma)
    logdet = 2.0 * float(np.sum(np.log(np.diag(low))))
    half = linalg.solve_triangular(low, rhs, lower=True, check_finite=False)
    half = linalg.solve_triangular(low, half.T, lower=True, check_finite=False)
    return logdet, float(np.trace(half))


def profiled_loglik(sigma: np.ndarray, moments: SampleMoments) -> float:
    """Mean-profiled Gaussian criterion -(n/2)(log det sigma + tr(S inv(sigma)))."""
    logdet, tr = _logdet_and_trace_solve(sigma, moments.cov)
    return -0.5 * moments.n * (logdet + tr)


def full_loglik(mu: np.ndarray, sigma: np.ndarray, moments: SampleMoments) -> float:
    """Gaussian log-likelihood at (mu, sigma), up to the -np*log(2*pi)/2 constant.

    Equals profiled_loglik(sigma) minus the nonnegative mean penalty
    (n/2) (mean - mu)' inv(sigma) (mean - mu).
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    low = chol_lower(sigma)
    logdet = 2.0 * float(np.sum(np.log(np.diag(low))))
    half = linalg.solve_triangular(low, moments.cov, lower=True, check_finite=False)
    half = linalg.solve_triangular(low, half.T, lower=True, check_finite=False)
    dev = linalg.solve_triangular(low, moments.mean - mu, lower=True, check_finite=False)
    quad = float(dev @ dev)
    return -0.5 * moments.n * (logdet + float(np.trace(half)) + quad)


def population_q(sigma: np.ndarray, target: PopulationTarget) -> float:
    """Population criterion Q(sigma) = -(1/2)(log det sigma + tr(cov0 inv(sigma)))."""
    logdet, tr = _logdet_and_trace_solve(sigma, target.cov)
    return -0.5 * (logdet + tr)


def population_gamma(mu: np.ndarray, sigma: np.ndarray, target: PopulationTarget) -> float:
    """Unprofiled population criterion; maximized over mu at the target mean."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    low = chol_lower(sigma)
    logdet = 2.0 * float(np.sum(np.log(np.diag(low))))
    half = linalg.solve_triangular(low, target.cov, lower=True, check_finite=False)
    half = linalg.solve_triangular(low, half.T, lower=True, check_finite=False)
    dev = linalg.solve_triangular(low, mu - target.mean, lower=True, check_finite=False)
    return -0.5 * (logdet + float(np.trace(half)) + float(dev @ dev))


def gaussian_kl(cov0: np.ndarray, cov1: np.ndarray,
                mean0: np.ndarray | None = None, mean1: np.ndarray | None = None) -> float:
    """KL(N(mean0, cov0) || N(mean1, cov1)) for p-variate normals."""
    cov0 = np.atleast_2d(np.asarray(cov0, dtype=float))
    p = cov0.shape[0]
    low0 = chol_lower(cov0)
    logdet0 = 2.0 * float(np.sum(np.log(np.diag(low0))))
    logdet1, tr = _logdet_and_trace_solve(cov1, cov0)
    quad = 0.0
    if mean0 is not None or mean1 is not None:
        m0 = np.zeros(p) if mean0 is None else np.atleast_1d(np.asarray(mean0, dtype=float))
        m1 = np.zeros(p) if mean1 is None else np.atleast_1d(np.asarray(mean1, dtype=float))
        low1 = chol_lower(cov1)
        dev = linalg.solve_triangular(low1, m1 - m0, lower=True, check_finite=False)
        quad = float(dev @ dev)
    return 0.5 * (tr - p + quad + logdet1 - logdet0)


@dataclass(frozen=True)
class ProfiledGradient:
    """Gradient of the profiled criterion in masked coordinates.

    ``loadings`` is aligned with the spec's canonical (row-major) support
    entries; ``uniqueness`` has p entries (diagonal) or 1 (spherical).
    """

    loadings: np.ndarray
    uniqueness: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.loadings, self.uniqueness])


def grad_profiled(point: FactorPoint, spec: ModelSpec, moments: SampleMoments) -> ProfiledGradient:
    """Analytic gradient of profiled_loglik(construct_sigma(point)) at ``point``.

    With the kernel K = inv(sigma) - inv(sigma) S inv(sigma):
    loading gradient -n * (K @ loadings) masked to the support; uniqueness
    gradient -(n/2) diag(K) (diagonal) or -(n/2) tr(K) (spherical).
    """
    sigma = construct_sigma(point, spec)
    n = moments.n
    low = chol_lower(sigma)
    eye = np.eye(sigma.shape[0])
    sigma_inv = linalg.cho_solve((low, True), eye, check_finite=False)
    kernel = sigma_inv - sigma_inv @ moments.cov @ sigma_inv
    kernel = 0.5 * (kernel + kernel.T)
    rows, cols = spec.pattern.index_arrays()
    load_grad = (-n * (kernel @ point.loadings))[rows, cols] if rows.size else np.zeros(0)
    if spec.error_type == DIAGONAL:
        uni_grad = -0.5 * n * np.diag(kernel)
    else:
        uni_grad = np.array([-0.5 * n * float(np.trace(kernel))])
    return ProfiledGradient(np.asarray(load_grad, dtype=float), np.asarray(uni_grad, dtype=float))


def d2q_form(h: np.ndarray, target: PopulationTarget) -> float:
    """Second-derivative form of Q at the target covariance:
    -(1/2) || inv_sqrt(cov0) H inv_sqrt(cov0) ||_F^2, nonpositive and zero
    only at H = 0."""
    h = _as_symmetric(h, "direction H")
    low = chol_lower(target.cov)
    half = linalg.solve_triangular(low, h, lower=True, check_finite=False)
    whitened = linalg.solve_triangular(low, half.T, lower=True, check_finite=False)
    return -0.5 * float(np.sum(whitened * whitened))


# ---------------------------------------------------------------------------
# CSV data and JSON moment sidecars
# ---------------------------------------------------------------------------

def read_data_csv(path, header: bool = False) -> np.ndarray:
    """Observations from CSV, one row per observation."""
    data = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    if data.size == 0:
        raise ValidationError(f"no observations found in {path}")
    return data


def moments_to_dict(moments: SampleMoments) -> dict:
    return {"n": moments.n, "mean": moments.mean.tolist(), "cov": moments.cov.tolist()}


def moments_from_dict(doc: dict) -> SampleMoments:
    try:
        return SampleMoments(int(doc["n"]), np.asarray(doc["mean"], dtype=float),
                             np.asarray(doc["cov"], dtype=float))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed moments document: {exc}") from exc


def save_moments(moments: SampleMoments, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(moments_to_dict(moments), fh, sort_keys=True)


def load_moments(path) -> SampleMoments:
    with open(path, "r", encoding="utf-8") as fh:
        return moments_from_dict(json.load(fh))
