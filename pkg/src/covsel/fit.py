"""Maximize the profiled criterion over one covariance class.

Factor classes are fitted by multi-start projected gradient ascent with
Barzilai-Borwein steps (a diagonal quasi-Newton scaling) and a nonmonotone
Armijo line search; after every step the loadings are rescaled onto the
Frobenius ball and the uniquenesses clipped into their box, so iterates stay
feasible and sigma stays uniformly positive definite.  Order-zero classes and
explicit sets bypass the iterative path entirely: both have exact solutions.

Start 1 is a truncated spectral decomposition of the sample covariance;
remaining starts are seeded uniform draws.  Per-start seeds derive from
(seed, model_index, start_index), so results do not depend on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .gauss_criterion import SampleMoments, chol_lower, profiled_loglik
from .model_space import (
    DIAGONAL,
    EXPLICIT_SET,
    FACTOR_CLASS,
    FactorPoint,
    ModelSpec,
    ValidationError,
    construct_sigma,
)

STATUS_OK = "ok"
STATUS_MAX_ITERS = "max_iters"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class FitOptions:
    """Multi-start and stopping controls.

    ``grad_tolerance`` is a per-observation rate: the optimizer stops when the
    projected-gradient norm falls below grad_tolerance * n (the gradient of
    the profiled criterion scales with n).
    """

    starts: int = 8
    max_iters: int = 500
    grad_tolerance: float = 1e-8
    seed: int = 0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    memory: int = 10

    def validate(self) -> list[str]:
        out = []
        if self.starts < 1:
            out.append("starts must be >= 1")
        if self.max_iters < 1:
            out.append("max_iters must be >= 1")
        if not (self.grad_tolerance > 0):
            out.append("grad_tolerance must be > 0")
        if self.seed < 0:
            out.append("seed must be a nonnegative integer")
        return out


@dataclass
class FitResult:
    """Attained criterion value and the maximizing class member."""

    t_value: float
    best_point: FactorPoint | None
    sigma: np.ndarray
    starts_converged: int
    gradient_norm_at_solution: float
    status: str = STATUS_OK

    def to_dict(self) -> dict:
        return {
            "t_value": self.t_value,
            "sigma": self.sigma.tolist(),
            "loadings": None if self.best_point is None else self.best_point.loadings.tolist(),
            "uniqueness": None if self.best_point is None else self.best_point.uniqueness.tolist(),
            "starts_converged": self.starts_converged,
            "gradient_norm_at_solution": self.gradient_norm_at_solution,
            "status": self.status,
        }


@dataclass(frozen=True)
class _Layout:
    """Masked coordinate layout for one factor class."""

    p: int
    q: int
    rows: np.ndarray
    cols: np.ndarray
    n_load: int
    n_uni: int
    radius: float
    psi_lo: float
    psi_hi: float
    spherical: bool

    @classmethod
    def for_spec(cls, spec: ModelSpec) -> "_Layout":
        rows, cols = spec.pattern.index_arrays()
        spherical = spec.error_type != DIAGONAL
        return cls(
            p=spec.p, q=spec.pattern.q, rows=rows, cols=cols, n_load=rows.size,
            n_uni=1 if spherical else spec.p, radius=spec.bounds.loading_radius,
            psi_lo=spec.bounds.psi_min, psi_hi=spec.bounds.psi_max, spherical=spherical,
        )

    def project(self, x: np.ndarray) -> np.ndarray:
        out = x.copy()
        if self.n_load:
            norm = np.linalg.norm(out[: self.n_load])
            if norm > self.radius:
                out[: self.n_load] *= self.radius / norm
        np.clip(out[self.n_load:], self.psi_lo, self.psi_hi, out=out[self.n_load:])
        return out

    def to_point(self, x: np.ndarray) -> FactorPoint:
        lam = np.zeros((self.p, self.q))
        if self.n_load:
            lam[self.rows, self.cols] = x[: self.n_load]
        return FactorPoint(lam, x[self.n_load:].copy())

    def from_point(self, point: FactorPoint) -> np.ndarray:
        lam = point.loadings[self.rows, self.cols] if self.n_load else np.zeros(0)
        return np.concatenate([lam, point.uniqueness])


def _objective(x: np.ndarray, layout: _Layout, s_mat: np.ndarray, n: int):
    """Negative profiled criterion and its gradient at masked coordinates x."""
    lam = np.zeros((layout.p, layout.q))
    if layout.n_load:
        lam[layout.rows, layout.cols] = x[: layout.n_load]
    psi = x[layout.n_load:]
    sigma = lam @ lam.T
    diag = np.diag_indices(layout.p)
    sigma[diag] += psi[0] if layout.spherical else psi
    low = chol_lower(sigma)
    logdet = 2.0 * float(np.sum(np.log(np.diag(low))))
    sigma_inv = linalg.cho_solve((low, True), np.eye(layout.p), check_finite=False)
    sinv_s = sigma_inv @ s_mat
    value = 0.5 * n * (logdet + float(np.trace(sinv_s)))
    kernel = sigma_inv - sinv_s @ sigma_inv
    kernel = 0.5 * (kernel + kernel.T)
    grad_lam = (n * (kernel @ lam))[layout.rows, layout.cols] if layout.n_load else np.zeros(0)
    if layout.spherical:
        grad_psi = np.array([0.5 * n * float(np.trace(kernel))])
    else:
        grad_psi = 0.5 * n * np.diag(kernel).copy()
    return value, np.concatenate([grad_lam, grad_psi])


@dataclass
class _StartResult:
    value: float            # attained profiled criterion (ascent scale)
    x: np.ndarray
    converged: bool
    pg_norm: float
    iters: int


def _projected_gradient_norm(x, grad, layout, n) -> float:
    """Norm of the scaled projected gradient; equals ||grad|| at interior points."""
    step = 1.0 / n
    return float(np.linalg.norm(x - layout.project(x - step * grad)) / step)


def _solve_start(x0: np.ndarray, layout: _Layout, s_mat: np.ndarray, n: int,
                 opts: FitOptions) -> _StartResult:
    tol = opts.grad_tolerance * n
    x = layout.project(x0)
    value, grad = _objective(x, layout, s_mat, n)
    history = [value]
    step = 1.0 / max(1.0, float(np.linalg.norm(grad)))
    pg_norm = _projected_gradient_norm(x, grad, layout, n)
    iters = 0
    for iters in range(1, opts.max_iters + 1):
        if pg_norm <= tol:
            return _StartResult(-value, x, True, pg_norm, iters - 1)
        f_ref = max(history)
        trial = step
        accepted = False
        for _ in range(opts.max_backtracks):
            x_new = layout.project(x - trial * grad)
            direction = x_new - x
            d_norm = float(np.linalg.norm(direction))
            if d_norm == 0.0:
                break
            value_new, grad_new = _objective(x_new, layout, s_mat, n)
            if value_new <= f_ref + opts.armijo_c * float(grad @ direction):
                accepted = True
                break
            trial *= opts.backtrack
        if not accepted:
            # stationary within line-search resolution
            return _StartResult(-value, x, pg_norm <= tol, pg_norm, iters)
        delta_x = x_new - x
        delta_g = grad_new - grad
        curvature = float(delta_x @ delta_g)
        if curvature > 1e-30:
            step = float(delta_x @ delta_x) / curvature
        else:
            step = min(trial * 2.0, 1e12)
        step = float(np.clip(step, 1e-14, 1e12))
        x, value, grad = x_new, value_new, grad_new
        history.append(value)
        if len(history) > opts.memory:
            history.pop(0)
        pg_norm = _projected_gradient_norm(x, grad, layout, n)
    return _StartResult(-value, x, pg_norm <= tol, pg_norm, iters)


def _spectral_start(layout: _Layout, s_mat: np.ndarray) -> np.ndarray:
    """Truncated spectral decomposition of S: top-q components masked onto the
    support, uniqueness from the residual diagonal clipped into the box."""
    lam = np.zeros((layout.p, layout.q))
    if layout.q > 0:
        eigval, eigvec = np.linalg.eigh(s_mat)
        order = np.argsort(eigval)[::-1][: layout.q]
        for col, idx in enumerate(order):
            lam[:, col] = eigvec[:, idx] * np.sqrt(max(eigval[idx], 0.0))
        mask = np.zeros((layout.p, layout.q), dtype=bool)
        mask[layout.rows, layout.cols] = True
        lam[~mask] = 0.0
    resid = np.clip(np.diag(s_mat - lam @ lam.T), layout.psi_lo, layout.psi_hi)
    psi = np.array([float(resid.mean())]) if layout.spherical else resid
    x = np.concatenate([lam[layout.rows, layout.cols] if layout.n_load else np.zeros(0), psi])
    return layout.project(x)


def _random_start(layout: _Layout, rng: np.random.Generator) -> np.ndarray:
    scale = layout.radius / np.sqrt(max(layout.n_load, 1))
    lam = rng.uniform(-scale, scale, size=layout.n_load)
    psi = rng.uniform(layout.psi_lo, layout.psi_hi, size=layout.n_uni)
    return layout.project(np.concatenate([lam, psi]))


def _start_points(layout: _Layout, moments: SampleMoments, opts: FitOptions,
                  model_index: int) -> list[np.ndarray]:
    points = [_spectral_start(layout, moments.cov)]
    for start in range(1, opts.starts):
        rng = np.random.default_rng(
            np.random.SeedSequence([int(opts.seed), int(model_index), int(start)]))
        points.append(_random_start(layout, rng))
    return points


def multistart_results(spec: ModelSpec, moments: SampleMoments, opts: FitOptions,
                       model_index: int = 0) -> list[_StartResult]:
    """All per-start optimizer outcomes, in start order (used by the population
    layer to cluster maximizers)."""
    layout = _Layout.for_spec(spec)
    return [_solve_start(x0, layout, moments.cov, moments.n, opts)
            for x0 in _start_points(layout, moments, opts, model_index)]


def _fit_order_zero(spec: ModelSpec, moments: SampleMoments, opts: FitOptions) -> FitResult:
    """Closed-form box-projected solution: the 1-D map psi -> -log psi - s/psi
    is maximized at psi = s and is monotone beyond the box."""
    b = spec.bounds
    diag_s = np.diag(moments.cov)
    if spec.error_type == DIAGONAL:
        psi = np.clip(diag_s, b.psi_min, b.psi_max)
    else:
        psi = np.array([float(np.clip(diag_s.mean(), b.psi_min, b.psi_max))])
    point = FactorPoint(np.zeros((spec.p, 0)), psi)
    sigma = construct_sigma(point, spec)
    layout = _Layout.for_spec(spec)
    x = layout.from_point(point)
    _, grad = _objective(x, layout, moments.cov, moments.n)
    pg = _projected_gradient_norm(x, grad, layout, moments.n)
    return FitResult(profiled_loglik(sigma, moments), point, sigma,
                     starts_converged=opts.starts, gradient_norm_at_solution=pg)


def _fit_explicit(spec: ModelSpec, moments: SampleMoments) -> FitResult:
    values = [profiled_loglik(m, moments) for m in spec.matrices]
    best = int(np.argmax(values))  # first maximizer wins ties
    return FitResult(values[best], None, spec.matrices[best].copy(),
                     starts_converged=0, gradient_norm_at_solution=0.0)


def fit_class(spec: ModelSpec, moments: SampleMoments, opts: FitOptions = FitOptions(),
              model_index: int = 0) -> FitResult:
    """Maximize the profiled criterion over one class.

    Explicit sets take the exact maximum over their members; order-zero
    classes use the closed-form projected solution; everything else runs the
    multi-start projected ascent.  Ties between starts break by larger value,
    then lower start index.  Identical (spec, moments, opts, model_index)
    give bit-identical results.
    """
    bad = spec.validate() + opts.validate()
    if bad:
        raise ValidationError("; ".join(bad))
    if spec.p != moments.p:
        raise ValidationError(f"spec dimension p={spec.p} does not match moments p={moments.p}")
    if spec.kind == EXPLICIT_SET:
        return _fit_explicit(spec, moments)
    if spec.pattern.q == 0:
        return _fit_order_zero(spec, moments, opts)

    layout = _Layout.for_spec(spec)
    results = multistart_results(spec, moments, opts, model_index)
    best = max(range(len(results)), key=lambda i: (results[i].value, -i))
    chosen = results[best]
    point = layout.to_point(layout.project(chosen.x))
    sigma = construct_sigma(point, spec)
    status = STATUS_OK if chosen.converged else STATUS_MAX_ITERS
    return FitResult(profiled_loglik(sigma, moments), point, sigma,
                     starts_converged=sum(r.converged for r in results),
                     gradient_norm_at_solution=chosen.pg_norm, status=status)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

_MAX_GRID = 10_000_000
_CHUNK = 1 << 17


def _batch_profiled(sigmas: np.ndarray, s_mat: np.ndarray, n: int) -> np.ndarray:
    """Profiled criterion for a stack of covariance matrices."""
    p = s_mat.shape[0]
    if p == 2:
        a, b, c = sigmas[:, 0, 0], sigmas[:, 0, 1], sigmas[:, 1, 1]
        det = a * c - b * b
        tr = (s_mat[0, 0] * c - 2.0 * s_mat[0, 1] * b + s_mat[1, 1] * a) / det
        return -0.5 * n * (np.log(det) + tr)
    sign, logdet = np.linalg.slogdet(sigmas)
    solved = np.linalg.solve(sigmas, np.broadcast_to(s_mat, sigmas.shape))
    tr = np.trace(solved, axis1=1, axis2=2)
    values = -0.5 * n * (logdet + tr)
    values[sign <= 0] = -np.inf
    return values


def brute_force_fit(spec: ModelSpec, moments: SampleMoments, grid_per_axis: int) -> FitResult:
    """Exhaustive grid evaluation over masked coordinates (test oracle).

    Loading axes run uniformly over [-M, M] (points then projected onto the
    Frobenius ball); uniqueness axes run over [psi_min, psi_max].  Returns the
    grid maximum; ties break at the first flat index.
    """
    bad = spec.validate()
    if bad:
        raise ValidationError("; ".join(bad))
    if spec.kind != FACTOR_CLASS:
        raise ValidationError("brute_force_fit applies to factor_class models")
    layout = _Layout.for_spec(spec)
    dims = layout.n_load + layout.n_uni
    total = grid_per_axis ** dims
    if total > _MAX_GRID:
        raise ValidationError(f"grid of {total} points exceeds the {_MAX_GRID} cap")

    load_axis = np.linspace(-layout.radius, layout.radius, grid_per_axis)
    uni_axis = np.linspace(layout.psi_lo, layout.psi_hi, grid_per_axis)
    shape = (grid_per_axis,) * dims

    best_value = -np.inf
    best_flat = 0
    for lo in range(0, total, _CHUNK):
        idx = np.arange(lo, min(lo + _CHUNK, total))
        coords = np.unravel_index(idx, shape)
        lam = np.stack([load_axis[coords[i]] for i in range(layout.n_load)], axis=1) \
            if layout.n_load else np.zeros((idx.size, 0))
        norms = np.linalg.norm(lam, axis=1)
        over = norms > layout.radius
        if over.any():
            lam[over] *= (layout.radius / norms[over])[:, None]
        psi = np.stack([uni_axis[coords[layout.n_load + j]] for j in range(layout.n_uni)], axis=1)
        lam3 = np.zeros((idx.size, layout.p, layout.q))
        if layout.n_load:
            lam3[:, layout.rows, layout.cols] = lam
        sigmas = np.einsum("nik,njk->nij", lam3, lam3)
        diag = np.arange(layout.p)
        sigmas[:, diag, diag] += psi  # (N, 1) broadcasts over the spherical diagonal
        values = _batch_profiled(sigmas, moments.cov, moments.n)
        k = int(np.argmax(values))
        if values[k] > best_value:
            best_value = float(values[k])
            best_flat = lo + k

    coords = np.unravel_index(best_flat, shape)
    lam = np.array([load_axis[coords[i]] for i in range(layout.n_load)])
    if lam.size:
        norm = np.linalg.norm(lam)
        if norm > layout.radius:
            lam *= layout.radius / norm
    psi = np.array([uni_axis[coords[layout.n_load + j]] for j in range(layout.n_uni)])
    point = layout.to_point(np.concatenate([lam, psi]))
    sigma = construct_sigma(point, spec)
    x = layout.from_point(point)
    _, grad = _objective(x, layout, moments.cov, moments.n)
    pg = _projected_gradient_norm(x, grad, layout, moments.n)
    return FitResult(profiled_loglik(sigma, moments), point, sigma,
                     starts_converged=0, gradient_norm_at_solution=pg)
