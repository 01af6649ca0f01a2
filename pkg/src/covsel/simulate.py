"""Data generation, Monte Carlo experiments, rate traces, and pathologies.

Replication seeds derive from (plan seed, replication, n), so extending an
n-grid never disturbs earlier cells, and reports are bit-identical across
repeated runs and across any worker count.  Non-Gaussian laws are scaled so
their covariance equals the target covariance exactly, which keeps the
pseudo-true analysis identical across laws.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .fit import FitOptions, fit_class
from .gauss_criterion import (
    PopulationTarget,
    SampleMoments,
    compute_moments,
    population_q,
    profiled_loglik,
)
from .model_space import (
    CandidateFamily,
    ModelSpec,
    ValidationError,
    family_from_dict,
    family_to_dict,
    validate_family,
)
from .penalties import PenaltySystem, penalties_for, system_from_dict
from .population import (
    PopulationSummary,
    g_star_representatives,
    pseudo_true_summary,
)
from .select import NumericalError, score_models

GAUSSIAN = "gaussian"
STUDENT_T = "student_t"
SCALE_MIXTURE = "scale_mixture"


@dataclass(frozen=True)
class DataLaw:
    """An iid law with exactly the stated mean and covariance.

    Student-t draws are scaled by sqrt((dof - 2) / dof) and mixture draws use
    unit-mean variance levels, so the generated covariance equals ``cov`` by
    construction and fourth moments are finite (dof > 4 enforced).
    """

    kind: str
    mean: np.ndarray
    cov: np.ndarray
    dof: float = 0.0
    mixture_weights: tuple[float, float] = (0.5, 0.5)
    mixture_levels: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))

    @classmethod
    def gaussian(cls, mean, cov) -> "DataLaw":
        return cls(GAUSSIAN, mean, cov)

    @classmethod
    def student_t(cls, mean, cov, dof: float) -> "DataLaw":
        return cls(STUDENT_T, mean, cov, dof=float(dof))

    @classmethod
    def scale_mixture(cls, mean, cov, weights, levels, normalize: bool = True) -> "DataLaw":
        w = (float(weights[0]), float(weights[1]))
        v = (float(levels[0]), float(levels[1]))
        if normalize:
            m = w[0] * v[0] + w[1] * v[1]
            if m <= 0:
                raise ValidationError("mixture levels must have positive mean")
            v = (v[0] / m, v[1] / m)
        return cls(SCALE_MIXTURE, mean, cov, mixture_weights=w, mixture_levels=v)

    @property
    def p(self) -> int:
        return self.mean.size

    def target(self) -> PopulationTarget:
        return PopulationTarget(self.mean, self.cov)

    def validate(self) -> list[str]:
        out = []
        if self.kind not in (GAUSSIAN, STUDENT_T, SCALE_MIXTURE):
            out.append(f"unknown law kind {self.kind!r}")
        if self.cov.shape != (self.p, self.p):
            out.append("law covariance shape does not match the mean")
        elif np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))[0] <= 0:
            out.append("law covariance must be positive definite")
        if self.kind == STUDENT_T and not self.dof > 4:
            out.append("student_t requires dof > 4 (finite fourth moment)")
        if self.kind == SCALE_MIXTURE:
            w, v = self.mixture_weights, self.mixture_levels
            if not (0 < w[0] < 1 and 0 < w[1] < 1 and abs(w[0] + w[1] - 1) < 1e-12):
                out.append("mixture weights must be positive and sum to 1")
            if min(v) <= 0:
                out.append("mixture variance levels must be positive")
            elif abs(w[0] * v[0] + w[1] * v[1] - 1.0) > 1e-12:
                out.append("mixture levels must satisfy the unit-mean normalization")
        return out


def generate_data(law: DataLaw, n: int, seed) -> np.ndarray:
    """n iid draws from the law; deterministic per (law, n, seed)."""
    bad = law.validate()
    if bad:
        raise ValidationError("; ".join(bad))
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    chol = np.linalg.cholesky(0.5 * (law.cov + law.cov.T))
    z = rng.standard_normal((n, law.p))
    x = z @ chol.T
    if law.kind == STUDENT_T:
        chi = rng.chisquare(law.dof, size=n)
        x *= np.sqrt((law.dof - 2.0) / chi)[:, None]
    elif law.kind == SCALE_MIXTURE:
        w1, (v1, v2) = law.mixture_weights[0], law.mixture_levels
        levels = np.where(rng.random(n) < w1, v1, v2)
        x *= np.sqrt(levels)[:, None]
    return x + law.mean


def cell_seed(plan_seed: int, replication: int, n: int) -> int:
    """Derived per-cell seed: hash of (plan seed, replication, n)."""
    ss = np.random.SeedSequence([int(plan_seed), int(replication), int(n)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MonteCarloPlan:
    n_grid: tuple[int, ...]
    replications: int
    seed: int
    law: DataLaw
    family: CandidateFamily
    systems: tuple[PenaltySystem, ...]

    def validate(self) -> list[str]:
        out = []
        if not self.n_grid or list(self.n_grid) != sorted(set(self.n_grid)):
            out.append("n_grid must be a nonempty strictly increasing list")
        if self.replications < 1:
            out.append("replications must be >= 1")
        if self.seed < 0:
            out.append("seed must be a nonnegative integer")
        if not self.systems:
            out.append("at least one penalty system is required")
        out.extend(self.law.validate())
        out.extend(validate_family(self.family))
        if not out and self.law.p != self.family.p:
            out.append("law dimension does not match the family dimension")
        return out


def _system_labels(systems) -> list[str]:
    labels, seen = [], {}
    for s in systems:
        base = s.name
        seen[base] = seen.get(base, 0) + 1
        labels.append(base if seen[base] == 1 else f"{base}#{seen[base]}")
    return labels


@dataclass
class CellStats:
    """Aggregated selections for one (system, n) cell."""

    n: int
    replications: int
    freq_by_order: dict[int, float]
    freq_by_model: dict[int, float]
    margin_mean: float
    margin_median: float
    fragile_fraction: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "replications": self.replications,
            "freq_by_order": {str(k): v for k, v in self.freq_by_order.items()},
            "freq_by_model": {str(k): v for k, v in self.freq_by_model.items()},
            "margin_mean": self.margin_mean,
            "margin_median": self.margin_median,
            "fragile_fraction": self.fragile_fraction,
        }


@dataclass
class McReport:
    n_grid: list[int]
    replications: int
    seed: int
    system_names: list[str]
    orders: list[int]
    cells: dict[str, dict[int, CellStats]]
    rep_seeds: dict[int, list[int]]

    def to_dict(self) -> dict:
        return {
            "n_grid": self.n_grid,
            "replications": self.replications,
            "seed": self.seed,
            "systems": self.system_names,
            "orders": self.orders,
            "cells": {name: {str(n): c.to_dict() for n, c in per_n.items()}
                      for name, per_n in self.cells.items()},
            "replication_seeds": {str(n): s for n, s in self.rep_seeds.items()},
        }

    def csv_rows(self) -> list[tuple[str, int, int, float]]:
        rows = []
        for name in self.system_names:
            for n in self.n_grid:
                for order, freq in sorted(self.cells[name][n].freq_by_order.items()):
                    rows.append((name, n, order, freq))
        return rows


def _aggregate_cell(n: int, picks: list[tuple[int, int, float]], orders: list[int],
                    m: int) -> CellStats:
    reps = len(picks)
    order_counts = {q: 0 for q in sorted(set(orders))}
    model_counts = {k: 0 for k in range(1, m + 1)}
    margins = []
    fragile = 0
    for index, order, margin in picks:
        order_counts[order] += 1
        model_counts[index] += 1
        margins.append(margin)
        if margin < 1e-6 * n:
            fragile += 1
    margins = np.asarray(margins)
    return CellStats(
        n=n, replications=reps,
        freq_by_order={q: c / reps for q, c in order_counts.items()},
        freq_by_model={k: c / reps for k, c in model_counts.items()},
        margin_mean=float(margins.mean()),
        margin_median=float(np.median(margins)),
        fragile_fraction=fragile / reps,
    )


def run_monte_carlo(plan: MonteCarloPlan, opts: FitOptions = FitOptions(),
                    workers: int = 1) -> McReport:
    """Selection frequencies per (system, n) over seeded replications.

    Each model is fitted once per cell and its T value reused across all
    penalty systems.  Cells are independent work units; aggregation follows
    the fixed cell order, so the report does not depend on ``workers``.
    """
    bad = plan.validate()
    if bad:
        raise ValidationError("; ".join(bad))
    labels = _system_labels(plan.systems)
    orders = plan.family.orders
    m = plan.family.m
    penalty_cache = {(lab, n): penalties_for(sys, plan.family, n)
                     for lab, sys in zip(labels, plan.systems) for n in plan.n_grid}

    def run_cell(args):
        r, n = args
        seed = cell_seed(plan.seed, r, n)
        moments = compute_moments(generate_data(plan.law, n, seed))
        t_values = np.array([fit_class(spec, moments, opts, model_index=i).t_value
                             for i, spec in enumerate(plan.family.models)])
        picks = {}
        for lab in labels:
            _, pos, margin = score_models(t_values, penalty_cache[(lab, n)])
            picks[lab] = (pos + 1, orders[pos], margin)
        return seed, picks

    cells_in = [(r, n) for n in plan.n_grid for r in range(plan.replications)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_cell, cells_in))
    else:
        outcomes = [run_cell(c) for c in cells_in]

    rep_seeds: dict[int, list[int]] = {n: [] for n in plan.n_grid}
    by_cell: dict[str, dict[int, list]] = {lab: {n: [] for n in plan.n_grid} for lab in labels}
    for (r, n), (seed, picks) in zip(cells_in, outcomes):
        rep_seeds[n].append(seed)
        for lab in labels:
            by_cell[lab][n].append(picks[lab])

    cells = {lab: {n: _aggregate_cell(n, by_cell[lab][n], orders, m) for n in plan.n_grid}
             for lab in labels}
    return McReport(list(plan.n_grid), plan.replications, plan.seed, labels, orders,
                    cells, rep_seeds)


# ---------------------------------------------------------------------------
# Rate traces for exact overfits and suboptimal models
# ---------------------------------------------------------------------------

def _u_value(gstar: list[np.ndarray], moments: SampleMoments) -> float:
    return max(profiled_loglik(g, moments) for g in gstar)


@dataclass
class GainTrace:
    """Per-n distribution of the likelihood gain of one exact overfit over
    the pseudo-true benchmark."""

    k_overfit: int
    n_grid: list[int]
    gains: dict[int, list[float]]
    median_gain: dict[int, float]
    median_over_log: dict[int, float]
    median_over_loglog: dict[int, float]
    loglog_ratio_slope: float
    g_star_exact: bool

    def to_dict(self) -> dict:
        return {
            "k_overfit": self.k_overfit,
            "n_grid": self.n_grid,
            "median_gain": {str(n): v for n, v in self.median_gain.items()},
            "median_over_log": {str(n): v for n, v in self.median_over_log.items()},
            "median_over_loglog": {str(n): v for n, v in self.median_over_loglog.items()},
            "loglog_ratio_slope": self.loglog_ratio_slope,
            "g_star_exact": self.g_star_exact,
        }


def overfit_gain_trace(family: CandidateFamily, law: DataLaw, k_overfit: int,
                       n_grid, replications: int, seed: int,
                       opts: FitOptions = FitOptions(),
                       summary: PopulationSummary | None = None) -> GainTrace:
    """Trace T_k - U_n for an exact overfit k across the n-grid.

    Refuses models that are not exact overfits (k must be globally optimal
    with order strictly above the pseudo-true order).  The gain is bounded
    below by 0 up to optimizer tolerance because G* lies inside class k.
    """
    target = law.target()
    if summary is None:
        summary = pseudo_true_summary(family, target, opts=opts)
    orders = summary.orders
    if k_overfit not in summary.k_star or orders[k_overfit - 1] <= summary.q_star:
        raise ValidationError(
            f"model {k_overfit} is not an exact overfit: needs k in K* with order > "
            f"q* = {summary.q_star} (K* = {summary.k_star})")
    gstar, exact = g_star_representatives(summary, target)
    spec = family.models[k_overfit - 1]
    n_grid = [int(n) for n in n_grid]
    gains: dict[int, list[float]] = {n: [] for n in n_grid}
    for n in n_grid:
        for r in range(replications):
            moments = compute_moments(generate_data(law, n, cell_seed(seed, r, n)))
            t_k = fit_class(spec, moments, opts, model_index=k_overfit - 1).t_value
            gains[n].append(t_k - _u_value(gstar, moments))
    med = {n: float(np.median(gains[n])) for n in n_grid}
    over_log = {n: med[n] / math.log(n) for n in n_grid}
    over_loglog = {n: med[n] / math.log(math.log(n)) for n in n_grid}
    slope = float(np.polyfit(np.log(n_grid), [over_loglog[n] for n in n_grid], 1)[0])
    return GainTrace(k_overfit, n_grid, gains, med, over_log, over_loglog, slope, exact)


@dataclass
class LossTrace:
    """Per-n distribution of (T_k - U_n)/n for a suboptimal model, together
    with its population limit -(V* - V_k)."""

    k_sub: int
    n_grid: list[int]
    ratios: dict[int, list[float]]
    mean_ratio: dict[int, float]
    population_limit: float
    g_star_exact: bool

    def to_dict(self) -> dict:
        return {
            "k_sub": self.k_sub,
            "n_grid": self.n_grid,
            "mean_ratio": {str(n): v for n, v in self.mean_ratio.items()},
            "population_limit": self.population_limit,
            "g_star_exact": self.g_star_exact,
        }


def suboptimal_loss_trace(family: CandidateFamily, law: DataLaw, k_sub: int,
                          n_grid, replications: int, seed: int,
                          opts: FitOptions = FitOptions(),
                          summary: PopulationSummary | None = None) -> LossTrace:
    """Trace (T_k - U_n)/n for a model outside K*; the mean converges to the
    strictly negative limit -(V* - V_k)."""
    target = law.target()
    if summary is None:
        summary = pseudo_true_summary(family, target, opts=opts)
    if k_sub in summary.k_star:
        raise ValidationError(f"model {k_sub} lies in K*; the loss trace needs k outside K*")
    gstar, exact = g_star_representatives(summary, target)
    spec = family.models[k_sub - 1]
    n_grid = [int(n) for n in n_grid]
    ratios: dict[int, list[float]] = {n: [] for n in n_grid}
    for n in n_grid:
        for r in range(replications):
            moments = compute_moments(generate_data(law, n, cell_seed(seed, r, n)))
            t_k = fit_class(spec, moments, opts, model_index=k_sub - 1).t_value
            ratios[n].append((t_k - _u_value(gstar, moments)) / n)
    mean_ratio = {n: float(np.mean(ratios[n])) for n in n_grid}
    limit = -(summary.v_star - summary.v_values[k_sub - 1])
    return LossTrace(k_sub, n_grid, ratios, mean_ratio, limit, exact)


# ---------------------------------------------------------------------------
# Pathology constructions
# ---------------------------------------------------------------------------

def sigma_plus(sigma_minus: float) -> float:
    """The unique sigma > 1 with the same population criterion value as
    sigma_minus in the scalar problem with unit target variance.

    Solves log(s) + 1/s = log(sigma_minus) + 1/sigma_minus on (1, inf) by
    bisection to 1e-12, then polishes with Newton steps; the residual is
    checked before returning.
    """
    if not 0.0 < sigma_minus < 1.0:
        raise ValidationError("sigma_minus must lie in (0, 1)")
    f_target = math.log(sigma_minus) + 1.0 / sigma_minus

    def f(s: float) -> float:
        return math.log(s) + 1.0 / s - f_target

    lo, hi = 1.0, 2.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e12:
            raise NumericalError("sigma_plus bracket expansion failed")
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    for _ in range(4):  # Newton polish: bisection residual is too coarse at n ~ 1e5
        deriv = (s - 1.0) / (s * s)
        s -= f(s) / deriv
    if abs(f(s)) > 1e-12:
        raise NumericalError(f"sigma_plus residual {f(s):.3e} exceeds 1e-12")
    return float(s)


def two_point_family(sigma_minus: float) -> tuple[CandidateFamily, float]:
    """The two singleton classes of the common-projection pathology, with
    equal complexity counts."""
    s_plus = sigma_plus(sigma_minus)
    models = [ModelSpec.explicit_set([[[sigma_minus]]], nominal_order=0),
              ModelSpec.explicit_set([[[s_plus]]], nominal_order=0)]
    return CandidateFamily(models, [1.0, 1.0]), s_plus


@dataclass
class PathologyReport:
    """Two-point pathology outcomes: the contrast identity residual, its
    scale, and the non-stabilizing selection frequencies."""

    sigma_minus: float
    sigma_plus: float
    n_grid: list[int]
    replications: int
    system_names: list[str]
    freq_model1: dict[str, dict[int, float]]
    freq_model2: dict[str, dict[int, float]]
    contrast_sd: dict[int, float]
    contrast_sd_over_sqrt_n: dict[int, float]
    identity_max_abs_err: dict[int, float]

    def to_dict(self) -> dict:
        return {
            "sigma_minus": self.sigma_minus,
            "sigma_plus": self.sigma_plus,
            "n_grid": self.n_grid,
            "replications": self.replications,
            "systems": self.system_names,
            "freq_model1": {s: {str(n): v for n, v in d.items()}
                            for s, d in self.freq_model1.items()},
            "freq_model2": {s: {str(n): v for n, v in d.items()}
                            for s, d in self.freq_model2.items()},
            "contrast_sd": {str(n): v for n, v in self.contrast_sd.items()},
            "contrast_sd_over_sqrt_n": {str(n): v
                                        for n, v in self.contrast_sd_over_sqrt_n.items()},
            "identity_max_abs_err": {str(n): v for n, v in self.identity_max_abs_err.items()},
        }


def pathology_two_point(sigma_minus: float, n_grid, replications: int, seed: int,
                        systems: tuple[PenaltySystem, ...] | None = None) -> PathologyReport:
    """Monte Carlo on the two-singleton family under unit-variance Gaussian data.

    Per replication the likelihood contrast T_1 - T_2 is compared with its
    closed form -(n/2) (S_n - 1) (1/sigma_minus - 1/sigma_plus); because the
    contrast fluctuates at the sqrt(n) scale with mean zero, no penalty of
    BIC size stabilizes the selection.
    """
    if systems is None:
        systems = (PenaltySystem.named("bic"),)
    family, s_plus = two_point_family(sigma_minus)
    labels = _system_labels(systems)
    law = DataLaw.gaussian([0.0], [[1.0]])
    n_grid = [int(n) for n in n_grid]
    coef = 1.0 / sigma_minus - 1.0 / s_plus

    freq1 = {lab: {} for lab in labels}
    freq2 = {lab: {} for lab in labels}
    sd, sd_scaled, max_err = {}, {}, {}
    for n in n_grid:
        contrasts = np.empty(replications)
        errs = np.empty(replications)
        counts = {lab: [0, 0] for lab in labels}
        pens = {lab: penalties_for(sys, family, n) for lab, sys in zip(labels, systems)}
        for r in range(replications):
            data = generate_data(law, n, cell_seed(seed, r, n))
            s_n = float(np.mean((data - data.mean()) ** 2))
            t1 = -0.5 * n * (math.log(sigma_minus) + s_n / sigma_minus)
            t2 = -0.5 * n * (math.log(s_plus) + s_n / s_plus)
            closed = -0.5 * n * (s_n - 1.0) * coef
            contrasts[r] = t1 - t2
            errs[r] = abs((t1 - t2) - closed)
            for lab in labels:
                _, pos, _ = score_models(np.array([t1, t2]), pens[lab])
                counts[lab][pos] += 1
        for lab in labels:
            freq1[lab][n] = counts[lab][0] / replications
            freq2[lab][n] = counts[lab][1] / replications
        sd[n] = float(np.std(contrasts))
        sd_scaled[n] = float(np.std(contrasts / math.sqrt(n)))
        max_err[n] = float(errs.max())
    return PathologyReport(sigma_minus, s_plus, n_grid, replications, labels,
                           freq1, freq2, sd, sd_scaled, max_err)


@dataclass
class FlatMarginCurve:
    """Level-curve construction evidence: residuals of the root solve and the
    quartic decay of the criterion along the perturbed curve."""

    ts: list[float]
    residuals: dict[float, float]
    dists: dict[float, float]
    gaps: dict[float, float]
    slope: float
    sigma_star: np.ndarray

    def to_dict(self) -> dict:
        return {
            "ts": self.ts,
            "residuals": {f"{t:g}": v for t, v in self.residuals.items()},
            "dists": {f"{t:g}": v for t, v in self.dists.items()},
            "gaps": {f"{t:g}": v for t, v in self.gaps.items()},
            "slope": self.slope,
            "sigma_star": self.sigma_star.tolist(),
        }


def _dq_matrix(sigma: np.ndarray, cov0: np.ndarray) -> np.ndarray:
    """Gradient of Q at sigma as a symmetric matrix: DQ[H] = <grad, H>_F."""
    inv = np.linalg.inv(sigma)
    grad = -0.5 * (inv - inv @ cov0 @ inv)
    return 0.5 * (grad + grad.T)


def build_flat_margin_class(target: PopulationTarget, sigma_star: np.ndarray,
                            t_grid, curve_points: int = 0,
                            seed: int = 0) -> tuple[ModelSpec, FlatMarginCurve]:
    """Explicit-set class along a level curve of Q, perturbed so the
    criterion decays quartically in the distance to its maximizer.

    Walks the level set of Q through sigma_star (tangent direction in the
    null space of DQ, corrector along the descent gradient, 1-D root solve
    per t), then shifts each point by t^4 times a descent direction.  The
    construction is refused at sigma_star = cov0, where the gradient
    vanishes.  Requires p >= 2.

    ``t_grid`` gives the curve parameters to sample (0 and both signs are
    always included); ``curve_points`` asks for at least that many samples,
    filled symmetrically between the smallest and largest |t|.
    """
    sigma_star = np.atleast_2d(np.asarray(sigma_star, dtype=float))
    cov0 = target.cov
    p = cov0.shape[0]
    if p < 2:
        raise ValidationError("the flat-margin construction requires p >= 2")
    if np.linalg.eigvalsh(sigma_star)[0] <= 0:
        raise ValidationError("sigma_star must be positive definite")
    grad = _dq_matrix(sigma_star, cov0)
    grad_norm = float(np.linalg.norm(grad))
    if grad_norm < 1e-10:
        raise ValidationError(
            "DQ vanishes at sigma_star = cov0; the level-curve construction needs "
            "sigma_star != cov0")

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 416217]))
    tangent = None
    for _ in range(16):
        raw = rng.standard_normal((p, p))
        raw = 0.5 * (raw + raw.T)
        cand = raw - (float(np.sum(grad * raw)) / grad_norm ** 2) * grad
        if np.linalg.norm(cand) > 1e-8:
            tangent = cand / np.linalg.norm(cand)
            break
    if tangent is None:
        raise NumericalError("failed to draw a tangent direction in the null space of DQ")
    descent = -grad / grad_norm  # DQ[descent] = -||grad|| < 0

    q_star = population_q(sigma_star, target)

    def level_gap(t: float, s: float) -> float:
        return population_q(sigma_star + t * tangent + s * descent, target) - q_star

    ts = {0.0}
    for t in t_grid:
        t = float(t)
        if t == 0.0:
            continue
        ts.add(t)
        ts.add(-t)
    if curve_points > len(ts):
        mags = sorted(abs(t) for t in ts if t != 0.0)
        extra = np.linspace(mags[0], mags[-1], (curve_points - len(ts) + 3) // 2 + 2)[1:-1]
        for t in extra:
            ts.add(float(t))
            ts.add(-float(t))
    ts = sorted(ts)

    matrices, residuals, dists, gaps = [], {}, {}, {}
    for t in ts:
        if t == 0.0:
            zeta = sigma_star.copy()
        else:
            s_root = _solve_level_root(level_gap, t, grad_norm)
            zeta = sigma_star + t * tangent + s_root * descent
        resid = abs(population_q(zeta, target) - q_star)
        if resid > 1e-10:
            raise NumericalError(f"level-curve residual {resid:.3e} at t={t:g} exceeds 1e-10")
        gamma = zeta + (t ** 4) * descent
        if np.linalg.eigvalsh(gamma)[0] <= 0:
            raise NumericalError(f"curve point at t={t:g} is not positive definite")
        matrices.append(gamma)
        residuals[t] = resid
        dists[t] = float(np.linalg.norm(gamma - sigma_star))
        gaps[t] = q_star - population_q(gamma, target)

    spec = ModelSpec.explicit_set(matrices, nominal_order=0)
    v_class = max(population_q(m, target) for m in spec.matrices)
    xs, ys = [], []
    for t in ts:
        gap = v_class - (q_star - gaps[t])
        if t != 0.0 and gap > 0:
            xs.append(math.log(dists[t]))
            ys.append(math.log(gap))
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(xs) >= 2 else float("nan")
    return spec, FlatMarginCurve(ts, residuals, dists, gaps, slope, sigma_star)


def _solve_level_root(level_gap, t: float, grad_norm: float) -> float:
    """Root of s -> Q(sigma* + t T + s G) - Q(sigma*); the gap is decreasing
    in s near zero since DQ[G] = -||grad||."""
    f0 = level_gap(t, 0.0)
    if f0 == 0.0:
        return 0.0
    side = 1.0 if f0 > 0 else -1.0
    width = max(4.0 * abs(f0) / grad_norm, 1e-12)
    for _ in range(80):
        if level_gap(t, side * width) * f0 < 0:
            break
        width *= 2.0
    else:
        raise NumericalError(f"level-curve root bracketing failed at t={t:g}")
    lo, hi = (0.0, side * width) if side > 0 else (side * width, 0.0)
    return float(optimize.brentq(lambda s: level_gap(t, s), lo, hi,
                                 xtol=1e-16, rtol=8.9e-16, maxiter=200))


# ---------------------------------------------------------------------------
# Plan JSON
# ---------------------------------------------------------------------------

def law_from_dict(doc: dict) -> DataLaw:
    try:
        kind = doc["kind"]
        mean = np.asarray(doc["mean"], dtype=float)
        cov = np.asarray(doc["cov"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed law document: {exc}") from exc
    if kind == GAUSSIAN:
        law = DataLaw.gaussian(mean, cov)
    elif kind == STUDENT_T:
        law = DataLaw.student_t(mean, cov, float(doc.get("dof", 0.0)))
    elif kind == SCALE_MIXTURE:
        law = DataLaw.scale_mixture(mean, cov, doc.get("weights", (0.5, 0.5)),
                                    doc.get("levels", (1.0, 1.0)))
    else:
        raise ValidationError(f"unknown law kind {kind!r}")
    bad = law.validate()
    if bad:
        raise ValidationError("; ".join(bad))
    return law


def law_to_dict(law: DataLaw) -> dict:
    doc = {"kind": law.kind, "mean": law.mean.tolist(), "cov": law.cov.tolist()}
    if law.kind == STUDENT_T:
        doc["dof"] = law.dof
    if law.kind == SCALE_MIXTURE:
        doc["weights"] = list(law.mixture_weights)
        doc["levels"] = list(law.mixture_levels)
    return doc


def plan_from_dict(doc: dict) -> MonteCarloPlan:
    try:
        plan = MonteCarloPlan(
            n_grid=tuple(int(n) for n in doc["n_grid"]),
            replications=int(doc["replications"]),
            seed=int(doc["seed"]),
            law=law_from_dict(doc["law"]),
            family=family_from_dict(doc["family"]),
            systems=tuple(system_from_dict(s) for s in doc["systems"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed plan document: {exc}") from exc
    bad = plan.validate()
    if bad:
        raise ValidationError("; ".join(bad))
    return plan


def load_plan_file(path) -> MonteCarloPlan:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"plan file is not valid JSON: {exc}") from exc
    return plan_from_dict(doc)


def plan_to_dict(plan: MonteCarloPlan) -> dict:
    systems = []
    for s in plan.systems:
        if s.kind == "separable":
            systems.append({"kind": s.kind, "multiplier": s.multiplier, "alpha": s.alpha,
                            "scores": None if s.scores is None else list(s.scores)})
        elif s.kind == "table":
            systems.append({"kind": s.kind, "n_grid": list(s.table_n),
                            "values": [list(r) for r in s.table_values]})
        else:
            systems.append(s.kind)
    return {"n_grid": list(plan.n_grid), "replications": plan.replications,
            "seed": plan.seed, "law": law_to_dict(plan.law),
            "family": family_to_dict(plan.family), "systems": systems}
