"""Population optima, pseudo-true order machinery, and margin diagnostics.

The population criterion is the profiled criterion with the sample covariance
replaced by the target covariance and the n-scaling removed, so every fit
here reuses the sample-level optimizer on n=1 "moments" built from the
target.  Pseudo-true sets are represented by clustered optimizer outputs;
reports carry the caveat that these are representatives, not certified full
sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model_space as ms
from .fit import FitOptions, fit_class, multistart_results, _Layout
from .gauss_criterion import PopulationTarget, population_q
from .model_space import (
    EXPLICIT_SET,
    CandidateFamily,
    FactorPoint,
    ModelSpec,
    ValidationError,
    validate_family,
)

#: Frobenius radius within which population maximizers are merged.
EPSILON_CLUSTER = 1e-4

#: Relative tolerance separating true maximizers from inferior local maxima.
_VALUE_FILTER_REL = 1e-9


def default_epsilon_v(v_star: float) -> float:
    """Tie tolerance for global optimality: population optimization is
    noiseless, so ties are sharp up to optimizer tolerance."""
    return 1e-6 * abs(v_star) + 1e-9


@dataclass
class PopulationRep:
    """One clustered maximizer: its covariance, criterion value, and (for
    factor classes) the parameter point that produced it."""

    sigma: np.ndarray
    q_value: float
    point: FactorPoint | None = None


def _cluster_reps(candidates: list[PopulationRep], epsilon_cluster: float) -> list[PopulationRep]:
    """Greedy clustering, best value first; each cluster keeps its best member."""
    ordered = sorted(range(len(candidates)), key=lambda i: (-candidates[i].q_value, i))
    reps: list[PopulationRep] = []
    for i in ordered:
        cand = candidates[i]
        if all(np.linalg.norm(cand.sigma - r.sigma) > epsilon_cluster for r in reps):
            reps.append(cand)
    return reps


def population_fit(spec: ModelSpec, target: PopulationTarget,
                   opts: FitOptions = FitOptions(),
                   epsilon_cluster: float = EPSILON_CLUSTER,
                   model_index: int = 0) -> tuple[float, list[PopulationRep]]:
    """Population optimum V_k and clustered maximizer representatives.

    Returns (V_k, reps) where reps holds one representative per cluster of
    near-optimal converged starts (or, for explicit sets, every member
    matrix attaining the maximum within the value tolerance).
    """
    bad = spec.validate()
    if bad:
        raise ValidationError("; ".join(bad))
    moments = target.as_moments()

    if spec.kind == EXPLICIT_SET:
        values = [population_q(m, target) for m in spec.matrices]
        v_best = float(max(values))
        tol = _VALUE_FILTER_REL * (1.0 + abs(v_best))
        cands = [PopulationRep(m.copy(), v, None)
                 for m, v in zip(spec.matrices, values) if v >= v_best - tol]
        return v_best, _cluster_reps(cands, epsilon_cluster)

    if spec.pattern.q == 0:
        res = fit_class(spec, moments, opts, model_index)
        return res.t_value, [PopulationRep(res.sigma, res.t_value, res.best_point)]

    layout = _Layout.for_spec(spec)
    starts = multistart_results(spec, moments, opts, model_index)
    usable = [s for s in starts if s.converged] or [max(starts, key=lambda s: s.value)]
    v_best = max(s.value for s in usable)
    tol = _VALUE_FILTER_REL * (1.0 + abs(v_best))
    cands = []
    for s in usable:
        if s.value >= v_best - tol:
            point = layout.to_point(layout.project(s.x))
            cands.append(PopulationRep(ms.point_sigma(point), s.value, point))
    return float(v_best), _cluster_reps(cands, epsilon_cluster)


@dataclass
class PopulationSummary:
    """Per-class population optima and the pseudo-true order bookkeeping.

    Index sets are 1-based and satisfy K** <= K0 <= K* <= {1..m}.
    """

    v_values: list[float]
    v_star: float
    k_star: list[int]
    q_star: int
    k_zero: list[int]
    k_double_star: list[int]
    pseudo_true_reps: list[list[np.ndarray]]
    epsilon_v: float
    orders: list[int]
    complexities: list[float]
    rep_points: list[list[FactorPoint | None]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "v_values": self.v_values,
            "v_star": self.v_star,
            "k_star": self.k_star,
            "q_star": self.q_star,
            "k_zero": self.k_zero,
            "k_double_star": self.k_double_star,
            "epsilon_v": self.epsilon_v,
            "orders": self.orders,
            "complexities": self.complexities,
            "pseudo_true_reps": [[m.tolist() for m in reps] for reps in self.pseudo_true_reps],
            "note": "pseudo-true sets are clustered optimizer representatives, "
                    "not certified full sets",
        }


def pseudo_true_summary(family: CandidateFamily, target: PopulationTarget,
                        epsilon_v: float | None = None,
                        opts: FitOptions = FitOptions(),
                        epsilon_cluster: float = EPSILON_CLUSTER) -> PopulationSummary:
    """Population optima for every model plus K*, q*, K0, and K**.

    K* collects models with V_k >= V* - epsilon_v; q* is the smallest order
    in K*; K0 the minimal-order members of K*; K** the minimal-complexity
    members of K0.
    """
    violations = validate_family(family)
    if violations:
        raise ValidationError("; ".join(violations))
    fits = [population_fit(spec, target, opts, epsilon_cluster, model_index=i)
            for i, spec in enumerate(family.models)]
    v_values = [v for v, _ in fits]
    v_star = float(max(v_values))
    if epsilon_v is None:
        epsilon_v = default_epsilon_v(v_star)
    orders = family.orders
    k_star = [i + 1 for i, v in enumerate(v_values) if v >= v_star - epsilon_v]
    q_star = min(orders[k - 1] for k in k_star)
    k_zero = [k for k in k_star if orders[k - 1] == q_star]
    d_star = min(family.complexities[k - 1] for k in k_zero)
    k_double_star = [k for k in k_zero if family.complexities[k - 1] == d_star]
    return PopulationSummary(
        v_values=v_values, v_star=v_star, k_star=k_star, q_star=q_star,
        k_zero=k_zero, k_double_star=k_double_star,
        pseudo_true_reps=[[r.sigma for r in reps] for _, reps in fits],
        epsilon_v=float(epsilon_v), orders=orders,
        complexities=list(family.complexities),
        rep_points=[[r.point for r in reps] for _, reps in fits],
    )


def hausdorff_distance(set_a: list[np.ndarray], set_b: list[np.ndarray]) -> float:
    """Max-min Frobenius distance between two finite matrix sets."""
    if not set_a or not set_b:
        raise ValidationError("Hausdorff distance requires nonempty sets")
    d_ab = max(min(float(np.linalg.norm(a - b)) for b in set_b) for a in set_a)
    d_ba = max(min(float(np.linalg.norm(a - b)) for a in set_a) for b in set_b)
    return max(d_ab, d_ba)


def g_star_representatives(summary: PopulationSummary, target: PopulationTarget,
                           epsilon_cluster: float = EPSILON_CLUSTER
                           ) -> tuple[list[np.ndarray], bool]:
    """Representatives of the common pseudo-true set G*.

    When V* matches the ambient optimum Q(cov0), the ambient maximizer is
    unique, so G* = {cov0} exactly and the flag is True.  Otherwise the
    clustered representatives of the minimal-order optimal models are merged
    (flag False: represented, not exact).
    """
    ambient = population_q(target.cov, target)
    if abs(summary.v_star - ambient) <= 1e-8 * (1.0 + abs(ambient)):
        return [target.cov.copy()], True
    merged = [PopulationRep(sigma, summary.v_values[k - 1])
              for k in summary.k_zero for sigma in summary.pseudo_true_reps[k - 1]]
    reps = _cluster_reps(merged, epsilon_cluster)
    return [r.sigma for r in reps], False


@dataclass
class AssumptionDiagnostics:
    """Numerical evidence for the common-projection and quadratic-margin
    assumptions; evidence only, not certification."""

    m2_hausdorff: float
    m3_exponents: dict[int, float]
    m3_constants: dict[int, float]
    verdicts: dict[str, dict]
    notes: list[str]

    def to_dict(self) -> dict:
        return {
            "m2_hausdorff": self.m2_hausdorff,
            "m3_exponents": {str(k): v for k, v in self.m3_exponents.items()},
            "m3_constants": {str(k): v for k, v in self.m3_constants.items()},
            "verdicts": self.verdicts,
            "notes": self.notes,
        }


def _probe_factor_class(spec: ModelSpec, base_point: FactorPoint, gstar: list[np.ndarray],
                        target: PopulationTarget, probe_count: int, eta: float,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Admissible in-class probes near G*: jitter the representative point in
    masked coordinates, project, and keep probes landing inside the eta-ball."""
    layout = _Layout.for_spec(spec)
    x_base = layout.from_point(base_point)
    dim = x_base.size
    dists, gaps = [], []
    floor = eta * 1e-4
    max_attempts = probe_count * 40
    log_lo, log_hi = np.log(eta / 50.0), np.log(eta / 2.0)
    for _ in range(max_attempts):
        if len(dists) >= probe_count:
            break
        scale = float(np.exp(rng.uniform(log_lo, log_hi)))
        x = layout.project(x_base + scale * rng.standard_normal(dim))
        sigma = ms.point_sigma(layout.to_point(x))
        dist = min(float(np.linalg.norm(sigma - g)) for g in gstar)
        if not (floor < dist < eta):
            continue
        dists.append(dist)
        gaps.append(population_q(sigma, target))
    return np.asarray(dists), np.asarray(gaps)


def _probe_explicit(spec: ModelSpec, gstar: list[np.ndarray], target: PopulationTarget,
                    eta: float) -> tuple[np.ndarray, np.ndarray]:
    dists, gaps = [], []
    floor = eta * 1e-6
    for m in spec.matrices:
        dist = min(float(np.linalg.norm(m - g)) for g in gstar)
        if floor < dist < eta:
            dists.append(dist)
            gaps.append(population_q(m, target))
    return np.asarray(dists), np.asarray(gaps)


def diagnose_assumptions(family: CandidateFamily, summary: PopulationSummary,
                         target: PopulationTarget, probe_count: int = 200,
                         eta: float = 0.1, opts: FitOptions = FitOptions(),
                         epsilon_cluster: float = EPSILON_CLUSTER) -> AssumptionDiagnostics:
    """Probe the globally optimal classes for M2/M3 evidence.

    M2 evidence: the max pairwise Hausdorff distance between clustered
    pseudo-true sets over K* (pass iff <= 10 * epsilon_cluster).  M3 evidence:
    per overfit-eligible model, the least-squares exponent of V* - Q against
    distance to G* over in-class probes inside the eta-ball; an exponent near
    2 with a positive fitted constant indicates the quadratic margin, while
    clearly flatter decay (exponent >= 3) means the margin fails.
    """
    m2_threshold = 10.0 * epsilon_cluster
    notes = []
    k_star = summary.k_star
    m2 = 0.0
    for a_pos in range(len(k_star)):
        for b_pos in range(a_pos + 1, len(k_star)):
            sets_a = summary.pseudo_true_reps[k_star[a_pos] - 1]
            sets_b = summary.pseudo_true_reps[k_star[b_pos] - 1]
            m2 = max(m2, hausdorff_distance(sets_a, sets_b))

    gstar, exact = g_star_representatives(summary, target, epsilon_cluster)
    if not exact:
        notes.append("G* is represented by clustered optimizer outputs, not exact")

    min_probes = 8
    exponents: dict[int, float] = {}
    constants: dict[int, float] = {}
    rng = np.random.default_rng(np.random.SeedSequence([int(opts.seed), 779311]))
    for k in k_star:
        spec = family.models[k - 1]
        if spec.kind == EXPLICIT_SET:
            dists, qvals = _probe_explicit(spec, gstar, target, eta)
        else:
            base = summary.rep_points[k - 1][0] if summary.rep_points[k - 1] else None
            if base is None:
                notes.append(f"model {k}: no representative point available for probing")
                exponents[k], constants[k] = float("nan"), float("nan")
                continue
            dists, qvals = _probe_factor_class(spec, base, gstar, target,
                                               probe_count, eta, rng)
        gaps = summary.v_star - qvals
        keep = gaps > 0
        dists, gaps = dists[keep], gaps[keep]
        if dists.size < min_probes:
            notes.append(f"model {k}: too few probes landed inside the eta-ball "
                         f"({dists.size} accepted, need >= {min_probes})")
            exponents[k], constants[k] = float("nan"), float("nan")
            continue
        slope, intercept = np.polyfit(np.log(dists), np.log(gaps), 1)
        exponents[k] = float(slope)
        constants[k] = float(np.exp(intercept))

    m2_verdict = "pass" if m2 <= m2_threshold else "fail"
    finite = [e for e in exponents.values() if np.isfinite(e)]
    if not finite:
        m3_verdict = "warn"
        notes.append("M3: no model produced enough probes for an exponent fit")
    else:
        worst = max(finite)
        m3_verdict = "pass" if worst <= 2.2 else ("warn" if worst <= 3.0 else "fail")
    verdicts = {
        "m2": {"verdict": m2_verdict, "hausdorff": m2, "threshold": m2_threshold},
        "m3": {"verdict": m3_verdict, "pass_max_exponent": 2.2, "fail_min_exponent": 3.0},
    }
    return AssumptionDiagnostics(m2, exponents, constants, verdicts, notes)


def margin_constant_correct_spec(target: PopulationTarget) -> float:
    """Curvature-derived local margin constant 1 / (4 ||cov0||_op^2):
    Q(sigma) <= Q(cov0) - c ||sigma - cov0||_F^2 near cov0."""
    op_norm = float(np.linalg.eigvalsh(target.cov)[-1])
    return 0.25 / (op_norm * op_norm)
