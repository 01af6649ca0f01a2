"""Candidate covariance classes, their constraints, and complexity counts.

A structured factor class describes covariance matrices

    sigma = loadings @ loadings.T + psi

where ``loadings`` is a p x q matrix that vanishes off a support pattern and
is bounded in Frobenius norm, and ``psi`` is a diagonal or spherical error
covariance whose entries live in a fixed box.  Explicit-set classes instead
list their member matrices directly; they exist so that finite families of
fixed covariances (the pathology constructions) are first-class candidates.

Index convention: support-pattern entries and model indices are 1-based
(rows in 1..p, columns in 1..q), matching the report format.  Internally
everything is 0-based numpy.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

DIAGONAL = "diagonal"
SPHERICAL = "spherical"

_ERROR_ALIASES = {
    "diag": DIAGONAL,
    "diagonal": DIAGONAL,
    "sph": SPHERICAL,
    "spherical": SPHERICAL,
}

#: Relative slack used when checking box / radius / mask feasibility of points.
FEASIBILITY_RTOL = 1e-9


class ValidationError(ValueError):
    """A model spec, family, or point violates its declared invariants."""


def normalize_error_type(tag: str) -> str:
    try:
        return _ERROR_ALIASES[tag]
    except KeyError:
        raise ValidationError(f"unknown error type {tag!r}; expected 'diagonal' or 'spherical'")


@dataclass(frozen=True)
class SupportPattern:
    """Set of 1-based (row, column) positions where loadings may be nonzero.

    Entries are stored sorted row-major so equal patterns serialize equally.
    """

    p: int
    q: int
    entries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        canon = tuple(sorted((int(r), int(c)) for r, c in self.entries))
        object.__setattr__(self, "entries", canon)

    @classmethod
    def full(cls, p: int, q: int) -> "SupportPattern":
        return cls(p, q, tuple((r, c) for r in range(1, p + 1) for c in range(1, q + 1)))

    def validate(self) -> list[str]:
        out = []
        if self.p < 1:
            out.append("support pattern requires p >= 1")
        if self.q < 0:
            out.append("support pattern requires q >= 0")
        if self.q == 0 and self.entries:
            out.append("q = 0 implies an empty support pattern")
        seen = set()
        for r, c in self.entries:
            if not (1 <= r <= self.p and 1 <= c <= self.q):
                out.append(f"support entry ({r}, {c}) outside [1..{self.p}] x [1..{self.q}]")
            if (r, c) in seen:
                out.append(f"duplicate support entry ({r}, {c})")
            seen.add((r, c))
        return out

    def is_full(self) -> bool:
        return len(set(self.entries)) == self.p * self.q

    def mask(self) -> np.ndarray:
        """Boolean (p, q) mask of supported positions."""
        m = np.zeros((self.p, self.q), dtype=bool)
        for r, c in self.entries:
            m[r - 1, c - 1] = True
        return m

    def index_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """0-based (rows, cols) arrays in canonical entry order."""
        if not self.entries:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        rows, cols = zip(*self.entries)
        return np.asarray(rows, dtype=int) - 1, np.asarray(cols, dtype=int) - 1


@dataclass(frozen=True)
class ClassBounds:
    """Box bounds on uniquenesses and the Frobenius radius of the loadings."""

    psi_min: float
    psi_max: float
    loading_radius: float

    def validate(self) -> list[str]:
        out = []
        if not (self.psi_min > 0):
            out.append("psi_min must be strictly positive")
        if not (self.psi_max > self.psi_min):
            out.append("psi_max must exceed psi_min")
        if not np.isfinite(self.psi_max):
            out.append("psi_max must be finite")
        if not (0 < self.loading_radius < np.inf):
            out.append("loading_radius must be positive and finite")
        return out


@dataclass(frozen=True)
class FactorPoint:
    """One admissible parameter point: loadings plus uniqueness values.

    ``uniqueness`` holds p values for a diagonal error covariance or a single
    value for a spherical one.
    """

    loadings: np.ndarray
    uniqueness: np.ndarray

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        uni = np.atleast_1d(np.asarray(self.uniqueness, dtype=float))
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "uniqueness", uni)

    @property
    def p(self) -> int:
        return self.loadings.shape[0]

    @property
    def q(self) -> int:
        return self.loadings.shape[1]

    def psi_vector(self) -> np.ndarray:
        """Per-coordinate uniqueness values, broadcasting the spherical case."""
        if self.uniqueness.size == 1:
            return np.full(self.p, float(self.uniqueness[0]))
        return self.uniqueness


FACTOR_CLASS = "factor_class"
EXPLICIT_SET = "explicit_set"


@dataclass(frozen=True)
class ModelSpec:
    """One candidate covariance class.

    ``factor_class`` kinds carry a support pattern, error type, and bounds;
    ``explicit_set`` kinds carry the member matrices and a nominal order used
    when the selector reports an "order" for them.
    """

    kind: str
    pattern: SupportPattern | None = None
    error_type: str | None = None
    bounds: ClassBounds | None = None
    matrices: tuple[np.ndarray, ...] = ()
    nominal_order: int = 0

    @classmethod
    def factor_class(cls, pattern: SupportPattern, error_type: str, bounds: ClassBounds) -> "ModelSpec":
        return cls(kind=FACTOR_CLASS, pattern=pattern,
                   error_type=normalize_error_type(error_type), bounds=bounds)

    @classmethod
    def dense(cls, p: int, q: int, error_type: str, bounds: ClassBounds) -> "ModelSpec":
        """Dense exploratory class with the full [p] x [q] support."""
        return cls.factor_class(SupportPattern.full(p, q), error_type, bounds)

    @classmethod
    def explicit_set(cls, matrices, nominal_order: int = 0) -> "ModelSpec":
        mats = tuple(np.array(m, dtype=float) for m in matrices)
        return cls(kind=EXPLICIT_SET, matrices=mats, nominal_order=int(nominal_order))

    @property
    def p(self) -> int:
        if self.kind == FACTOR_CLASS:
            return self.pattern.p
        return self.matrices[0].shape[0] if self.matrices else 0

    @property
    def order(self) -> int:
        """Factor order q, or the nominal order of an explicit set."""
        return self.pattern.q if self.kind == FACTOR_CLASS else self.nominal_order

    def validate(self) -> list[str]:
        out = []
        if self.kind == FACTOR_CLASS:
            if self.pattern is None or self.error_type is None or self.bounds is None:
                return ["factor_class requires pattern, error_type, and bounds"]
            out.extend(self.pattern.validate())
            out.extend(self.bounds.validate())
            if self.error_type not in (DIAGONAL, SPHERICAL):
                out.append(f"unknown error type {self.error_type!r}")
        elif self.kind == EXPLICIT_SET:
            if not self.matrices:
                out.append("explicit_set requires at least one matrix")
            if self.nominal_order < 0:
                out.append("nominal_order must be nonnegative")
            for i, m in enumerate(self.matrices):
                if m.ndim != 2 or m.shape[0] != m.shape[1]:
                    out.append(f"explicit-set matrix {i + 1} is not square")
                    continue
                if m.shape != self.matrices[0].shape:
                    out.append(f"explicit-set matrix {i + 1} has mismatched dimension")
                if not np.allclose(m, m.T, atol=1e-10 * (1.0 + np.abs(m).max())):
                    out.append(f"explicit-set matrix {i + 1} is not symmetric")
                elif np.linalg.eigvalsh(m)[0] <= 0:
                    out.append(f"explicit-set matrix {i + 1} is not positive definite")
        else:
            out.append(f"unknown model kind {self.kind!r}")
        return out


@dataclass
class CandidateFamily:
    """Ordered candidate models (index k in 1..m) with their complexity counts."""

    models: list[ModelSpec]
    complexities: list[float]

    @property
    def m(self) -> int:
        return len(self.models)

    @property
    def p(self) -> int:
        return self.models[0].p

    @property
    def orders(self) -> list[int]:
        return [spec.order for spec in self.models]


def validate_family(family: CandidateFamily) -> list[str]:
    """Collect every invariant violation in the family; empty means valid.

    Violations are data, not failures: callers that need hard errors raise
    :class:`ValidationError` on a nonempty report.
    """
    out = []
    if not family.models:
        return ["family must contain at least one model"]
    if len(family.complexities) != len(family.models):
        out.append("complexity list length differs from model list length")
    for i, d in enumerate(family.complexities):
        if not (d > 0 and np.isfinite(d)):
            out.append(f"model {i + 1}: complexity must be a positive real")
    p0 = family.models[0].p
    for i, spec in enumerate(family.models):
        for v in spec.validate():
            out.append(f"model {i + 1}: {v}")
        if spec.p != p0:
            out.append(f"model {i + 1}: dimension mismatch (p={spec.p} vs shared p={p0})")
    return out


def check_point(point: FactorPoint, spec: ModelSpec) -> list[str]:
    """Violations of ``spec``'s constraints by ``point`` (tolerance-padded)."""
    if spec.kind != FACTOR_CLASS:
        return ["points only exist for factor_class models"]
    out = []
    pat, bounds = spec.pattern, spec.bounds
    if point.loadings.shape != (pat.p, pat.q):
        return [f"loadings shape {point.loadings.shape} does not match ({pat.p}, {pat.q})"]
    expected_u = pat.p if spec.error_type == DIAGONAL else 1
    if point.uniqueness.shape != (expected_u,):
        return [f"uniqueness shape {point.uniqueness.shape} does not match ({expected_u},)"]
    off = point.loadings[~pat.mask()] if pat.q > 0 else np.zeros(0)
    if off.size and np.abs(off).max() > 0:
        out.append("loadings are nonzero off the support pattern")
    radius = float(np.linalg.norm(point.loadings))
    if radius > bounds.loading_radius * (1 + FEASIBILITY_RTOL):
        out.append(f"loading Frobenius norm {radius:.6g} exceeds radius {bounds.loading_radius:.6g}")
    u = point.uniqueness
    slack = FEASIBILITY_RTOL * bounds.psi_max
    if u.min() < bounds.psi_min - slack or u.max() > bounds.psi_max + slack:
        out.append("uniqueness value outside [psi_min, psi_max]")
    return out


def construct_sigma(point: FactorPoint, spec: ModelSpec, check_bounds: bool = True) -> np.ndarray:
    """Build sigma = loadings @ loadings.T + psi for an admissible point.

    Rejects points violating the support mask, radius, or box constraints,
    and (by default) verifies the uniform eigenvalue bounds
    psi_min <= eig(sigma) <= loading_radius**2 + psi_max that every class
    member must satisfy.
    """
    violations = check_point(point, spec)
    if violations:
        raise ValidationError("; ".join(violations))
    sigma = point.loadings @ point.loadings.T
    sigma[np.diag_indices_from(sigma)] += point.psi_vector()
    sigma = 0.5 * (sigma + sigma.T)
    if check_bounds:
        b = spec.bounds
        lo, hi = b.psi_min, b.loading_radius ** 2 + b.psi_max
        eigs = np.linalg.eigvalsh(sigma)
        slack = 1e-8 * max(1.0, hi)
        if eigs[0] < lo - slack or eigs[-1] > hi + slack:
            raise ValidationError(
                f"constructed sigma spectrum [{eigs[0]:.6g}, {eigs[-1]:.6g}] "
                f"escapes [{lo:.6g}, {hi:.6g}]")
    return sigma


def _uniqueness_count(spec: ModelSpec) -> int:
    return spec.p if spec.error_type == DIAGONAL else 1


def dense_gauge_count(p: int, q: int, error_type: str) -> float:
    """Conventional dense count: p*q - q*(q-1)/2 loading coordinates plus
    p (diagonal) or 1 (spherical) uniqueness parameters."""
    c_tau = p if normalize_error_type(error_type) == DIAGONAL else 1
    return float(p * q - q * (q - 1) // 2 + c_tau)


def complexity(spec: ModelSpec, scheme: str, seed: int = 0) -> float:
    """Complexity count d for one model under the given counting scheme.

    Parameters
    ----------
    spec : ModelSpec
        A factor_class model (any scheme) -- explicit sets carry fixed counts
        supplied externally.
    scheme : {"dense_gauge", "raw_support", "jacobian_rank"}
        dense_gauge requires the full support pattern.  jacobian_rank is the
        numerical rank of the covariance-map Jacobian at a random admissible
        interior point (mode over 5 seeded draws).
    seed : int
        Seed for the jacobian_rank draws; other schemes ignore it.
    """
    if spec.kind != FACTOR_CLASS:
        raise ValidationError("complexity schemes apply to factor_class models; "
                              "explicit sets take fixed counts")
    bad = spec.validate()
    if bad:
        raise ValidationError("; ".join(bad))
    pat = spec.pattern
    if scheme == "dense_gauge":
        if not pat.is_full():
            raise ValidationError("dense_gauge requires the full [p] x [q] support pattern")
        return dense_gauge_count(pat.p, pat.q, spec.error_type)
    if scheme == "raw_support":
        return float(len(pat.entries) + _uniqueness_count(spec))
    if scheme == "jacobian_rank":
        return float(_jacobian_rank(spec, seed))
    raise ValidationError(f"unknown complexity scheme {scheme!r}")


def _jacobian_rank(spec: ModelSpec, seed: int) -> int:
    """Numerical rank of d(sigma)/d(params) at random interior points.

    Draws 5 admissible interior points and returns the modal rank, which
    recovers the generic rank when an unlucky draw is degenerate.  Rank
    tolerance: s_max * p*(p+1)/2 * 1e-10.
    """
    pat, bounds = spec.pattern, spec.bounds
    p, q = pat.p, pat.q
    rows, cols = pat.index_arrays()
    n_load = rows.size
    n_uni = _uniqueness_count(spec)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5180823]))
    ranks = []
    for _ in range(5):
        lam = np.zeros((p, q))
        if n_load:
            raw = rng.uniform(-1.0, 1.0, size=n_load)
            raw *= 0.5 * bounds.loading_radius / max(np.linalg.norm(raw), 1e-12)
            lam[rows, cols] = raw
        cols_list = []
        for i in range(n_load):
            d = np.zeros((p, p))
            col = lam[:, cols[i]]
            d[rows[i], :] += col
            d[:, rows[i]] += col
            cols_list.append(d.ravel())
        if spec.error_type == DIAGONAL:
            for j in range(p):
                d = np.zeros((p, p))
                d[j, j] = 1.0
                cols_list.append(d.ravel())
        else:
            cols_list.append(np.eye(p).ravel())
        jac = np.column_stack(cols_list) if cols_list else np.zeros((p * p, 0))
        if jac.shape[1] == 0:
            ranks.append(0)
            continue
        s = np.linalg.svd(jac, compute_uv=False)
        tol = s[0] * (p * (p + 1) / 2) * 1e-10
        ranks.append(int((s > tol).sum()))
    counts = Counter(ranks)
    top = max(counts.values())
    # ties between equally common ranks resolve to the larger (generic) one
    return max(r for r, c in counts.items() if c == top)


def dense_gap_table(p: int, q_max: int, error_type: str) -> list[float]:
    """Consecutive dense-complexity gaps d_{q+1} - d_q = p - q for q < q_max."""
    if not (0 <= q_max <= p - 1):
        raise ValidationError("dense gap table requires 0 <= q_max <= p - 1")
    counts = [dense_gauge_count(p, q, error_type) for q in range(q_max + 1)]
    return [counts[q + 1] - counts[q] for q in range(q_max)]


def redundant_representation(point: FactorPoint, j: int, b: float, theta: float,
                             bounds: ClassBounds | None = None) -> FactorPoint:
    """Append a redundant factor column that leaves sigma exactly unchanged.

    Given a point with diagonal uniqueness, coordinate j (1-based), a nonzero
    scalar b, and theta in (0, psi_j / b**2), returns the order-(q+1) point

        loadings' = [loadings, sqrt(theta) * b * e_j],
        psi'_j    = psi_j - theta * b**2,

    whose covariance matrix equals the input's identically.
    """
    if point.uniqueness.size != point.p:
        raise ValidationError("redundant representation requires diagonal uniqueness")
    if not (1 <= j <= point.p):
        raise ValidationError(f"coordinate j={j} outside 1..{point.p}")
    if b == 0:
        raise ValidationError("b must be nonzero")
    psi_j = float(point.uniqueness[j - 1])
    if not (0 < theta < psi_j / b ** 2):
        raise ValidationError(
            f"theta={theta} outside the admissible interval (0, {psi_j / b ** 2:.6g})")
    extra = np.zeros((point.p, 1))
    extra[j - 1, 0] = np.sqrt(theta) * b
    new_lam = np.hstack([point.loadings, extra])
    new_uni = point.uniqueness.copy()
    new_uni[j - 1] -= theta * b ** 2
    if bounds is not None:
        if np.linalg.norm(new_lam) > bounds.loading_radius * (1 + FEASIBILITY_RTOL):
            raise ValidationError("augmented loadings exceed the Frobenius radius")
        if new_uni[j - 1] < bounds.psi_min * (1 - FEASIBILITY_RTOL):
            raise ValidationError("reduced uniqueness falls below psi_min")
    return FactorPoint(new_lam, new_uni)


def point_sigma(point: FactorPoint) -> np.ndarray:
    """Unvalidated sigma = loadings @ loadings.T + psi (test/diagnostic helper)."""
    sigma = point.loadings @ point.loadings.T
    sigma[np.diag_indices_from(sigma)] += point.psi_vector()
    return 0.5 * (sigma + sigma.T)


# ---------------------------------------------------------------------------
# Family JSON document format
# ---------------------------------------------------------------------------
#
# {"p": int,
#  "models": [
#    {"kind": "factor_class", "q": int, "pattern": "full" | [[r, c], ...],
#     "error": "diag"|"sph",
#     "bounds": {"psi_min": ..., "psi_max": ..., "M": ...},
#     "complexity_scheme": "dense_gauge"|"raw_support"|"jacobian_rank"|{"fixed": d}},
#    {"kind": "explicit_set", "matrices": [[[...], ...], ...],
#     "nominal_order": int, "complexity_scheme": {"fixed": d}},
#  ]}
#
# Pattern entries are 1-based.  Explicit-set matrices are nested row lists.


def family_from_dict(doc: dict) -> CandidateFamily:
    """Parse a family document; raises ValidationError on schema or invariant problems."""
    try:
        p = int(doc["p"])
        raw_models = doc["models"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"family document missing field: {exc}") from exc
    if not isinstance(raw_models, list) or not raw_models:
        raise ValidationError("family document field 'models' must be a nonempty list")

    models, complexities = [], []
    for i, entry in enumerate(raw_models):
        label = f"models[{i}]"
        kind = entry.get("kind", FACTOR_CLASS)
        if kind == FACTOR_CLASS:
            try:
                q = int(entry["q"])
                b = entry["bounds"]
                bounds = ClassBounds(float(b["psi_min"]), float(b["psi_max"]), float(b["M"]))
                error = entry["error"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{label}: malformed factor_class entry ({exc})") from exc
            raw_pattern = entry.get("pattern", "full")
            if raw_pattern == "full":
                pattern = SupportPattern.full(p, q)
            else:
                pattern = SupportPattern(p, q, tuple((int(r), int(c)) for r, c in raw_pattern))
            spec = ModelSpec.factor_class(pattern, error, bounds)
            default_scheme = "dense_gauge" if pattern.is_full() else "raw_support"
            scheme = entry.get("complexity_scheme", default_scheme)
        elif kind == EXPLICIT_SET:
            try:
                spec = ModelSpec.explicit_set(entry["matrices"], entry.get("nominal_order", 0))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{label}: malformed explicit_set entry ({exc})") from exc
            scheme = entry.get("complexity_scheme", {"fixed": 1.0})
        else:
            raise ValidationError(f"{label}: unknown model kind {kind!r}")

        if isinstance(scheme, dict):
            if "fixed" not in scheme:
                raise ValidationError(f"{label}: complexity_scheme object requires 'fixed'")
            d = float(scheme["fixed"])
        else:
            d = complexity(spec, str(scheme), seed=0)
        models.append(spec)
        complexities.append(d)

    family = CandidateFamily(models, complexities)
    violations = validate_family(family)
    if violations:
        raise ValidationError("; ".join(violations))
    return family


def family_to_dict(family: CandidateFamily) -> dict:
    """Inverse of family_from_dict, with complexities frozen as fixed counts."""
    models = []
    for spec, d in zip(family.models, family.complexities):
        if spec.kind == FACTOR_CLASS:
            entry = {
                "kind": FACTOR_CLASS,
                "q": spec.pattern.q,
                "pattern": "full" if spec.pattern.is_full() else [list(e) for e in spec.pattern.entries],
                "error": "diag" if spec.error_type == DIAGONAL else "sph",
                "bounds": {"psi_min": spec.bounds.psi_min, "psi_max": spec.bounds.psi_max,
                           "M": spec.bounds.loading_radius},
                "complexity_scheme": {"fixed": d},
            }
        else:
            entry = {
                "kind": EXPLICIT_SET,
                "matrices": [m.tolist() for m in spec.matrices],
                "nominal_order": spec.nominal_order,
                "complexity_scheme": {"fixed": d},
            }
        models.append(entry)
    return {"p": family.p, "models": models}


def load_family(path) -> CandidateFamily:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"family file is not valid JSON: {exc}") from exc
    return family_from_dict(doc)
