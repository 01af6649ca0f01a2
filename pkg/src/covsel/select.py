"""Penalized scoring and the selection rule.

Every candidate is fitted, penalized scores W_k = T_k - a_k(n) are formed,
and the selected model is the smallest 1-based index attaining the exact
maximum score (no tie tolerance; near-ties surface through the runner-up
margin instead).  Failed fits never silently drop a model: each model carries
a status, and selection over a reduced set is recorded explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fit import STATUS_FAILED, FitOptions, FitResult, fit_class
from .gauss_criterion import SampleMoments
from .model_space import CandidateFamily, ValidationError, validate_family
from .penalties import PenaltySystem, penalties_for


class NumericalError(RuntimeError):
    """Every candidate fit failed; no selection is possible."""


def min_argmax(values) -> int:
    """Smallest 0-based position attaining the exact maximum."""
    values = list(values)
    best = max(values)
    return values.index(best)


def score_models(t_values: np.ndarray, penalties: np.ndarray) -> tuple[np.ndarray, int, float]:
    """Scores, selected position (0-based), and runner-up margin."""
    scores = np.asarray(t_values, dtype=float) - np.asarray(penalties, dtype=float)
    pos = min_argmax(scores)
    if scores.size == 1:
        margin = float("inf")
    else:
        rest = np.delete(scores, pos)
        margin = float(scores[pos] - rest.max())
    return scores, pos, margin


@dataclass
class SelectionReport:
    """Outcome of one penalized selection.

    ``selected_index`` is 1-based; ``statuses`` aligns with the family order;
    models whose fit failed entirely appear in ``excluded`` (1-based) and are
    scored as -inf.
    """

    scores: list[float]
    t_values: list[float]
    penalties_applied: list[float]
    selected_index: int
    selected_order: int
    runner_up_margin: float
    statuses: list[str]
    excluded: list[int]
    orders: list[int]
    n: int
    penalty_name: str
    fits: list[FitResult] = field(default_factory=list, repr=False)

    @property
    def selected_fit(self) -> FitResult:
        return self.fits[self.selected_index - 1]

    def to_dict(self) -> dict:
        return {
            "scores": self.scores,
            "t_values": self.t_values,
            "penalties_applied": self.penalties_applied,
            "selected_index": self.selected_index,
            "selected_order": self.selected_order,
            "runner_up_margin": self.runner_up_margin,
            "statuses": self.statuses,
            "excluded": self.excluded,
            "orders": self.orders,
            "n": self.n,
            "penalty": self.penalty_name,
        }


def select_model(family: CandidateFamily, moments: SampleMoments, system: PenaltySystem,
                 opts: FitOptions = FitOptions()) -> SelectionReport:
    """Fit every model, apply the penalty system, and select min arg max W_k."""
    violations = validate_family(family)
    if violations:
        raise ValidationError("; ".join(violations))
    fits: list[FitResult | None] = []
    statuses: list[str] = []
    for i, spec in enumerate(family.models):
        try:
            res = fit_class(spec, moments, opts, model_index=i)
            fits.append(res)
            statuses.append(res.status)
        except ValidationError:
            raise
        except Exception as exc:  # noqa: BLE001 - flagged, never silently dropped
            fits.append(None)
            statuses.append(f"{STATUS_FAILED}: {exc}")
    excluded = [i + 1 for i, f in enumerate(fits) if f is None]
    if len(excluded) == family.m:
        raise NumericalError("every candidate fit failed; no selection possible")

    t_values = np.array([-np.inf if f is None else f.t_value for f in fits])
    penalties = penalties_for(system, family, moments.n)
    scores, pos, margin = score_models(t_values, penalties)
    orders = family.orders
    return SelectionReport(
        scores=[float(s) for s in scores],
        t_values=[float(t) for t in t_values],
        penalties_applied=[float(a) for a in penalties],
        selected_index=pos + 1,
        selected_order=orders[pos],
        runner_up_margin=margin,
        statuses=statuses,
        excluded=excluded,
        orders=orders,
        n=moments.n,
        penalty_name=system.name,
        fits=fits,
    )
