import math

import numpy as np
import pytest

from covsel import (
    PenaltySystem,
    ValidationError,
    classify_penalty,
    penalties_for,
    penalty_value,
)
from covsel.penalties import hypothesized_summary, system_from_dict

from conftest import dense_family, one_factor_target


@pytest.mark.parametrize("kind,expected", [
    ("bic", 8.5 * math.log(100)),
    ("caic", 8.5 * (math.log(100) + 1)),
    ("hq", 17 * math.log(math.log(100))),
    ("ssbic", 8.5 * math.log(102 / 24)),
    ("hbic", 8.5 * math.log(100 / (2 * math.pi))),
    ("aic", 17.0),
])
def test_catalogue_values_at_d17_n100(kind, expected):
    assert np.isclose(penalty_value(PenaltySystem.named(kind), 17, 100), expected)


def test_ssbic_requires_large_n():
    with pytest.raises(ValidationError, match="n > 22"):
        penalty_value(PenaltySystem.named("ssbic"), 5, 20)
    assert penalty_value(PenaltySystem.named("ssbic"), 5, 23) > 0


def test_penalty_requires_n_at_least_two():
    with pytest.raises(ValidationError):
        penalty_value(PenaltySystem.named("bic"), 5, 1)


def test_penalty_strictly_increasing_in_d():
    for kind in ("bic", "caic", "hbic", "ssbic", "hq", "aic"):
        sys_ = PenaltySystem.named(kind)
        n = 30 if kind != "ssbic" else 30
        values = [penalty_value(sys_, d, n) for d in (1.0, 2.0, 5.0, 11.0)]
        assert all(b > a for a, b in zip(values, values[1:]))


def test_separable_multiplier_families():
    assert np.isclose(penalty_value(PenaltySystem.separable("log_n_pow_alpha", alpha=2.0), 3, 100),
                      3 * math.log(100) ** 2)
    assert penalty_value(PenaltySystem.separable("constant"), 3, 100) == 3.0
    assert np.isclose(penalty_value(PenaltySystem.separable("sqrt_n_log_n"), 2, 100),
                      2 * 10 * math.log(100))
    with pytest.raises(ValidationError):
        PenaltySystem.separable("log_n_pow_alpha", alpha=0.0)
    with pytest.raises(ValidationError):
        PenaltySystem.separable("no_such_family")


def test_penalties_for_uses_family_complexities():
    fam = dense_family(4, 2)  # d = 4, 8, 11
    pen = penalties_for(PenaltySystem.named("bic"), fam, 100)
    assert np.allclose(pen, [0.5 * d * math.log(100) for d in (4, 8, 11)])


def test_bic_type_gap_differences_stay_bounded():
    # BIC, CAIC, HBIC, SSBIC differ per model by d-proportional bounded terms
    fam = dense_family(4, 1)
    names = ("bic", "caic", "hbic", "ssbic")
    diffs = {name: [] for name in names[1:]}
    for n in (50, 500, 5000, 50000):
        base = penalties_for(PenaltySystem.named("bic"), fam, n)
        gap_base = base[1] - base[0]
        for name in names[1:]:
            pen = penalties_for(PenaltySystem.named(name), fam, n)
            diffs[name].append((pen[1] - pen[0]) - gap_base)
    for name, ds in diffs.items():
        assert max(abs(d) for d in ds) < 10.0, name


@pytest.fixture(scope="module")
def summary4():
    fam = dense_family(4, 3)
    return fam, pseudo_true_summary_cached(fam)


def pseudo_true_summary_cached(fam):
    from covsel import pseudo_true_summary

    return pseudo_true_summary(fam, one_factor_target())


def test_classification_table(summary4):
    fam, summary = summary4
    for kind in ("bic", "caic", "hbic", "ssbic"):
        cls = classify_penalty(PenaltySystem.named(kind), fam, summary)
        assert (cls.p1, cls.p2, cls.p3) == ("pass", "pass", "pass"), kind
        assert cls.admissible
    hq = classify_penalty(PenaltySystem.named("hq"), fam, summary)
    assert hq.p3 == "boundary"
    assert not hq.admissible
    aic = classify_penalty(PenaltySystem.named("aic"), fam, summary)
    assert aic.p2 == "fail"
    assert not aic.admissible


def test_classification_vacuous_without_overfits():
    fam = dense_family(4, 1)  # q = 0, 1 only: no optimal model above q* = 1
    summary = hypothesized_summary(fam, k_star=[2])
    cls = classify_penalty(PenaltySystem.named("aic"), fam, summary)
    assert cls.admissible  # (P2)/(P3) vacuously pass
    assert any("vacuous" in note for note in cls.notes)


def test_classification_separable_families(summary4):
    fam, summary = summary4
    scores = tuple(fam.complexities)
    sqrt_sys = PenaltySystem.separable("sqrt_n_log_n", scores)
    assert classify_penalty(sqrt_sys, fam, summary).admissible
    loglog = PenaltySystem.separable("log_log_n", scores)
    cls = classify_penalty(loglog, fam, summary)
    assert cls.p3 == "boundary" and not cls.admissible
    const = PenaltySystem.separable("constant", scores)
    assert classify_penalty(const, fam, summary).p2 == "fail"


def test_classification_flat_scores_fail_p2(summary4):
    fam, summary = summary4
    flat = PenaltySystem.separable("log_n_pow_alpha", (1.0,) * fam.m)
    cls = classify_penalty(flat, fam, summary)
    assert cls.p2 == "fail"  # no positive score gap separates the overfits


def test_table_system_classification(summary4):
    fam, summary = summary4
    grid = [100, 1000, 10000, 100000]
    bic_like = [[0.5 * d * math.log(n) for n in grid] for d in fam.complexities]
    table = PenaltySystem.table(grid, bic_like)
    cls = classify_penalty(table, fam, summary, n_probe_grid=grid)
    assert cls.admissible
    linear = [[0.2 * d * n for n in grid] for d in fam.complexities]
    cls_lin = classify_penalty(PenaltySystem.table(grid, linear), fam, summary)
    assert cls_lin.p1 == "fail"
    hq_like = [[d * math.log(math.log(n)) for n in grid] for d in fam.complexities]
    cls_hq = classify_penalty(PenaltySystem.table(grid, hq_like), fam, summary)
    assert cls_hq.p3 == "boundary"


def test_table_lookup_and_errors():
    fam = dense_family(2, 1)
    table = PenaltySystem.table([10, 100], [[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(penalties_for(table, fam, 100), [2.0, 4.0])
    with pytest.raises(ValidationError, match="n-grid"):
        penalties_for(table, fam, 50)
    with pytest.raises(ValidationError, match="closed form"):
        penalty_value(table, 2.0, 10)


def test_mean_penalty_invariance(summary4):
    # adding (p/2) log n to every model changes no score difference
    fam, summary = summary4
    n, p = 500, 4
    base = penalties_for(PenaltySystem.named("bic"), fam, n)
    shifted = base + 0.5 * p * math.log(n)
    t = np.array([-100.0, -80.0, -79.0, -78.5])
    from covsel.select import score_models

    s0, pos0, margin0 = score_models(t, base)
    s1, pos1, margin1 = score_models(t, shifted)
    assert pos0 == pos1
    assert np.isclose(margin0, margin1)
    assert np.allclose(np.diff(s0), np.diff(s1))


def test_mean_penalty_invariance_of_classification(summary4):
    # the same constant shift changes no classification verdict
    fam, summary = summary4
    grid = [100, 1000, 10000, 100000]
    base = [[0.5 * d * math.log(n) for n in grid] for d in fam.complexities]
    shifted = [[v + 0.5 * 4 * math.log(n) for v, n in zip(row, grid)] for row in base]
    c0 = classify_penalty(PenaltySystem.table(grid, base), fam, summary)
    c1 = classify_penalty(PenaltySystem.table(grid, shifted), fam, summary)
    assert (c0.p1, c0.p2, c0.p3, c0.admissible) == (c1.p1, c1.p2, c1.p3, c1.admissible)


def test_system_parsing():
    assert system_from_dict("bic").kind == "bic"
    sep = system_from_dict({"kind": "separable", "multiplier": "log_log_n",
                            "scores": [1.0, 2.0]})
    assert sep.scores == (1.0, 2.0)
    with pytest.raises(ValidationError):
        system_from_dict({"kind": "mystery"})
    with pytest.raises(ValidationError):
        system_from_dict(42)


def test_hypothesized_summary_validation():
    fam = dense_family(3, 2)
    with pytest.raises(ValidationError):
        hypothesized_summary(fam, k_star=[7])
    summary = hypothesized_summary(fam, k_star=[2, 3])
    assert summary.q_star == 1
    assert summary.k_zero == [2]
