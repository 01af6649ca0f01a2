import numpy as np
import pytest

from covsel import (
    CandidateFamily,
    FitOptions,
    ModelSpec,
    PopulationTarget,
    ValidationError,
    complexity,
    d2q_form,
    diagnose_assumptions,
    margin_constant_correct_spec,
    population_fit,
    population_q,
    pseudo_true_summary,
)
from covsel.population import g_star_representatives, hausdorff_distance
from covsel.simulate import two_point_family

from conftest import BOUNDS, dense_family, one_factor_target, random_spd


def test_population_fit_identity_target():
    target = PopulationTarget(np.zeros(3), np.eye(3))
    spec = ModelSpec.dense(3, 0, "diag", BOUNDS)
    v, reps = population_fit(spec, target)
    assert np.isclose(v, -1.5)
    assert len(reps) == 1
    assert np.allclose(reps[0].sigma, np.eye(3))


def test_population_fit_diagonal_ignores_off_diagonals():
    target = PopulationTarget(np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]))
    spec = ModelSpec.dense(2, 0, "diag", BOUNDS)
    v, reps = population_fit(spec, target)
    assert np.isclose(v, -1.0)
    assert np.allclose(reps[0].sigma, np.eye(2))


def test_population_fit_attains_ambient_maximum_under_correct_spec(target4):
    spec = ModelSpec.dense(4, 1, "diag", BOUNDS)
    v, reps = population_fit(spec, target4)
    assert np.isclose(v, population_q(target4.cov, target4), atol=1e-9)
    assert min(np.linalg.norm(r.sigma - target4.cov) for r in reps) < 1e-5


def test_pseudo_true_summary_sets(target4):
    fam = dense_family(4, 2)
    summary = pseudo_true_summary(fam, target4)
    assert summary.k_star == [2, 3]  # q = 1 and q = 2 attain V*
    assert summary.q_star == 1
    assert summary.k_zero == [2]
    assert summary.k_double_star == [2]
    assert summary.v_values[0] < summary.v_star - summary.epsilon_v


def test_pseudo_true_summary_single_model(target4):
    spec = ModelSpec.dense(4, 1, "diag", BOUNDS)
    fam = CandidateFamily([spec], [complexity(spec, "dense_gauge")])
    summary = pseudo_true_summary(fam, target4)
    assert summary.k_star == [1]
    assert summary.k_zero == [1]
    assert summary.q_star == 1


def test_pseudo_true_summary_exact_ties_share_k_double_star(target4):
    spec = ModelSpec.dense(4, 1, "diag", BOUNDS)
    fam = CandidateFamily([spec, spec], [8.0, 8.0])
    summary = pseudo_true_summary(fam, target4)
    assert summary.k_star == [1, 2]
    assert summary.k_double_star == [1, 2]


def test_pseudo_true_summary_permutation_invariance(target4):
    fam = dense_family(4, 3)
    perm = [2, 0, 3, 1]
    shuffled = CandidateFamily([fam.models[i] for i in perm],
                               [fam.complexities[i] for i in perm])
    s1 = pseudo_true_summary(fam, target4)
    s2 = pseudo_true_summary(shuffled, target4)
    assert s1.q_star == s2.q_star
    assert np.isclose(s1.v_star, s2.v_star, atol=1e-9)
    assert len(s1.k_star) == len(s2.k_star)
    assert sorted(s1.orders[k - 1] for k in s1.k_star) == \
        sorted(s2.orders[k - 1] for k in s2.k_star)


def test_nested_population_values_are_monotone(target4):
    fam = dense_family(4, 3)
    summary = pseudo_true_summary(fam, target4)
    for lower, higher in zip(summary.v_values, summary.v_values[1:]):
        assert higher >= lower - 1e-8


def test_v_values_never_exceed_ambient_optimum(target4):
    fam = dense_family(4, 3)
    summary = pseudo_true_summary(fam, target4)
    ambient = population_q(target4.cov, target4)
    assert all(v <= ambient + 1e-10 for v in summary.v_values)


def test_hausdorff_distance_basics():
    a = [np.zeros((1, 1))]
    b = [np.array([[3.0]]), np.array([[1.0]])]
    assert hausdorff_distance(a, a) == 0.0
    assert np.isclose(hausdorff_distance(a, b), 3.0)
    with pytest.raises(ValidationError):
        hausdorff_distance(a, [])


def test_g_star_exact_under_correct_spec(target4):
    fam = dense_family(4, 2)
    summary = pseudo_true_summary(fam, target4)
    reps, exact = g_star_representatives(summary, target4)
    assert exact
    assert len(reps) == 1
    assert np.allclose(reps[0], target4.cov)


def test_g_star_represented_for_two_point_family():
    fam, s_plus = two_point_family(0.5)
    target = PopulationTarget(np.zeros(1), np.eye(1))
    summary = pseudo_true_summary(fam, target)
    reps, exact = g_star_representatives(summary, target)
    assert not exact
    assert len(reps) == 2  # both singletons are minimal-order optimal


def test_diagnose_correct_spec_quadratic_margin(target4):
    fam = dense_family(4, 2)
    summary = pseudo_true_summary(fam, target4)
    diag = diagnose_assumptions(fam, summary, target4, probe_count=150, eta=0.1)
    assert diag.m2_hausdorff < 1e-4
    assert diag.verdicts["m2"]["verdict"] == "pass"
    for k, e in diag.m3_exponents.items():
        assert 1.8 <= e <= 2.2, (k, e)
    assert diag.verdicts["m3"]["verdict"] == "pass"
    assert all(c > 0 for c in diag.m3_constants.values())


def test_diagnose_two_point_family_fails_m2():
    fam, s_plus = two_point_family(0.5)
    target = PopulationTarget(np.zeros(1), np.eye(1))
    summary = pseudo_true_summary(fam, target)
    diag = diagnose_assumptions(fam, summary, target)
    assert np.isclose(diag.m2_hausdorff, s_plus - 0.5)
    assert np.isclose(diag.m2_hausdorff, 1.9608, atol=1e-3)
    assert diag.verdicts["m2"]["verdict"] == "fail"
    # singleton classes admit no probes: reported, not raised
    assert any("too few probes" in note for note in diag.notes)


def test_margin_constant_examples_and_consistency():
    assert margin_constant_correct_spec(PopulationTarget(np.zeros(2), np.eye(2))) == 0.25
    assert margin_constant_correct_spec(PopulationTarget(np.zeros(2), 2 * np.eye(2))) == 1 / 16
    rng = np.random.default_rng(0)
    cov0 = random_spd(rng, 3)
    t = PopulationTarget(np.zeros(3), cov0)
    c = margin_constant_correct_spec(t)
    for _ in range(50):
        h = rng.standard_normal((3, 3))
        h = 0.5 * (h + h.T)
        h /= np.linalg.norm(h)
        assert d2q_form(h, t) <= -2 * c + 1e-10


def test_population_summary_serializes(target4):
    fam = dense_family(4, 1)
    summary = pseudo_true_summary(fam, target4)
    doc = summary.to_dict()
    assert doc["q_star"] == 1
    assert isinstance(doc["pseudo_true_reps"][0][0], list)
