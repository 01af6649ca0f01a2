import math

import numpy as np
import pytest

from covsel import (
    DataLaw,
    FitOptions,
    ModelSpec,
    MonteCarloPlan,
    PenaltySystem,
    PopulationTarget,
    ValidationError,
    build_flat_margin_class,
    compute_moments,
    generate_data,
    overfit_gain_trace,
    pathology_two_point,
    run_monte_carlo,
    sigma_plus,
    suboptimal_loss_trace,
)
from covsel.population import pseudo_true_summary
from covsel.reports import canonical_dumps
from covsel.simulate import plan_from_dict, plan_to_dict, two_point_family

from conftest import dense_family

FAST = FitOptions(starts=4, max_iters=300)


def test_generate_data_is_seed_deterministic(law4):
    a = generate_data(law4, 100, seed=3)
    b = generate_data(law4, 100, seed=3)
    c = generate_data(law4, 100, seed=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_moment_concentration_gaussian():
    # LIL-scale envelope: ||S_n - cov|| < 6 sqrt(loglog n / n) at n = 1e5
    law = DataLaw.gaussian(np.zeros(2), np.eye(2))
    n = 100_000
    s = compute_moments(generate_data(law, n, seed=0)).cov
    assert np.linalg.norm(s - np.eye(2)) < 0.03


def test_moment_concentration_student_t():
    law = DataLaw.student_t(np.zeros(2), np.eye(2), dof=8)
    n = 100_000
    s = compute_moments(generate_data(law, n, seed=0)).cov
    assert np.linalg.norm(s - np.eye(2)) < 0.05


def test_scale_mixture_covariance_is_exact():
    law = DataLaw.scale_mixture(np.zeros(2), 2 * np.eye(2), weights=(0.3, 0.7),
                                levels=(3.0, 1.0))
    w, v = law.mixture_weights, law.mixture_levels
    assert abs(w[0] * v[0] + w[1] * v[1] - 1.0) < 1e-12
    s = compute_moments(generate_data(law, 200_000, seed=1)).cov
    assert np.linalg.norm(s - 2 * np.eye(2)) < 0.1


def test_law_validation():
    assert DataLaw.student_t(np.zeros(1), np.eye(1), dof=4.0).validate()
    assert DataLaw.gaussian(np.zeros(2), -np.eye(2)).validate()
    with pytest.raises(ValidationError):
        generate_data(DataLaw.student_t(np.zeros(1), np.eye(1), dof=3.0), 10, 0)


def test_moment_concentration_quantile_envelope():
    # 99th percentile of ||S_n - cov|| within C sqrt(loglog n / n), C = 8
    law = DataLaw.gaussian(np.zeros(2), np.eye(2))
    n = 2000
    devs = [np.linalg.norm(compute_moments(generate_data(law, n, seed=s)).cov - np.eye(2))
            for s in range(200)]
    envelope = 8 * math.sqrt(math.log(math.log(n)) / n)
    assert np.quantile(devs, 0.99) < envelope


def test_sigma_plus_values_and_continuity():
    assert abs(sigma_plus(0.5) - 2.4608) < 1e-3
    assert abs(sigma_plus(0.2) - 28.66) < 0.05
    assert sigma_plus(0.999) < 1.0011
    for sm in (0.3, 0.6, 0.9):
        sp = sigma_plus(sm)
        assert abs((math.log(sp) + 1 / sp) - (math.log(sm) + 1 / sm)) < 1e-12
    with pytest.raises(ValidationError):
        sigma_plus(1.2)


@pytest.fixture(scope="module")
def mini_plan():
    fam = dense_family(4, 2)
    from conftest import one_factor_target

    target = one_factor_target()
    law = DataLaw.gaussian(target.mean, target.cov)
    systems = (PenaltySystem.named("bic"), PenaltySystem.named("aic"))
    return MonteCarloPlan((120, 400), 12, 99, law, fam, systems)


def test_monte_carlo_frequencies_partition(mini_plan):
    report = run_monte_carlo(mini_plan, FAST)
    for name in report.system_names:
        for n in report.n_grid:
            cell = report.cells[name][n]
            assert abs(sum(cell.freq_by_order.values()) - 1.0) < 1e-12
            assert abs(sum(cell.freq_by_model.values()) - 1.0) < 1e-12
            assert cell.replications == mini_plan.replications


def test_monte_carlo_worker_count_never_changes_the_report(mini_plan):
    r1 = run_monte_carlo(mini_plan, FAST, workers=1)
    r8 = run_monte_carlo(mini_plan, FAST, workers=8)
    assert canonical_dumps(r1.to_dict()) == canonical_dumps(r8.to_dict())


def test_monte_carlo_csv_rows(mini_plan):
    report = run_monte_carlo(mini_plan, FAST)
    rows = report.csv_rows()
    assert len(rows) == len(report.system_names) * len(report.n_grid) * 3
    by_cell = {}
    for system, n, order, freq in rows:
        by_cell.setdefault((system, n), 0.0)
        by_cell[(system, n)] += freq
    assert all(abs(total - 1.0) < 1e-12 for total in by_cell.values())


def test_plan_round_trip(mini_plan):
    doc = plan_to_dict(mini_plan)
    back = plan_from_dict(doc)
    assert back.n_grid == mini_plan.n_grid
    assert back.seed == mini_plan.seed
    assert [s.kind for s in back.systems] == [s.kind for s in mini_plan.systems]
    assert back.family.complexities == mini_plan.family.complexities


def test_plan_validation():
    fam = dense_family(2, 1)
    law = DataLaw.gaussian(np.zeros(2), np.eye(2))
    bad = MonteCarloPlan((100, 50), 5, 0, law, fam, (PenaltySystem.named("bic"),))
    assert any("increasing" in v for v in bad.validate())
    none = MonteCarloPlan((100,), 5, 0, law, fam, ())
    assert any("penalty system" in v for v in none.validate())


def test_gain_trace_guards_and_bounds(law4, family4):
    summary = pseudo_true_summary(family4, law4.target(), opts=FAST)
    with pytest.raises(ValidationError, match="not an exact overfit"):
        overfit_gain_trace(family4, law4, 1, [200], 2, 0, FAST, summary=summary)
    with pytest.raises(ValidationError, match="not an exact overfit"):
        overfit_gain_trace(family4, law4, 2, [200], 2, 0, FAST, summary=summary)
    trace = overfit_gain_trace(family4, law4, 3, [200, 800], 10, 0, FAST, summary=summary)
    assert trace.g_star_exact
    for n in (200, 800):
        assert trace.median_gain[n] >= -1e-6 * n
        assert min(trace.gains[n]) >= -1e-6 * n


def test_loss_trace_guards_and_sign(law4, family4):
    summary = pseudo_true_summary(family4, law4.target(), opts=FAST)
    with pytest.raises(ValidationError, match="outside"):
        suboptimal_loss_trace(family4, law4, 2, [200], 2, 0, FAST, summary=summary)
    trace = suboptimal_loss_trace(family4, law4, 1, [400, 1600], 10, 0, FAST,
                                  summary=summary)
    assert trace.population_limit < 0
    for n in (400, 1600):
        assert trace.mean_ratio[n] < 0
        assert all(r < 0 for r in trace.ratios[n])


def test_pathology_two_point_identity_and_flipping():
    report = pathology_two_point(0.5, [1000, 10_000], 300, seed=5)
    assert abs(report.sigma_plus - 2.4608) < 1e-3
    for n in (1000, 10_000):
        assert report.identity_max_abs_err[n] < 1e-8
        assert report.freq_model1["bic"][n] >= 0.2
        assert report.freq_model2["bic"][n] >= 0.2
    assert abs(report.contrast_sd_over_sqrt_n[10_000] - 1.127) < 0.17


def test_two_point_family_structure():
    fam, sp = two_point_family(0.5)
    assert fam.complexities == [1.0, 1.0]
    assert fam.models[0].matrices[0][0, 0] == 0.5
    assert fam.models[1].matrices[0][0, 0] == sp


def test_flat_margin_class_residuals_and_slope():
    target = PopulationTarget(np.zeros(2), np.eye(2))
    sigma_star = np.array([[1.4, 0.2], [0.2, 0.9]])
    spec, curve = build_flat_margin_class(target, sigma_star, [0.05, 0.1, 0.2],
                                          curve_points=9, seed=1)
    assert max(curve.residuals.values()) < 1e-10
    assert 3.5 <= curve.slope <= 4.5
    assert all(np.linalg.eigvalsh(m)[0] > 0 for m in spec.matrices)
    assert 0.0 in curve.ts


def test_flat_margin_refused_at_the_target():
    target = PopulationTarget(np.zeros(2), np.eye(2))
    with pytest.raises(ValidationError, match="DQ vanishes"):
        build_flat_margin_class(target, np.eye(2), [0.1])
    with pytest.raises(ValidationError, match="p >= 2"):
        build_flat_margin_class(PopulationTarget(np.zeros(1), np.eye(1)),
                                np.array([[2.0]]), [0.1])


def test_flat_margin_seeded_reproducibility():
    target = PopulationTarget(np.zeros(3), np.diag([1.0, 1.5, 0.7]))
    sigma_star = np.diag([1.2, 1.0, 0.9])
    spec1, c1 = build_flat_margin_class(target, sigma_star, [0.05, 0.1], seed=7)
    spec2, c2 = build_flat_margin_class(target, sigma_star, [0.05, 0.1], seed=7)
    assert all(np.array_equal(a, b) for a, b in zip(spec1.matrices, spec2.matrices))
    assert c1.slope == c2.slope
