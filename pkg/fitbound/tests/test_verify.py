import pytest

from fitbound.config import VerifyConfig
from fitbound.verify import (
    Suite,
    complexity_suite,
    fit_bound_suite,
    gen_bound_suite,
    hessian_suite,
    lemmas_suite,
    risk_bound_suite,
    run_suites,
)


@pytest.fixture
def quick_config():
    return VerifyConfig(
        seed=1,
        lemma_instances=50,
        pinsker_instances=300,
        decomposition_instances=50,
        fit_bound_pairs=5,
        gen_bound_trials=2000,
        complexity_specs=5,
        complexity_samples=5000,
        hessian_instances=3,
        monotonicity_instances=3,
        coverage_trials=200,
    )


def failed(report):
    return [check.name for check in report.checks if not check.passed]


class TestSuites:
    def test_lemmas(self, quick_config):
        report = lemmas_suite(quick_config)
        assert report.suite == "lemmas"
        assert failed(report) == []
        names = {check.name for check in report.checks}
        assert {"pinsker_mean_bound", "lagrange_identity", "weyl_inequalities", "kl_grad_finite_difference"} <= names

    def test_complexity(self, quick_config):
        report = complexity_suite(quick_config)
        assert failed(report) == []
        reference = next(check for check in report.checks if check.name == "closed_form_reference")
        assert reference.detail["reference_value"] == pytest.approx(0.021698, abs=1e-6)
        assert [row["n"] for row in report.tables["complexity_vs_n"]] == [10 * 2**i for i in range(11)]
        assert report.tables["uniformity"]
        assert report.warnings

    def test_gen_bound(self, quick_config):
        report = gen_bound_suite(quick_config)
        assert failed(report) == []
        assert report.warnings == []
        assert len(report.tables["gen_bound"]) == len(quick_config.epsilon_grid)

    def test_gen_bound_low_trials_warns(self, quick_config):
        report = gen_bound_suite(quick_config.with_trials(10))
        assert report.warnings

    def test_fit_bound(self, quick_config):
        assert failed(fit_bound_suite(quick_config)) == []

    def test_hessian(self, quick_config):
        report = hessian_suite(quick_config)
        assert failed(report) == []
        # with bias terms the q-weighted side terms never vanish
        assert report.warnings

    def test_risk_bound(self, quick_config):
        report = risk_bound_suite(quick_config)
        assert failed(report) == []
        coverage = next(check for check in report.checks if check.name == "coverage")
        assert coverage.margin >= 0.0

    def test_margins_non_negative_when_passing(self, quick_config):
        for check in lemmas_suite(quick_config).checks:
            if check.passed:
                assert check.margin >= 0.0


class TestRunSuites:
    def test_single_suite(self, quick_config):
        reports = run_suites(Suite.GEN_BOUND, quick_config)
        assert [r.suite for r in reports] == ["gen_bound"]

    def test_accepts_suite_name(self, quick_config):
        assert run_suites("lemmas", quick_config)[0].suite == "lemmas"

    def test_unknown_suite(self, quick_config):
        with pytest.raises(ValueError):
            run_suites("everything", quick_config)

    def test_jobs_do_not_change_results(self, quick_config):
        one = run_suites(Suite.RISK_BOUND, quick_config, jobs=1)
        many = run_suites(Suite.RISK_BOUND, quick_config, jobs=3)
        assert [r.model_dump() for r in one] == [r.model_dump() for r in many]

    def test_seed_changes_monte_carlo(self, quick_config):
        first = gen_bound_suite(quick_config).tables["gen_bound"]
        second = gen_bound_suite(quick_config.model_copy(update={"seed": 2})).tables["gen_bound"]
        assert first != second

    def test_largest_seed_runs_every_suite(self, quick_config):
        config = quick_config.model_copy(update={"seed": 2**64 - 1})
        reports = run_suites(Suite.ALL, config)
        assert [r.suite for r in reports] == ["lemmas", "complexity", "gen_bound", "fit_bound", "hessian", "risk_bound"]

