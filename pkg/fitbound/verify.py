"""
Verification suites behind ``fitbound verify``.

Every check reports a margin: how far the measured quantity sits inside its
contract (non-negative when the check passes).
"""
import logging
import math
from enum import Enum
from typing import Callable, Dict, List

import numpy as np

from .complexity import (
    PosteriorSpec,
    complexity_closed_form,
    complexity_lower_bound,
    complexity_upper_estimate,
    estimate_complexity,
    majorization_ordering_check,
    uniformity_ordering_check,
    verify_gen_bound,
    wilson_interval,
)
from .config import VerifyConfig
from .fitdiag import (
    cauchy_schwarz_gap,
    decompose,
    fit_report,
    g_min_monotonicity,
    hessian_check,
    lagrange_identity_residual,
)
from .model import ModelSpec, entk, forward, init_params, jacobian, kl_grad, predictive
from .models import CheckResult, SuiteReport
from .numdiff import gradient, max_relative_error
from .prob_core import derive_seed, kl_divergence, make_rng, pinsker_gap
from .risk import (
    ConditionalSource,
    Dataset,
    JointDistribution,
    LossSpec,
    empirical_conditional_entropy,
    erf_risk,
    risk,
    verify_risk_coverage,
)
from .spectral import is_psd, trace_bounds_slack, weyl_slack

logger = logging.getLogger(__name__)

FD_TOL = 1e-6
IDENTITY_TOL = 1e-9
HESSIAN_RESIDUAL_TOL = 1e-3
COMPLEXITY_SIGMAS = 4.0
REFERENCE_COMPLEXITY = 0.021698  # counts (5, 5), flat prior


class Suite(str, Enum):
    LEMMAS = "lemmas"
    COMPLEXITY = "complexity"
    GEN_BOUND = "gen_bound"
    FIT_BOUND = "fit_bound"
    HESSIAN = "hessian"
    RISK_BOUND = "risk_bound"
    ALL = "all"


# stream keys so every suite draws independent instances from one seed
_STREAMS = {suite: i for i, suite in enumerate(Suite)}


def _at_least(name: str, value: float, floor: float, **detail) -> CheckResult:
    margin = value - floor
    return CheckResult(name=name, passed=bool(margin >= 0.0), margin=float(margin), detail=detail)


def _at_most(name: str, value: float, ceiling: float, **detail) -> CheckResult:
    margin = ceiling - value
    return CheckResult(name=name, passed=bool(margin >= 0.0), margin=float(margin), detail=detail)


def _random_pmf(rng: np.random.Generator, k: int) -> np.ndarray:
    p = rng.dirichlet(np.ones(k))
    return p / p.sum()


def _random_dataset(rng: np.random.Generator, size: int, input_dim: int, num_classes: int) -> Dataset:
    conditionals = np.array([_random_pmf(rng, num_classes) for _ in range(size)])
    weights = _random_pmf(rng, size)
    weights /= math.fsum(weights)
    return Dataset(features=rng.normal(size=(size, input_dim)), conditionals=conditionals, weights=weights)


def lemmas_suite(config: VerifyConfig) -> SuiteReport:
    """Pinsker-derived mean bound, Lagrange identity, eigenvalue lemmas and derivative oracles."""
    seed = config.seed
    checks: List[CheckResult] = []

    rng = make_rng(seed, _STREAMS[Suite.LEMMAS], 0)
    worst = math.inf
    for _ in range(config.pinsker_instances):
        k = int(rng.integers(2, 21))
        bound = float(rng.uniform(0.1, 5.0))
        gap = pinsker_gap(_random_pmf(rng, k), _random_pmf(rng, k), rng.uniform(0.0, bound, size=k), bound)
        worst = min(worst, gap)
    checks.append(_at_least("pinsker_mean_bound", worst, -1e-12, instances=config.pinsker_instances))

    rng = make_rng(seed, _STREAMS[Suite.LEMMAS], 1)
    worst = -math.inf
    for _ in range(config.lemma_instances):
        r, k = (int(v) for v in rng.integers(1, 21, size=2))
        A = rng.normal(size=(r, k))
        x = rng.normal(size=k)
        scale = 1.0 + float(np.sum(A**2) * (x @ x))
        worst = max(worst, lagrange_identity_residual(A, x) / scale)
    checks.append(_at_most("lagrange_identity", worst, IDENTITY_TOL, instances=config.lemma_instances))

    rng = make_rng(seed, _STREAMS[Suite.LEMMAS], 2)
    trace_worst = weyl_worst = math.inf
    for _ in range(100):
        k = int(rng.integers(2, 21))
        a = rng.normal(size=(k, k))
        b = rng.normal(size=(k, k))
        a, b = a @ a.T, b @ b.T
        scale = 1e-9 * (1.0 + float(np.trace(a) + np.trace(b)))
        trace_worst = min(trace_worst, min(trace_bounds_slack(a)) / scale)
        weyl_worst = min(weyl_worst, min(weyl_slack(a, b)) / scale)
    checks.append(_at_least("trace_eigenvalue_bounds", trace_worst, -1.0, pairs=100))
    checks.append(_at_least("weyl_inequalities", weyl_worst, -1.0, pairs=100))

    spec = ModelSpec(input_dim=2, hidden_dims=[16], num_classes=3)
    rng = make_rng(seed, _STREAMS[Suite.LEMMAS], 3)
    psd = True
    trace_error = jac_error = grad_error = 0.0
    for i in range(20):
        theta = init_params(spec, derive_seed(seed, _STREAMS[Suite.LEMMAS], 4, i))
        x = rng.normal(size=2)
        q = _random_pmf(rng, 3)
        jac = jacobian(spec, theta, x)
        kernel = entk(spec, theta, x)
        psd = psd and is_psd(kernel.gram)
        trace_error = max(trace_error, abs(kernel.trace - float(np.sum(jac**2))) / float(np.sum(jac**2)))
        jac_error = max(jac_error, max_relative_error(jac, gradient(lambda t: forward(spec, t, x), theta)))
        numeric = gradient(lambda t: kl_divergence(q, predictive(spec, t, x)), theta)
        grad_error = max(grad_error, max_relative_error(kl_grad(spec, theta, x, q), numeric))
    checks.append(CheckResult(name="entk_psd", passed=psd, margin=0.0))
    checks.append(_at_most("entk_trace_identity", trace_error, 1e-12))
    checks.append(_at_most("jacobian_finite_difference", jac_error, FD_TOL))
    checks.append(_at_most("kl_grad_finite_difference", grad_error, FD_TOL))
    return SuiteReport(suite=Suite.LEMMAS.value, checks=checks)


def complexity_suite(config: VerifyConfig) -> SuiteReport:
    """Closed form against Monte Carlo, Jensen lower bound, asymptotics and uniformity ordering."""
    seed = config.seed
    checks: List[CheckResult] = []
    tables: Dict[str, List[dict]] = {}

    reference = complexity_closed_form(PosteriorSpec.from_counts([5, 5]))
    checks.append(_at_most("closed_form_reference", abs(reference - REFERENCE_COMPLEXITY), 1e-6, reference_value=reference))

    rng = make_rng(seed, _STREAMS[Suite.COMPLEXITY], 0)
    worst_z = 0.0
    lower_margin = math.inf
    for i in range(config.complexity_specs):
        k = int(rng.integers(2, 11))
        counts = rng.integers(0, 20, size=k)
        counts[rng.integers(k)] += 1
        spec = PosteriorSpec.from_counts(counts, prior_alpha=float(rng.uniform(0.5, 2.0)))
        estimate = estimate_complexity(spec, config.complexity_samples, seed=derive_seed(seed, _STREAMS[Suite.COMPLEXITY], 1, i))
        worst_z = max(worst_z, abs(estimate.mean - estimate.closed_form) / max(estimate.std_error, 1e-300))
        lower_margin = min(lower_margin, 2.0 * estimate.closed_form - complexity_lower_bound(spec))
    checks.append(_at_most("monte_carlo_agreement_sigmas", worst_z, COMPLEXITY_SIGMAS, specs=config.complexity_specs))
    checks.append(_at_least("jensen_lower_bound", lower_margin, -1e-12))

    q = np.array([0.5, 0.3, 0.2])
    values = []
    for i in range(11):
        n = 10 * 2**i
        counts = np.rint(q * n).astype(np.int64)
        values.append(complexity_closed_form(PosteriorSpec.from_counts(counts)))
    steps = [a - b for a, b in zip(values, values[1:])]
    checks.append(_at_least("decreasing_in_n", min(steps), 0.0))
    checks.append(_at_most("vanishes_with_n", values[-1], 1e-4))
    tables["complexity_vs_n"] = [{"n": 10 * 2**i, "closed_form": v} for i, v in enumerate(values)]

    uniform_rows = []
    for n, k in ((20, 2), (20, 4)):
        report = uniformity_ordering_check(n, k, seed=seed)
        gap = min(value for _, value in report.compared) - report.uniform_value
        checks.append(_at_least(f"uniform_minimizes_k{k}", gap, -1e-12, exhaustive=report.exhaustive))
        uniform_rows.extend({"k": k, "counts": " ".join(map(str, c)), "closed_form": v} for c, v in report.compared)
    tables["uniformity"] = uniform_rows

    majorization = majorization_ordering_check(12, 3)
    checks.append(
        CheckResult(
            name="majorization_ordering",
            passed=majorization.holds,
            margin=float(-len(majorization.violations)),
            detail={"pairs": majorization.pairs_checked},
        )
    )

    upper = complexity_upper_estimate(PosteriorSpec.from_counts([5, 5]))
    warnings = [] if upper is None else [f"upper estimates of E D_KL for counts (5,5): {upper[0]:.6g}, {upper[1]:.6g} (reported, not asserted)"]
    return SuiteReport(suite=Suite.COMPLEXITY.value, checks=checks, warnings=warnings, tables=tables)


def gen_bound_suite(config: VerifyConfig, jobs: int = 1) -> SuiteReport:
    """Monte-Carlo tail of the generalization error against its complexity bound."""
    rng = make_rng(config.seed, _STREAMS[Suite.GEN_BOUND], 0)
    q_bar = _random_pmf(rng, 6)
    loss = rng.uniform(0.0, 1.0, size=6)
    report = verify_gen_bound(
        q_bar, config.gen_bound_n, loss, 1.0, config.epsilon_grid, config.gen_bound_trials, config.seed, jobs=jobs
    )
    checks = []
    for e, tail, bound, holds in zip(report.epsilon_grid, report.empirical_tail, report.bound_values, report.holds):
        low, _ = wilson_interval(tail, report.trials)
        checks.append(
            CheckResult(name=f"tail_bound_eps_{e:g}", passed=holds, margin=bound - low, detail={"tail": tail, "bound": bound})
        )
    markov_margin = min((b - t for t, b in zip(report.markov_tail, report.markov_bound)), default=0.0)
    checks.append(_at_least("markov_step", markov_margin, -1e-12))
    checks.append(
        _at_most(
            "expected_gen_below_kl",
            report.expected_gen_sq_normalized,
            report.mean_kl + 1e-12,
            mean_kl=report.mean_kl,
        )
    )
    warnings = [f"only {report.trials} trials; tail estimates are low-confidence"] if report.low_trials_warning else []
    table = [
        {"epsilon": e, "empirical_tail": t, "bound": b, "wilson_half_width": h}
        for e, t, b, h in zip(report.epsilon_grid, report.empirical_tail, report.bound_values, report.wilson_half_width)
    ]
    return SuiteReport(suite=Suite.GEN_BOUND.value, checks=checks, warnings=warnings, tables={"gen_bound": table})


def fit_bound_suite(config: VerifyConfig, jobs: int = 1) -> SuiteReport:
    """Exact F/G split, the fitting-error bound, ERF identity and G_M monotonicity."""
    seed = config.seed
    spec = ModelSpec(input_dim=2, hidden_dims=[16], num_classes=3)
    checks: List[CheckResult] = []

    rng = make_rng(seed, _STREAMS[Suite.FIT_BOUND], 0)
    identity = per_param = 0.0
    entk_gap = math.inf
    for i in range(config.decomposition_instances):
        theta = init_params(spec, derive_seed(seed, _STREAMS[Suite.FIT_BOUND], 3, i))
        x = rng.normal(size=2)
        q = _random_pmf(rng, 3)
        d = decompose(spec, theta, x, q)
        identity = max(identity, d.identity_error())
        per_param = max(per_param, d.per_param_identity_error())
        entk_gap = min(entk_gap, d.lambda_max * d.residual_sq / d.trace - d.f_term)
    checks.append(_at_most("fg_identity", identity, IDENTITY_TOL, instances=config.decomposition_instances))
    checks.append(_at_most("fg_identity_per_parameter", per_param, IDENTITY_TOL))
    checks.append(_at_least("f_term_entk_bound", entk_gap, -1e-12))

    rng = make_rng(seed, _STREAMS[Suite.FIT_BOUND], 1)
    bound_margin = cs_margin = math.inf
    erf_error = 0.0
    sce = LossSpec()
    for i in range(config.fit_bound_pairs):
        dataset = _random_dataset(rng, int(rng.integers(2, 9)), 2, 3)
        theta = init_params(spec, derive_seed(seed, _STREAMS[Suite.FIT_BOUND], 4, i))
        report = fit_report(spec, theta, dataset, sce, with_g_min=False, jobs=jobs)
        bound_margin = min(bound_margin, report.bound - report.fit_normalized)
        cs_margin = min(cs_margin, cauchy_schwarz_gap(spec, theta, dataset, sce))
        lhs = risk(spec, theta, dataset, ConditionalSource.EMPIRICAL, sce) - empirical_conditional_entropy(dataset)
        erf_error = max(erf_error, abs(lhs - erf_risk(spec, theta, dataset)))
    checks.append(_at_least("fitting_error_bound", bound_margin, -IDENTITY_TOL, pairs=config.fit_bound_pairs))
    checks.append(_at_least("cauchy_schwarz", cs_margin, -1e-12))
    checks.append(_at_most("erf_identity", erf_error, 1e-10))

    rng = make_rng(seed, _STREAMS[Suite.FIT_BOUND], 2)
    violations = 0
    for i in range(config.monotonicity_instances):
        dataset = _random_dataset(rng, 4, 2, 3)
        values = g_min_monotonicity(spec, init_params(spec, derive_seed(seed, _STREAMS[Suite.FIT_BOUND], 5, i)), dataset, range(1, spec.num_params + 1), jobs=jobs)
        violations += sum(b > a for a, b in zip(values, values[1:]))
    checks.append(
        CheckResult(name="g_min_monotone", passed=violations == 0, margin=float(-violations), detail={"instances": config.monotonicity_instances})
    )
    return SuiteReport(suite=Suite.FIT_BOUND.value, checks=checks)


def hessian_suite(config: VerifyConfig) -> SuiteReport:
    """Spectral comparison of the ERF Hessian pieces with the eNTK."""
    seed = config.seed
    rng = make_rng(seed, _STREAMS[Suite.HESSIAN], 0)
    small = ModelSpec(input_dim=2, hidden_dims=[4], num_classes=2)
    spectral_margin = math.inf
    applicable = 0
    for i in range(config.hessian_instances):
        report = hessian_check(small, init_params(small, derive_seed(seed, _STREAMS[Suite.HESSIAN], 1, i)), _random_dataset(rng, 3, 2, 2))
        spectral_margin = min(spectral_margin, report.entk_lambda_max_max - report.b_lambda_max_max)
        applicable += report.side_terms_vanish

    medium = ModelSpec(input_dim=2, hidden_dims=[8], num_classes=3)
    report = hessian_check(medium, init_params(medium, seed), _random_dataset(rng, 5, 2, 3))
    checks = [
        _at_least("b_below_entk", spectral_margin, -1e-12, instances=config.hessian_instances),
        _at_most("hessian_assembly", report.relative_residual, HESSIAN_RESIDUAL_TOL, params=medium.num_params),
    ]
    warnings = []
    if report.side_terms_vanish:
        checks.append(CheckResult(name="hessian_below_entk", passed=bool(report.hessian_below_entk), margin=report.entk_lambda_max_max - report.fd_lambda_max))
    else:
        warnings.append(
            f"q-weighted side terms do not vanish (‖Jᵀq‖ up to {report.side_q_gradient_norm:.3g}); "
            f"λmax(H)={report.fd_lambda_max:.6g} vs max λmax(eNTK)={report.entk_lambda_max_max:.6g} is reported only"
        )
    return SuiteReport(suite=Suite.HESSIAN.value, checks=checks, warnings=warnings)


def risk_bound_suite(config: VerifyConfig, jobs: int = 1) -> SuiteReport:
    """Coverage of the assembled expected-risk bound on a three-input toy joint."""
    rng = make_rng(config.seed, _STREAMS[Suite.RISK_BOUND], 0)
    q_bar = JointDistribution(features=np.array([[-1.0], [0.5], [2.0]]), probs=_random_pmf(rng, 6).reshape(3, 2))
    spec = ModelSpec(input_dim=1, num_classes=2)
    report = verify_risk_coverage(
        spec,
        init_params(spec, config.seed),
        q_bar,
        n=config.coverage_n,
        delta=config.delta,
        loss=LossSpec(kind="zero_one"),
        trials=config.coverage_trials,
        seed=config.seed,
        jobs=jobs,
    )
    checks = [
        _at_least("coverage", report.coverage, 1.0 - config.delta, trials=report.trials, expected_risk=report.expected_risk),
        CheckResult(name="triangle_step", passed=report.triangle_violations == 0, margin=float(-report.triangle_violations)),
    ]
    return SuiteReport(suite=Suite.RISK_BOUND.value, checks=checks)


_RUNNERS: Dict[Suite, Callable[[VerifyConfig, int], SuiteReport]] = {
    Suite.LEMMAS: lambda config, jobs: lemmas_suite(config),
    Suite.COMPLEXITY: lambda config, jobs: complexity_suite(config),
    Suite.GEN_BOUND: gen_bound_suite,
    Suite.FIT_BOUND: fit_bound_suite,
    Suite.HESSIAN: lambda config, jobs: hessian_suite(config),
    Suite.RISK_BOUND: risk_bound_suite,
}


def run_suites(suite: Suite, config: VerifyConfig, jobs: int = 1) -> List[SuiteReport]:
    """Run one suite, or every suite in a fixed order for ``all``."""
    suite = Suite(suite)
    selected = list(_RUNNERS) if suite is Suite.ALL else [suite]
    reports = []
    for name in selected:
        logger.info("Running %s suite", name.value)
        report = _RUNNERS[name](config, jobs)
        for check in report.checks:
            logger.debug("%s/%s: passed=%s margin=%.3g", name.value, check.name, check.passed, check.margin)
        level = logging.INFO if report.passed else logging.WARNING
        logger.log(level, "Suite %s %s", name.value, "passed" if report.passed else "FAILED")
        reports.append(report)
    return reports
