from datetime import datetime
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field as PydanticField
from sqlmodel import Field, SQLModel


class RunRecordBase(SQLModel):
    """
    Shared columns describing one command-line invocation.

    The serialized configuration and summary let a ledger reader reconstruct
    what ran and how it ended without opening the artifact directory.
    """
    command: str = Field(index=True)
    tag: str
    seed: Optional[int] = None
    exit_code: int
    format_version: str
    config_json: str  # JSON string of the resolved configuration
    summary_json: str  # JSON string of the headline numbers
    output_dir: str


class RunRecord(RunRecordBase, table=True):
    """Persistence model for the run ledger."""
    id: Optional[int] = Field(default=None, primary_key=True)
    created_at: datetime = Field(default_factory=datetime.utcnow)


class Report(BaseModel):
    """Base for every JSON artifact; rejects unknown fields."""
    model_config = ConfigDict(extra="forbid")


class ComplexityEstimate(Report):
    """
    Monte-Carlo estimate of the task complexity C(q) next to its digamma
    closed form.
    """
    mean: float
    std_error: float = PydanticField(ge=0.0)
    num_samples: int = PydanticField(gt=0)
    closed_form: float
    zero_draws_resampled: int = 0

    def agrees_with_closed_form(self, sigmas: float = 4.0) -> bool:
        return abs(self.mean - self.closed_form) <= sigmas * self.std_error


class ComplexityReport(Report):
    """Everything `fitbound complexity` prints for one dataset."""
    alphabet_size: int
    n: int
    prior_alpha: List[float]
    estimate: ComplexityEstimate
    lower_bound: float
    upper_reciprocal: Optional[float] = None
    upper_qmax: Optional[float] = None
    regularization_multiplier: float
    regularization_note: str = "heuristic: direction from the bound, scale is not derived"


class GenBoundReport(Report):
    """
    Monte-Carlo comparison of the generalization-error tail with its
    complexity bound L²·E[D_KL]/(2ε²) on an ε grid.
    """
    epsilon_grid: List[float]
    empirical_tail: List[float]
    bound_values: List[float]
    wilson_half_width: List[float]
    holds: List[bool]
    loss_sup: float
    trials: int
    n: int
    mean_kl: float
    expected_gen_sq_normalized: float
    markov_t_grid: List[float]
    markov_tail: List[float]
    markov_bound: List[float]
    low_trials_warning: bool

    @property
    def all_hold(self) -> bool:
        markov_ok = all(t <= b + 1e-12 for t, b in zip(self.markov_tail, self.markov_bound))
        return all(self.holds) and markov_ok


class FitReport(Report):
    """Dataset-level fitting-error diagnostics for one parameter vector."""
    fit: float
    fit_normalized: float
    bound: float
    loss_l2_mean: float
    g_min: Optional[float] = None
    lambda_max_max: float
    mean_f: float
    mean_g: float
    mean_residual_sq: float
    cauchy_schwarz_bound: float
    zero_grad_params: List[int] = []


class InputDiagnostics(Report):
    """One per-input row of the decomposition CSV."""
    x_index: int
    residual_sq: float
    f_term: float
    g_term: float
    lambda_max: float


class HessianCheck(Report):
    """Spectral comparison of the ERF Hessian with the per-input eNTK."""
    fd_lambda_max: float
    b_lambda_max_max: float
    entk_lambda_max_max: float
    decomposition_residual: float
    relative_residual: float
    symmetry_residual: float
    side_q_gradient_norm: float
    side_p_gradient_norm: float
    side_q_curvature_norm: float
    side_p_curvature_norm: float
    side_terms_vanish: bool
    hessian_below_entk: Optional[bool] = None


class RiskBoundReport(Report):
    """Assembled expected-risk bound R(f, q̄) ≤ model risk + fit term + ε(δ)."""
    model_risk: float
    fit_bound_term: float
    gen_epsilon: float
    delta: float
    total_bound: float
    complexity: float
    # size of the joint alphabet the complexity was computed on
    alphabet_size: int
    loss_sup: float
    regularization_multiplier: float
    regularization_note: str = "heuristic: direction from the bound, scale is not derived"
    # I(X;Y) under q_X·p_{Y|x}; with cross-entropy the model risk is H_p(Y|X) = H_p(Y) − I(X;Y)
    model_label_entropy: float
    model_mutual_information: float


class CoverageReport(Report):
    """Monte-Carlo coverage of the expected-risk bound over resampled datasets."""
    trials: int
    delta: float
    n: int
    expected_risk: float
    coverage: float
    triangle_violations: int
    mean_total_bound: float


class CorrelationReport(Report):
    """Post-stabilization correlation of test accuracy with the F/G traces."""
    seed: int
    stabilized_at: Optional[int]
    stable: bool
    window: int
    r_accuracy_f: Optional[float]
    r_accuracy_g: Optional[float]
    covariance: Optional[List[List[float]]] = None
    display_constant: float
    scaled_accuracy: List[float]
    warnings: List[str] = []


class ArchitectureRow(Report):
    """Per-architecture line of an architecture comparison."""
    architecture: str
    num_params: int
    stabilized_at: Optional[int]
    window: int
    r_accuracy_f: Optional[float]
    r_accuracy_g: Optional[float]


class ArchitectureComparison(Report):
    """
    Several architectures trained on one task and seed, compared on their
    post-stabilization tails (cut to a common length, aligned on the last epoch).

    ``labels`` names the rows and columns of ``covariance``: scaled accuracy
    then E_X[G] for each architecture in turn. ``cross_accuracy_g[a][b]`` is
    r(accuracy of a, E_X[G] of b) over the common tail.
    """
    seed: int
    window: int
    display_constant: float
    labels: List[str]
    covariance: Optional[List[List[float]]] = None
    cross_accuracy_g: List[List[Optional[float]]]
    rows: List[ArchitectureRow]
    warnings: List[str] = []


class CheckResult(Report):
    """Outcome of a single verification check."""
    name: str
    passed: bool
    margin: float
    detail: Dict[str, Any] = {}


class SuiteReport(Report):
    """Checks produced by one verification suite."""
    suite: str
    checks: List[CheckResult]
    warnings: List[str] = []
    # plot-ready rows, written as <name>.csv next to the report
    tables: Dict[str, List[Dict[str, Any]]] = {}

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)
