"""
Risk functionals R_ℓ(f_θ, ·) under the empirical, model and true joints, and
assembly of the expected-risk bound

    R_ℓ(f, q̄) ≤ R_ℓ(f, p) + √(E_X‖q−p‖²)·√(E_X‖ℓ(f(x))‖²) + L·√(C(q)/δ).

Datasets live on a discrete feature support: rows with identical features
are grouped at ingestion, giving q_X (the row weights) and q_{Y|x} (the row
conditionals).
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import log_softmax

from .complexity import PosteriorSpec, complexity_closed_form, suggested_regularization_multiplier
from .errors import ConfigurationError, DimensionError, DomainError, InvalidInputError
from .model import ModelSpec, forward
from .models import CoverageReport, RiskBoundReport
from .prob_core import PROB_TOL, Pmf, conditional_entropy, entropy, make_rng, mutual_information, sample_counts, validate_seed
from .workers import chunk_sizes, map_ordered

logger = logging.getLogger(__name__)

COVERAGE_CHUNK = 1_000


def _check_rows(probs: np.ndarray, name: str) -> None:
    if np.any(probs < 0.0) or not np.all(np.isfinite(probs)):
        raise InvalidInputError(f"{name} must be finite and non-negative")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > PROB_TOL):
        raise InvalidInputError(f"every {name} row must sum to 1")


@dataclass(frozen=True)
class Dataset:
    """
    Grouped sample over a discrete feature support.

    Row i holds a distinct feature vector, its weight q_X(x_i) and the
    conditional q_{Y|x_i}. ``counts`` keeps the raw label counts when the
    dataset was built from samples.
    """

    features: np.ndarray
    conditionals: np.ndarray
    weights: np.ndarray
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        conditionals = np.array(self.conditionals, dtype=np.float64)
        weights = np.array(self.weights, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise InvalidInputError("dataset needs at least one feature row")
        if conditionals.ndim != 2 or conditionals.shape[0] != features.shape[0]:
            raise DimensionError("conditionals must have one row per feature row")
        if weights.shape != (features.shape[0],):
            raise DimensionError("weights must have one entry per feature row")
        if np.any(weights <= 0.0) or abs(math.fsum(weights) - 1.0) > PROB_TOL:
            raise InvalidInputError("weights must be positive and sum to 1")
        _check_rows(conditionals, "conditional")
        if np.unique(features, axis=0).shape[0] != features.shape[0]:
            raise InvalidInputError("feature rows must be distinct; group samples first")
        for array in (features, conditionals, weights):
            array.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "conditionals", conditionals)
        object.__setattr__(self, "weights", weights)
        if self.counts is not None:
            counts = np.array(self.counts, dtype=np.int64)
            if counts.shape != conditionals.shape:
                raise DimensionError("counts must match the conditionals' shape")
            counts.setflags(write=False)
            object.__setattr__(self, "counts", counts)

    @classmethod
    def from_joint_counts(cls, features: np.ndarray, counts: np.ndarray) -> "Dataset":
        """Dataset from per-feature label counts; rows without samples are dropped."""
        features = np.asarray(features, dtype=np.float64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != features.shape[0]:
            raise DimensionError("counts must be a (features × labels) table")
        totals = counts.sum(axis=1)
        keep = totals > 0
        if not np.any(keep):
            raise InvalidInputError("dataset has no samples")
        counts, totals = counts[keep], totals[keep]
        return cls(
            features=features[keep],
            conditionals=counts / totals[:, None],
            weights=totals / totals.sum(),
            counts=counts,
        )

    @classmethod
    def from_samples(cls, X: np.ndarray, y: np.ndarray, num_classes: int) -> "Dataset":
        """Group raw (x, label) samples by identical feature rows."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2 or X.shape[0] == 0:
            raise InvalidInputError("samples must form a non-empty feature matrix")
        if y.shape != (X.shape[0],):
            raise DimensionError("one label per sample row is required")
        if np.any(y < 0) or np.any(y >= num_classes) or not np.all(np.equal(np.mod(y, 1), 0)):
            raise InvalidInputError(f"labels must be integers in [0, {num_classes})")
        unique, inverse = np.unique(X, axis=0, return_inverse=True)
        counts = np.zeros((unique.shape[0], num_classes), dtype=np.int64)
        np.add.at(counts, (inverse.reshape(-1), y.astype(np.int64)), 1)
        return cls.from_joint_counts(unique, counts)

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.conditionals.shape[1])

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_samples(self) -> Optional[int]:
        return None if self.counts is None else int(self.counts.sum())

    def joint_counts(self) -> np.ndarray:
        """Counts over 𝒵 = distinct x × labels, flattened row-major."""
        if self.counts is None:
            raise InvalidInputError("dataset carries no sample counts")
        return self.counts.reshape(-1)

    def joint_pmf(self) -> Pmf:
        joint = (self.weights[:, None] * self.conditionals).reshape(-1)
        return Pmf(joint / joint.sum())

    def expand(self) -> Tuple[np.ndarray, np.ndarray]:
        """Samples in canonical order (feature row, then label), one per count."""
        if self.counts is None:
            raise InvalidInputError("dataset carries no sample counts")
        flat = self.counts.reshape(-1)
        cells = np.repeat(np.arange(flat.size), flat)
        rows, labels = np.divmod(cells, self.num_classes)
        return self.features[rows], labels


@dataclass(frozen=True)
class JointDistribution:
    """A joint PMF over a discrete feature support × labels (probs sum to 1)."""

    features: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        probs = np.array(self.probs, dtype=np.float64)
        if features.ndim != 2 or probs.ndim != 2 or probs.shape[0] != features.shape[0]:
            raise DimensionError("joint table must be (features × labels)")
        Pmf(probs.reshape(-1))
        if np.unique(features, axis=0).shape[0] != features.shape[0]:
            raise InvalidInputError("feature rows must be distinct")
        features.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "probs", probs)

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[1])

    @property
    def marginal(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    def as_pmf(self) -> Pmf:
        return Pmf(self.probs.reshape(-1))

    def index_of(self, features: np.ndarray) -> np.ndarray:
        """Row of this support holding each given feature vector."""
        lookup = {row.tobytes(): i for i, row in enumerate(self.features)}
        indices = []
        for row in np.asarray(features, dtype=np.float64):
            key = row.tobytes()
            if key not in lookup:
                raise DomainError(f"feature {row.tolist()} is outside the support of q̄")
            indices.append(lookup[key])
        return np.array(indices, dtype=np.int64)

    def sample_dataset(self, n: int, rng: np.random.Generator) -> Dataset:
        counts = sample_counts(self.as_pmf(), n, rng)[0].reshape(self.probs.shape)
        return Dataset.from_joint_counts(self.features, counts)

    def support_counts(self, dataset: Dataset) -> np.ndarray:
        """
        The dataset's counts laid out over this whole support × labels,
        flattened row-major; unobserved cells stay at zero.
        """
        if dataset.counts is None:
            raise InvalidInputError("dataset carries no sample counts")
        if dataset.input_dim != self.features.shape[1] or dataset.num_classes != self.num_classes:
            raise DimensionError(
                f"dataset is {dataset.input_dim}→{dataset.num_classes}, "
                f"q̄ is {self.features.shape[1]}→{self.num_classes}"
            )
        counts = np.zeros(self.probs.shape, dtype=np.int64)
        counts[self.index_of(dataset.features)] = dataset.counts
        return counts.reshape(-1)


class LossKind(str, Enum):
    SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"
    CLIPPED_CROSS_ENTROPY = "clipped_cross_entropy"
    ZERO_ONE = "zero_one"


class LossSpec(BaseModel):
    """Per-label loss vector ℓ(f_θ(x)) ∈ ℝ^|𝒴| and its sup norm L."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: LossKind = LossKind.SOFTMAX_CROSS_ENTROPY
    l_max: float = Field(default=10.0, gt=0.0)

    @property
    def sup(self) -> float:
        if self.kind is LossKind.CLIPPED_CROSS_ENTROPY:
            return self.l_max
        if self.kind is LossKind.ZERO_ONE:
            return 1.0
        return math.inf

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.sup)

    def loss_vectors(self, logits: np.ndarray) -> np.ndarray:
        """Rows ℓ(f(x))_y for every label y, from a (N × K) logit matrix."""
        logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        if self.kind is LossKind.ZERO_ONE:
            losses = np.ones_like(logits)
            # ties go to the first maximal logit
            losses[np.arange(logits.shape[0]), logits.argmax(axis=1)] = 0.0
            return losses
        nll = -log_softmax(logits, axis=1)
        if self.kind is LossKind.CLIPPED_CROSS_ENTROPY:
            return np.minimum(nll, self.l_max)
        return nll


class ConditionalSource(str, Enum):
    EMPIRICAL = "empirical"
    MODEL = "model"
    EXTERNAL = "external"


def _expected_loss(weights: np.ndarray, conditionals: np.ndarray, losses: np.ndarray) -> float:
    # terms with zero probability contribute nothing, even against an infinite loss
    mass = weights[:, None] * conditionals
    mask = mass > 0.0
    return float(np.sum(mass[mask] * losses[mask]))


def check_compatible(spec: ModelSpec, dataset: Dataset) -> None:
    if dataset.input_dim != spec.input_dim or dataset.num_classes != spec.num_classes:
        raise DimensionError(
            f"dataset is {dataset.input_dim}→{dataset.num_classes}, model is {spec.input_dim}→{spec.num_classes}"
        )


def model_conditionals(spec: ModelSpec, theta: np.ndarray, features: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(forward(spec, theta, np.atleast_2d(features)), axis=1))


def risk(
    spec: ModelSpec,
    theta: np.ndarray,
    dataset: Optional[Dataset],
    source: ConditionalSource,
    loss: LossSpec,
    q_bar: Optional[JointDistribution] = None,
) -> float:
    """
    E ℓ(f_θ(x), y) under the selected joint.

    * EMPIRICAL: q_X(x)·q_{Y|x}(y)
    * MODEL: q_X(x)·p_{Y|x}(y)
    * EXTERNAL: the supplied joint q̄

    An infinite loss on a reachable (x, y) gives +inf.
    """
    source = ConditionalSource(source)
    if source is ConditionalSource.EXTERNAL:
        if q_bar is None:
            raise InvalidInputError("external risk needs a joint distribution")
        if q_bar.features.shape[1] != spec.input_dim or q_bar.num_classes != spec.num_classes:
            raise DimensionError(
                f"q̄ is {q_bar.features.shape[1]}→{q_bar.num_classes}, model is {spec.input_dim}→{spec.num_classes}"
            )
        logits = forward(spec, theta, q_bar.features)
        value = _expected_loss(np.ones(q_bar.features.shape[0]), q_bar.probs, loss.loss_vectors(logits))
    else:
        check_compatible(spec, dataset)
        logits = forward(spec, theta, dataset.features)
        if source is ConditionalSource.EMPIRICAL:
            conditionals = dataset.conditionals
        else:
            conditionals = np.exp(log_softmax(logits, axis=1))
        value = _expected_loss(dataset.weights, conditionals, loss.loss_vectors(logits))
    if math.isinf(value):
        logger.warning("Risk under %s is infinite for loss %s", source.value, loss.kind.value)
    return value


def erf_risk(spec: ModelSpec, theta: np.ndarray, dataset: Dataset) -> float:
    """Expected rate function E_{X∼q_X} D_KL(q_{Y|x}‖p_{Y|x})."""
    check_compatible(spec, dataset)
    log_p = log_softmax(forward(spec, theta, dataset.features), axis=1)
    q = dataset.conditionals
    mask = q > 0.0
    per_cell = np.zeros_like(q)
    per_cell[mask] = q[mask] * (np.log(q[mask]) - log_p[mask])
    return float(dataset.weights @ per_cell.sum(axis=1))


def empirical_conditional_entropy(dataset: Dataset) -> float:
    """H_q(Y|X) of the grouped dataset."""
    return conditional_entropy(dataset.conditionals, dataset.weights)


def gen_error(
    spec: ModelSpec,
    theta: np.ndarray,
    dataset: Dataset,
    q_bar: JointDistribution,
    loss: LossSpec,
) -> float:
    """|R_ℓ(f, q̄) − R_ℓ(f, q)|; every dataset feature must lie in the support of q̄."""
    q_bar.index_of(dataset.features)
    expected = risk(spec, theta, dataset, ConditionalSource.EXTERNAL, loss, q_bar=q_bar)
    empirical = risk(spec, theta, dataset, ConditionalSource.EMPIRICAL, loss)
    return abs(expected - empirical)


def residual_second_moment(spec: ModelSpec, theta: np.ndarray, dataset: Dataset) -> float:
    """E_X ‖q_{Y|x} − p_{Y|x}‖²."""
    check_compatible(spec, dataset)
    p = model_conditionals(spec, theta, dataset.features)
    return float(dataset.weights @ np.sum((dataset.conditionals - p) ** 2, axis=1))


def loss_second_moment(spec: ModelSpec, theta: np.ndarray, dataset: Dataset, loss: LossSpec) -> float:
    """E_X ‖ℓ(f_θ(x))‖²."""
    check_compatible(spec, dataset)
    losses = loss.loss_vectors(forward(spec, theta, dataset.features))
    return float(dataset.weights @ np.sum(losses**2, axis=1))


def model_mutual_information(spec: ModelSpec, theta: np.ndarray, dataset: Dataset) -> float:
    """I(X;Y) under the model joint q_X(x)·p_{Y|x}(y)."""
    check_compatible(spec, dataset)
    return mutual_information(model_conditionals(spec, theta, dataset.features), dataset.weights)


def expected_risk_bound(
    spec: ModelSpec,
    theta: np.ndarray,
    dataset: Dataset,
    delta: float,
    loss: LossSpec,
    posterior: Optional[PosteriorSpec] = None,
    regularization_scale: float = 1.0,
    q_bar: Optional[JointDistribution] = None,
) -> RiskBoundReport:
    """
    Assemble model risk + fit term + ε(δ) with ε(δ) = L·√(C(q)/δ).

    Without an explicit posterior the complexity uses a flat prior over the
    dataset's joint counts. When q̄ is given those counts are laid out over
    its whole support × labels, so inputs the sample never hit still count
    towards |𝒵|; otherwise 𝒵 is the observed inputs × labels.
    """
    if not loss.bounded:
        raise ConfigurationError(f"loss {loss.kind.value} is unbounded; use clipped_cross_entropy or zero_one")
    if not 0.0 < delta < 1.0:
        raise InvalidInputError(f"δ must lie in (0, 1), got {delta!r}")
    check_compatible(spec, dataset)
    if posterior is None:
        counts = dataset.joint_counts() if q_bar is None else q_bar.support_counts(dataset)
        posterior = PosteriorSpec.from_counts(counts)

    complexity = complexity_closed_form(posterior)
    model_risk = risk(spec, theta, dataset, ConditionalSource.MODEL, loss)
    fit_term = math.sqrt(residual_second_moment(spec, theta, dataset) * loss_second_moment(spec, theta, dataset, loss))
    gen_eps = loss.sup * math.sqrt(max(complexity, 0.0) / delta)
    marginal = dataset.weights @ model_conditionals(spec, theta, dataset.features)
    return RiskBoundReport(
        model_risk=model_risk,
        fit_bound_term=fit_term,
        gen_epsilon=gen_eps,
        delta=delta,
        total_bound=model_risk + fit_term + gen_eps,
        complexity=complexity,
        alphabet_size=int(posterior.counts.size),
        loss_sup=loss.sup,
        regularization_multiplier=suggested_regularization_multiplier(complexity, regularization_scale),
        model_label_entropy=entropy(Pmf.from_counts(marginal)),
        model_mutual_information=model_mutual_information(spec, theta, dataset),
    )


def _coverage_block(
    spec: ModelSpec,
    theta: np.ndarray,
    q_bar: JointDistribution,
    n: int,
    delta: float,
    loss: LossSpec,
    seed: int,
    index: int,
    size: int,
) -> Tuple[int, int, list]:
    rng = make_rng(seed, index)
    expected = risk(spec, theta, None, ConditionalSource.EXTERNAL, loss, q_bar=q_bar)
    covered = violations = 0
    totals = []
    for _ in range(size):
        dataset = q_bar.sample_dataset(n, rng)
        report = expected_risk_bound(spec, theta, dataset, delta, loss, q_bar=q_bar)
        empirical = risk(spec, theta, dataset, ConditionalSource.EMPIRICAL, loss)
        fit = abs(report.model_risk - empirical)
        gen = abs(expected - empirical)
        covered += expected <= report.total_bound
        violations += abs(expected - report.model_risk) > gen + fit + 1e-12
        totals.append(report.total_bound)
    return covered, violations, totals


def verify_risk_coverage(
    spec: ModelSpec,
    theta: np.ndarray,
    q_bar: JointDistribution,
    n: int,
    delta: float,
    loss: LossSpec,
    trials: int,
    seed: int,
    jobs: int = 1,
) -> CoverageReport:
    """
    Fraction of resampled datasets (n draws from q̄ each) for which the
    assembled bound covers the true risk R_ℓ(f, q̄).

    Also counts violations of the triangle step
    |R(f,q̄) − R(f,p)| ≤ gen + fit.
    """
    seed = validate_seed(seed)
    if trials < 1:
        raise InvalidInputError("trials must be positive")
    blocks = list(enumerate(chunk_sizes(trials, COVERAGE_CHUNK)))
    results = map_ordered(
        lambda block: _coverage_block(spec, theta, q_bar, n, delta, loss, seed, *block),
        blocks,
        jobs,
    )
    covered = sum(r[0] for r in results)
    violations = sum(r[1] for r in results)
    totals = [t for r in results for t in r[2]]
    report = CoverageReport(
        trials=trials,
        delta=delta,
        n=n,
        expected_risk=risk(spec, theta, None, ConditionalSource.EXTERNAL, loss, q_bar=q_bar),
        coverage=covered / trials,
        triangle_violations=violations,
        mean_total_bound=math.fsum(totals) / trials,
    )
    logger.info("Risk-bound coverage %.4f over %d datasets (δ=%s)", report.coverage, trials, delta)
    return report
