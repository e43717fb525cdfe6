"""
Toy-scale training experiment: synthetic grid data with a known q̄, SGD with
momentum and weight decay, per-epoch F/G diagnostics and the correlation of
test accuracy with those diagnostics once training has stabilized.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.stats import pearsonr

from .errors import (
    DataGenerationError,
    InvalidInputError,
    NumericError,
    TrainingDivergedError,
    UndefinedCorrelationError,
)
from .fitdiag import decompose_dataset, fit_report
from .model import ModelSpec, init_params, loss_and_grad, predictive_batch, validate_params
from .models import ArchitectureComparison, ArchitectureRow, CorrelationReport
from .prob_core import make_rng, validate_seed
from .risk import Dataset, JointDistribution, LossSpec, check_compatible

logger = logging.getLogger(__name__)

MAX_GRID_CELLS = 10_000
MAX_GENERATION_ATTEMPTS = 10
DEFAULT_DISPLAY_CONSTANT = 20.0
RECORD_COLUMNS = ("epoch", "train_loss", "test_accuracy", "mean_f", "mean_g", "lambda_max_max")

# independent RNG streams derived from one seed
_DATA_STREAM = 1
_SHUFFLE_STREAM = 2


class TrainConfig(BaseModel):
    """Optimizer and stabilization settings for one training run."""
    model_config = ConfigDict(extra="forbid")

    learning_rate_schedule: List[Tuple[int, float]] = [(0, 0.1), (120, 0.01), (160, 0.001)]
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=5e-4, ge=0.0)
    batch_size: int = Field(default=100, gt=0)
    epochs: int = Field(default=200, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    stabilization_window: int = Field(default=10, gt=0)
    stabilization_tolerance: float = Field(default=1e-3, gt=0.0)

    @field_validator("learning_rate_schedule")
    @classmethod
    def _schedule(cls, schedule: List[Tuple[int, float]]) -> List[Tuple[int, float]]:
        if not schedule or schedule[0][0] != 0:
            raise ValueError("learning-rate schedule must start at epoch 0")
        epochs = [epoch for epoch, _ in schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("learning-rate schedule epochs must be strictly increasing")
        if any(not math.isfinite(rate) or rate < 0.0 for _, rate in schedule):
            raise ValueError("learning rates must be finite and non-negative")
        return schedule

    def rate_at(self, epoch: int) -> float:
        """Rate used during ``epoch`` (1-based): the last entry at or below epoch − 1."""
        rate = self.learning_rate_schedule[0][1]
        for start, value in self.learning_rate_schedule:
            if start <= epoch - 1:
                rate = value
        return rate


class SyntheticDataSpec(BaseModel):
    """Grid-point classification task with symmetric label noise."""
    model_config = ConfigDict(extra="forbid")

    num_grid_points: int = Field(default=64, gt=0)
    input_dim: int = Field(default=2, gt=0)
    num_classes: int = Field(default=3, gt=0)
    label_noise: float = Field(default=0.1, ge=0.0, le=0.5)
    train_n: int = Field(default=1000, gt=0)
    test_n: int = Field(default=1000, gt=0)

    @model_validator(mode="after")
    def _grid_cap(self) -> "SyntheticDataSpec":
        if self.num_grid_points * self.num_classes > MAX_GRID_CELLS:
            raise ValueError(f"grid points × classes must not exceed {MAX_GRID_CELLS}")
        if self.num_classes > self.num_grid_points:
            raise ValueError("need at least one grid point per class")
        return self


def make_synthetic(spec: SyntheticDataSpec, seed: int) -> Tuple[Dataset, Dataset, JointDistribution]:
    """
    Draw grid features uniformly in [−1, 1]^d and label them with the argmax
    of a random affine map. q_{Y|x} puts 1 − η on that class and spreads η
    over the rest; q_X is uniform over the grid.

    Train and test samples are drawn from the exact q̄, which is returned too.
    """
    seed = validate_seed(seed)
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        rng = make_rng(seed, _DATA_STREAM, attempt)
        features = rng.uniform(-1.0, 1.0, size=(spec.num_grid_points, spec.input_dim))
        weight = rng.standard_normal((spec.num_classes, spec.input_dim))
        bias = rng.standard_normal(spec.num_classes) * 0.5
        labels = (features @ weight.T + bias).argmax(axis=1)
        if np.unique(labels).size == spec.num_classes and np.unique(features, axis=0).shape[0] == spec.num_grid_points:
            break
        logger.debug("Synthetic attempt %d left a class empty, regenerating", attempt)
    else:
        raise DataGenerationError(
            f"could not populate all {spec.num_classes} classes in {MAX_GENERATION_ATTEMPTS} attempts"
        )

    k = spec.num_classes
    if k == 1:
        conditionals = np.ones((spec.num_grid_points, 1))
    else:
        conditionals = np.full((spec.num_grid_points, k), spec.label_noise / (k - 1))
        conditionals[np.arange(spec.num_grid_points), labels] = 1.0 - spec.label_noise
    probs = conditionals / spec.num_grid_points
    q_bar = JointDistribution(features=features, probs=probs / probs.sum())

    train = q_bar.sample_dataset(spec.train_n, rng)
    test = q_bar.sample_dataset(spec.test_n, rng)
    logger.info(
        "Synthetic task: %d grid points, %d classes, noise %.3g, %d train / %d test samples",
        spec.num_grid_points, k, spec.label_noise, spec.train_n, spec.test_n,
    )
    return train, test, q_bar


class SGDMomentum:
    """
    Mini-batch SGD with heavy-ball momentum and coupled L2 weight decay:

        v ← μ·v + lr·(g + λ·θ)
        θ ← θ − v
    """

    def __init__(self, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Optional[np.ndarray] = None

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        update = lr * (grad + self.weight_decay * theta)
        if self.velocity is None:
            self.velocity = update
        else:
            self.velocity = self.momentum * self.velocity + update
        return theta - self.velocity


@dataclass
class EpochRecord:
    """Diagnostics measured on the full training set at the end of an epoch."""

    epoch: int
    train_loss: float
    test_accuracy: float
    mean_f: float
    mean_g: float
    lambda_max_max: float
    mean_residual_sq: float
    fit_normalized: float
    bound: float

    def row(self) -> Tuple:
        return tuple(getattr(self, column) for column in RECORD_COLUMNS)


@dataclass
class TrainingRun:
    """Records for epochs 1..E, the untrained state (epoch 0) and the final θ."""

    records: List[EpochRecord] = field(default_factory=list)
    theta: Optional[np.ndarray] = None
    initial: Optional[EpochRecord] = None


def accuracy(spec: ModelSpec, theta: np.ndarray, dataset: Dataset) -> float:
    """Σ_x q_X(x)·q_{Y|x}(argmax p_{Y|x}), i.e. accuracy over the test samples."""
    predictions = predictive_batch(spec, theta, dataset.features).argmax(axis=1)
    hits = dataset.conditionals[np.arange(dataset.size), predictions]
    return float(dataset.weights @ hits)


def _evaluate(
    spec: ModelSpec,
    theta: np.ndarray,
    epoch: int,
    train: Dataset,
    test: Dataset,
    jobs: int,
) -> EpochRecord:
    train_loss, _ = loss_and_grad(spec, theta, train.features, train.conditionals, train.weights)
    decompositions = decompose_dataset(spec, theta, train, per_param=False, jobs=jobs)
    report = fit_report(spec, theta, train, LossSpec(), decompositions=decompositions, with_g_min=False)
    return EpochRecord(
        epoch=epoch,
        train_loss=train_loss,
        test_accuracy=accuracy(spec, theta, test),
        mean_f=report.mean_f,
        mean_g=report.mean_g,
        lambda_max_max=report.lambda_max_max,
        mean_residual_sq=report.mean_residual_sq,
        fit_normalized=report.fit_normalized,
        bound=report.bound,
    )


def train(
    model_spec: ModelSpec,
    config: TrainConfig,
    train: Dataset,
    test: Dataset,
    init_seed: Optional[int] = None,
    theta: Optional[np.ndarray] = None,
    jobs: int = 1,
) -> TrainingRun:
    """
    Minimize the softmax cross-entropy by mini-batch SGD.

    Batches are drawn from the expanded training samples, reshuffled every
    epoch from the config seed. Diagnostics use the full grouped training
    set. A non-finite loss raises TrainingDivergedError carrying the run up
    to the last finite epoch.
    """
    check_compatible(model_spec, train)
    check_compatible(model_spec, test)
    if theta is None:
        theta = init_params(model_spec, config.seed if init_seed is None else init_seed)
    theta = validate_params(model_spec, theta).copy()
    X, y = train.expand()
    targets = np.eye(model_spec.num_classes)[y]
    optimizer = SGDMomentum(config.momentum, config.weight_decay)

    run = TrainingRun(theta=theta.copy())
    run.initial = _evaluate(model_spec, theta, 0, train, test, jobs)
    logger.info("Training %d epochs on %d samples (m=%d)", config.epochs, X.shape[0], model_spec.num_params)

    for epoch in range(1, config.epochs + 1):
        lr = config.rate_at(epoch)
        order = make_rng(config.seed, _SHUFFLE_STREAM, epoch).permutation(X.shape[0])
        try:
            for start in range(0, X.shape[0], config.batch_size):
                batch = order[start : start + config.batch_size]
                _, grad = loss_and_grad(model_spec, theta, X[batch], targets[batch])
                theta = optimizer.step(theta, grad, lr)
                if not np.all(np.isfinite(theta)):
                    raise NumericError(f"parameters became non-finite at sample offset {start}")
            record = _evaluate(model_spec, theta, epoch, train, test, jobs)
        except NumericError as exc:
            raise TrainingDivergedError(f"training diverged in epoch {epoch}: {exc}", run=run) from exc
        if not math.isfinite(record.train_loss):
            raise TrainingDivergedError(f"training loss is {record.train_loss} in epoch {epoch}", run=run)

        run.records.append(record)
        run.theta = theta.copy()
        logger.debug(
            "epoch %d: loss=%.6g acc=%.4f F=%.6g G=%.6g λmax=%.6g",
            epoch, record.train_loss, record.test_accuracy, record.mean_f, record.mean_g, record.lambda_max_max,
        )
    return run


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation; undefined for constant inputs."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InvalidInputError("pearson needs two sequences of equal length")
    if xs.size < 3:
        raise InvalidInputError("pearson needs at least 3 points")
    if np.ptp(xs) == 0.0 or np.ptp(ys) == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant sequence")
    r, _ = pearsonr(xs, ys)
    return float(np.clip(r, -1.0, 1.0))


def detect_stabilization(losses: Sequence[float], window: int, tolerance: float) -> Optional[int]:
    """
    First epoch (1-based) at which the last ``window`` training losses span
    less than ``tolerance``; None when that never happens.
    """
    losses = list(losses)
    for end in range(window, len(losses) + 1):
        span = losses[end - window : end]
        if max(span) - min(span) < tolerance:
            return end
    return None


@dataclass
class ExperimentResult:
    run: TrainingRun
    report: CorrelationReport
    q_bar: JointDistribution
    train: Dataset
    test: Dataset


def _safe_pearson(xs: Sequence[float], ys: Sequence[float], label: str, warnings: List[str]) -> Optional[float]:
    try:
        return pearson(xs, ys)
    except (UndefinedCorrelationError, InvalidInputError) as exc:
        message = f"{label}: {exc}"
        logger.warning("Correlation %s", message)
        warnings.append(message)
        return None


def record_columns(records: Sequence[EpochRecord]) -> Dict[str, List[float]]:
    """The records CSV columns as lists, keyed by column name."""
    return {column: [getattr(r, column) for r in records] for column in RECORD_COLUMNS}


def correlation_report(
    columns: Mapping[str, Sequence[float]],
    seed: int,
    window: int,
    tolerance: float,
    display_constant: float = DEFAULT_DISPLAY_CONSTANT,
) -> CorrelationReport:
    """
    Correlate test accuracy with E_X[F] and E_X[G] after training stabilizes.

    ``columns`` holds at least train_loss, test_accuracy, mean_f and mean_g,
    one entry per epoch.
    """
    warnings: List[str] = []
    losses = list(columns["train_loss"])
    stabilized_at = detect_stabilization(losses, window, tolerance)
    if stabilized_at is None:
        start = max(len(losses) - window, 0)
        message = f"training loss never stabilized; using the final {len(losses) - start} epochs"
        logger.warning(message)
        warnings.append(message)
    else:
        start = stabilized_at - 1
        logger.info("Training loss stabilized at epoch %d", stabilized_at)

    acc = list(columns["test_accuracy"])[start:]
    mean_f = list(columns["mean_f"])[start:]
    mean_g = list(columns["mean_g"])[start:]
    scaled = [a / display_constant for a in acc]
    covariance = np.cov(np.vstack([scaled, mean_f, mean_g])).tolist() if len(acc) >= 2 else None

    return CorrelationReport(
        seed=seed,
        stabilized_at=stabilized_at,
        stable=stabilized_at is not None,
        window=len(acc),
        r_accuracy_f=_safe_pearson(acc, mean_f, "accuracy vs mean_f", warnings),
        r_accuracy_g=_safe_pearson(acc, mean_g, "accuracy vs mean_g", warnings),
        covariance=covariance,
        display_constant=display_constant,
        scaled_accuracy=scaled,
        warnings=warnings,
    )


def run_correlation_experiment(
    model_spec: ModelSpec,
    config: TrainConfig,
    data_spec: SyntheticDataSpec,
    seed: int,
    display_constant: float = DEFAULT_DISPLAY_CONSTANT,
    jobs: int = 1,
) -> ExperimentResult:
    """Generate data, train and correlate; every random stream derives from ``seed``."""
    seed = validate_seed(seed)
    if display_constant <= 0.0:
        raise InvalidInputError("display constant must be positive")
    train_set, test_set, q_bar = make_synthetic(data_spec, seed)
    config = config.model_copy(update={"seed": seed})
    run = train(model_spec, config, train_set, test_set, init_seed=seed, jobs=jobs)
    report = correlation_report(
        record_columns(run.records), seed, config.stabilization_window, config.stabilization_tolerance, display_constant
    )
    return ExperimentResult(run=run, report=report, q_bar=q_bar, train=train_set, test=test_set)


def architecture_label(spec: ModelSpec) -> str:
    """Short name such as ``mlp-16-16-tanh``; a network without hidden layers is ``linear``."""
    if not spec.hidden_dims:
        return "linear"
    return "-".join(["mlp", *(str(w) for w in spec.hidden_dims), spec.activation.value])


def architecture_names(specs: Sequence[ModelSpec]) -> List[str]:
    """Labels for a list of architectures, suffixed with their position when two coincide."""
    names = [architecture_label(spec) for spec in specs]
    if len(set(names)) != len(names):
        names = [f"{name}.{i}" for i, name in enumerate(names)]
    return names


def _tail(
values: Sequence[float], length: int) -> List[float]:
    values = list(values)
    return values[len(values) - length :]


def compare_architectures(results: Sequence[ExperimentResult], specs: Sequence[ModelSpec]) -> ArchitectureComparison:
    """
    Put the accuracy and E_X[G] traces of several architectures, trained on
    the same task and seed, side by side.

    Each run contributes its post-stabilization tail; tails are cut to the
    shortest one so every trace covers the same final epochs. Correlations
    are expected within an architecture and not across architectures.
    """
    if len(results) != len(specs):
        raise InvalidInputError(f"{len(results)} results for {len(specs)} architectures")
    if len(results) < 2:
        raise InvalidInputError("comparing architectures needs at least two of them")
    seeds = {result.report.seed for result in results}
    constants = {result.report.display_constant for result in results}
    if len(seeds) != 1 or len(constants) != 1:
        raise InvalidInputError("architectures must share one seed and one display constant")
    seed, display_constant = seeds.pop(), constants.pop()

    names = architecture_names(specs)

    warnings: List[str] = []
    window = min(result.report.window for result in results)
    accuracies, mean_gs = [], []
    for result in results:
        columns = record_columns(result.run.records)
        accuracies.append(_tail(columns["test_accuracy"], window))
        mean_gs.append(_tail(columns["mean_g"], window))

    labels, traces = [], []
    for name, acc, mean_g in zip(names, accuracies, mean_gs):
        labels += [f"{name}:accuracy_scaled", f"{name}:mean_g"]
        traces += [[a / display_constant for a in acc], mean_g]
    if window >= 2:
        covariance = np.cov(np.vstack(traces)).tolist()
    else:
        covariance = None
        warnings.append(f"common tail has {window} epoch(s); covariance omitted")

    cross = [
        [
            _safe_pearson(acc, mean_g, f"accuracy of {a} vs mean_g of {b}", warnings)
            for b, mean_g in zip(names, mean_gs)
        ]
        for a, acc in zip(names, accuracies)
    ]
    rows = [
        ArchitectureRow(
            architecture=name,
            num_params=spec.num_params,
            stabilized_at=result.report.stabilized_at,
            window=result.report.window,
            r_accuracy_f=result.report.r_accuracy_f,
            r_accuracy_g=result.report.r_accuracy_g,
        )
        for name, spec, result in zip(names, specs, results)
    ]
    logger.info("Compared %d architectures over a common tail of %d epochs", len(names), window)
    return ArchitectureComparison(
        seed=seed,
        window=window,
        display_constant=display_constant,
        labels=labels,
        covariance=covariance,
        cross_accuracy_g=cross,
        rows=rows,
        warnings=warnings,
    )
