"""
A small multilayer perceptron with exact per-input Jacobians.

Parameters live in one flat vector θ. Layer by layer it stores the weight
matrix W (out × in, row-major) followed by the bias b. Hidden layers apply
the configured activation; the output layer is linear and produces logits.

Reverse mode is vectorized over inputs and over logits: seeding the output
adjoint with the identity gives every row of the Jacobian in one sweep.
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import FORMAT_VERSION
from .errors import DimensionError, InvalidInputError, NumericError
from .prob_core import Pmf, PmfLike, as_pmf, make_rng, softmax
from .spectral import lambda_max

MAX_PARAMS = 100_000


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"


class ModelSpec(BaseModel):
    """Architecture of the classifier: input_dim → hidden_dims → num_classes."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    input_dim: int = Field(gt=0)
    hidden_dims: List[int] = []
    num_classes: int = Field(gt=0)
    activation: Activation = Activation.TANH

    @field_validator("hidden_dims")
    @classmethod
    def _positive_widths(cls, widths: List[int]) -> List[int]:
        if any(w <= 0 for w in widths):
            raise ValueError("hidden layer widths must be positive")
        return widths

    @model_validator(mode="after")
    def _parameter_cap(self) -> "ModelSpec":
        if self.num_params > MAX_PARAMS:
            raise ValueError(f"model has {self.num_params} parameters, limit is {MAX_PARAMS}")
        return self

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def num_params(self) -> int:
        return sum(out * (inp + 1) for out, inp in self.layer_shapes)


class Checkpoint(BaseModel):
    """Serialized parameters; Python float repr round-trips bit-exactly."""
    model_config = ConfigDict(extra="forbid")

    format_version: str = FORMAT_VERSION
    spec: ModelSpec
    theta: List[float]
    seed: Optional[int] = None

    def params(self) -> np.ndarray:
        return validate_params(self.spec, self.theta)


def validate_params(spec: ModelSpec, theta: Sequence[float]) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.size != spec.num_params:
        raise DimensionError(f"θ has shape {theta.shape}, model expects {spec.num_params} parameters")
    if not np.all(np.isfinite(theta)):
        raise InvalidInputError("θ must be finite")
    return theta


def unpack(spec: ModelSpec, theta: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Views (W, b) per layer into the flat parameter vector."""
    layers = []
    offset = 0
    for out, inp in spec.layer_shapes:
        weight = theta[offset : offset + out * inp].reshape(out, inp)
        offset += out * inp
        bias = theta[offset : offset + out]
        offset += out
        layers.append((weight, bias))
    return layers


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Uniform on [−1/√fan_in, 1/√fan_in] for every weight and bias."""
    rng = make_rng(seed)
    chunks = []
    for out, inp in spec.layer_shapes:
        scale = 1.0 / np.sqrt(inp)
        chunks.append(rng.uniform(-scale, scale, size=out * inp))
        chunks.append(rng.uniform(-scale, scale, size=out))
    return np.concatenate(chunks)


def _activate(activation: Activation, z: np.ndarray) -> np.ndarray:
    if activation is Activation.TANH:
        return np.tanh(z)
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _activation_slope(activation: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if activation is Activation.TANH:
        return 1.0 - a * a
    if activation is Activation.RELU:
        # subgradient 0 at the kink
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


@dataclass
class _Trace:
    """Forward activations kept for the backward sweep."""
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    logits: np.ndarray


def _as_batch(spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise DimensionError(f"inputs have shape {X.shape}, model expects input_dim={spec.input_dim}")
    return X


def _forward_trace(spec: ModelSpec, theta: np.ndarray, X: np.ndarray) -> _Trace:
    layers = unpack(spec, theta)
    a = X
    inputs, pre = [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for index, (weight, bias) in enumerate(layers):
            inputs.append(a)
            z = a @ weight.T + bias
            pre.append(z)
            a = z if index == len(layers) - 1 else _activate(spec.activation, z)
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite logits in forward pass")
    return _Trace(inputs=inputs, pre_activations=pre, logits=a)


def _backward(spec: ModelSpec, theta: np.ndarray, trace: _Trace, delta: np.ndarray, reduce: bool) -> np.ndarray:
    """
    Reverse sweep from output adjoints ``delta`` of shape (N, R, K).

    Returns per-input gradients (N, R, m), or their sum over inputs (R, m)
    when ``reduce`` is set.
    """
    layers = unpack(spec, theta)
    n, r = delta.shape[:2]
    blocks = []
    for index in range(len(layers) - 1, -1, -1):
        weight, _ = layers[index]
        a_in = trace.inputs[index]
        if reduce:
            grad_w = np.einsum("nro,ni->roi", delta, a_in).reshape(r, -1)
            grad_b = delta.sum(axis=0)
        else:
            grad_w = np.einsum("nro,ni->nroi", delta, a_in).reshape(n, r, -1)
            grad_b = delta
        blocks.append((grad_w, grad_b))
        if index > 0:
            z = trace.pre_activations[index - 1]
            slope = _activation_slope(spec.activation, z, a_in)
            delta = (delta @ weight) * slope[:, None, :]

    ordered = []
    for grad_w, grad_b in reversed(blocks):
        ordered.extend([grad_w, grad_b])
    return np.concatenate(ordered, axis=-1)


def forward(spec: ModelSpec, theta: Sequence[float], x: Sequence[float]) -> np.ndarray:
    """Logits f_θ(x) for one input (or a batch of rows)."""
    theta = validate_params(spec, theta)
    x = np.asarray(x, dtype=np.float64)
    logits = _forward_trace(spec, theta, _as_batch(spec, x)).logits
    return logits[0] if x.ndim == 1 else logits


def predictive(spec: ModelSpec, theta: Sequence[float], x: Sequence[float]) -> Pmf:
    pmf, _ = softmax(forward(spec, theta, np.asarray(x, dtype=np.float64).reshape(-1)))
    return pmf


def predictive_batch(spec: ModelSpec, theta: Sequence[float], X: np.ndarray) -> np.ndarray:
    """Rows p_{Y|x} for every input row of X."""
    logits = forward(spec, theta, _as_batch(spec, X))
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    return probs / probs.sum(axis=1, keepdims=True)


def jacobians(spec: ModelSpec, theta: Sequence[float], X: np.ndarray) -> np.ndarray:
    """Stacked Jacobians ∂f_i/∂θ_j of shape (N, K, m)."""
    theta = validate_params(spec, theta)
    X = _as_batch(spec, X)
    trace = _forward_trace(spec, theta, X)
    seed = np.broadcast_to(np.eye(spec.num_classes), (X.shape[0], spec.num_classes, spec.num_classes))
    return _backward(spec, theta, trace, np.array(seed), reduce=False)


def jacobian(spec: ModelSpec, theta: Sequence[float], x: Sequence[float]) -> np.ndarray:
    """Exact reverse-mode Jacobian of the logits at one input, shape (K, m)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("jacobian takes a single input vector")
    return jacobians(spec, theta, x)[0]


def kl_grad(spec: ModelSpec, theta: Sequence[float], x: Sequence[float], q_yx: PmfLike) -> np.ndarray:
    """
    Gradient of D_KL(q_{Y|x}‖p_{Y|x}) with respect to θ, namely Jᵀ(p − q).

    Flipping the sign gives the direction that reduces the divergence; every
    F/G quantity built on it is squared and does not depend on the sign.
    """
    q_yx = as_pmf(q_yx)
    if q_yx.alphabet_size != spec.num_classes:
        raise DimensionError(f"q has {q_yx.alphabet_size} labels, model has {spec.num_classes}")
    p = predictive(spec, theta, x)
    return jacobian(spec, theta, x).T @ (p.probs - q_yx.probs)


@dataclass(frozen=True)
class EntkMatrix:
    """Equal-input NTK stored as the K×K Gram J·Jᵀ."""

    gram: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.gram))

    @property
    def lambda_max(self) -> float:
        return max(lambda_max(self.gram), 0.0)


def entk_from_jacobian(jac: np.ndarray) -> EntkMatrix:
    gram = jac @ jac.T
    return EntkMatrix(gram=0.5 * (gram + gram.T))


def entk(spec: ModelSpec, theta: Sequence[float], x: Sequence[float]) -> EntkMatrix:
    return entk_from_jacobian(jacobian(spec, theta, x))


def entk_lambda_max(spec: ModelSpec, theta: Sequence[float], x: Sequence[float]) -> float:
    return entk(spec, theta, x).lambda_max


def loss_and_grad(
    spec: ModelSpec,
    theta: Sequence[float],
    X: np.ndarray,
    targets: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """
    Weighted softmax cross-entropy Σ_n w_n Σ_k t_nk·(−ln p_nk) and its gradient.

    ``targets`` holds one label distribution per row (one-hot rows for
    sampled labels). Weights default to 1/N.
    """
    theta = validate_params(spec, theta)
    X = _as_batch(spec, X)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (X.shape[0], spec.num_classes):
        raise DimensionError(f"targets have shape {targets.shape}, expected {(X.shape[0], spec.num_classes)}")
    if weights is None:
        weights = np.full(X.shape[0], 1.0 / X.shape[0])

    trace = _forward_trace(spec, theta, X)
    logits = trace.logits
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = float(weights @ -(targets * log_p).sum(axis=1))

    # d loss / d logits = w_n (p_n·Σ_k t_nk − t_n)
    probs = np.exp(log_p)
    delta = weights[:, None] * (probs * targets.sum(axis=1, keepdims=True) - targets)
    grad = _backward(spec, theta, trace, delta[:, None, :], reduce=True)[0]
    return loss, grad
