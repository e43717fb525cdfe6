"""
Finite-alphabet probability primitives.

Every distribution in the package (empirical q, true q̄, model p_{Y|x},
empirical conditionals q_{Y|x}) is a dense probability vector wrapped in
:class:`Pmf`. Randomness enters only through explicit seeds; generators are
Philox (counter-based) streams keyed by a ``SeedSequence`` so any task can
derive an independent stream from ``(seed, task index)``.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.special import entr, logsumexp, rel_entr

from .errors import DimensionError, InvalidInputError

PROB_TOL = 1e-12
MAX_SEED = 2**64

ArrayLike = Union[np.ndarray, Sequence[float]]


@dataclass(frozen=True)
class Pmf:
    """Probability vector over a finite alphabet.

    Entries are non-negative and sum to one within ``PROB_TOL``. The stored
    array is read-only so a Pmf can be shared between threads.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise InvalidInputError(f"Pmf must be a non-empty vector, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise InvalidInputError("Pmf entries must be finite")
        if np.any(probs < 0.0):
            raise InvalidInputError(f"Pmf has negative entry {probs.min()!r}")
        total = probs.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise InvalidInputError(f"Pmf entries sum to {total!r}, expected 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def alphabet_size(self) -> int:
        return int(self.probs.size)

    @classmethod
    def from_counts(cls, counts: ArrayLike) -> "Pmf":
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise InvalidInputError("cannot normalize an all-zero count vector")
        return cls(counts / total)

    @classmethod
    def uniform(cls, size: int) -> "Pmf":
        if size < 1:
            raise InvalidInputError("alphabet size must be positive")
        return cls(np.full(size, 1.0 / size))

    def __len__(self) -> int:
        return self.alphabet_size


PmfLike = Union[Pmf, ArrayLike]


def as_pmf(value: PmfLike) -> Pmf:
    return value if isinstance(value, Pmf) else Pmf(value)


def _same_alphabet(q: Pmf, p: Pmf) -> None:
    if q.alphabet_size != p.alphabet_size:
        raise DimensionError(
            f"alphabet size mismatch: {q.alphabet_size} vs {p.alphabet_size}"
        )


def validate_logits(values: ArrayLike) -> np.ndarray:
    """Return logits as a float vector, rejecting NaN and infinite entries."""
    logits = np.asarray(values, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise InvalidInputError(f"logits must be a non-empty vector, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits must be finite (no NaN or infinity)")
    return logits


def entropy(p: PmfLike) -> float:
    """Shannon entropy in nats with 0·ln 0 = 0."""
    p = as_pmf(p)
    return float(entr(p.probs).sum())


def kl_divergence(q: PmfLike, p: PmfLike) -> float:
    """D_KL(q‖p) in nats; +inf when q puts mass where p has none."""
    q, p = as_pmf(q), as_pmf(p)
    _same_alphabet(q, p)
    return float(rel_entr(q.probs, p.probs).sum())


def l1_distance(q: PmfLike, p: PmfLike) -> float:
    q, p = as_pmf(q), as_pmf(p)
    _same_alphabet(q, p)
    return float(np.abs(q.probs - p.probs).sum())


def softmax(logits: ArrayLike) -> Tuple[Pmf, float]:
    """
    Softmax of a logit vector and its log-partition ln Z.

    ``logsumexp`` shifts by the maximum logit, so logits up to ±700 neither
    overflow nor underflow to an all-zero vector.
    """
    f = validate_logits(logits)
    log_z = float(logsumexp(f))
    probs = np.exp(f - log_z)
    # renormalize the last ulp so the Pmf tolerance holds for large alphabets
    probs /= probs.sum()
    return Pmf(probs), log_z


def pinsker_gap(q: PmfLike, p: PmfLike, f: ArrayLike, bound: float) -> float:
    """
    D_KL(q‖p) − (2/L²)(E_q f − E_p f)² for a function f with values in [0, L].

    Non-negative for every pair of distributions; the return value is the
    slack of that inequality.
    """
    q, p = as_pmf(q), as_pmf(p)
    _same_alphabet(q, p)
    if not bound > 0:
        raise InvalidInputError(f"L must be positive, got {bound!r}")
    f = np.asarray(f, dtype=np.float64)
    if f.shape != q.probs.shape:
        raise DimensionError(f"f has shape {f.shape}, expected {q.probs.shape}")
    if np.any(f < 0.0) or np.any(f > bound):
        raise InvalidInputError(f"f must lie in [0, {bound}]")
    divergence = kl_divergence(q, p)
    mean_gap = float(q.probs @ f - p.probs @ f)
    return divergence - 2.0 / bound**2 * mean_gap**2


def validate_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise InvalidInputError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < MAX_SEED:
        raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox stream for ``(seed, *keys)``; distinct keys give independent streams."""
    sequence = np.random.SeedSequence([validate_seed(seed), *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed: int, *keys: int) -> int:
    """A u64 seed for ``(seed, *keys)``, for APIs that take a seed instead of a generator."""
    sequence = np.random.SeedSequence([validate_seed(seed), *[int(k) for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def sample_counts(q_bar: PmfLike, n: int, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """
    Multinomial(n, q̄) count vectors drawn as n categorical draws each.

    Draws use the inverse CDF so the mapping from uniforms to symbols is the
    same on every platform. Only symbols with positive probability take part
    in the CDF, so a zero-probability symbol is never drawn. Returns an
    integer array of shape (size, |Z|).
    """
    q_bar = as_pmf(q_bar)
    if n < 1:
        raise InvalidInputError(f"sample size must be positive, got {n}")
    support = np.flatnonzero(q_bar.probs > 0.0)
    cdf = np.cumsum(q_bar.probs[support])
    cdf[-1] = 1.0
    uniforms = rng.random((size, n))
    symbols = support[np.searchsorted(cdf, uniforms, side="right")]
    k = q_bar.alphabet_size
    offsets = np.arange(size)[:, None] * k
    counts = np.bincount((symbols + offsets).ravel(), minlength=size * k)
    return counts.reshape(size, k)


def sample_empirical(q_bar: PmfLike, n: int, seed: int) -> Pmf:
    """Empirical PMF of n i.i.d. draws from q̄, i.e. Multinomial(n, q̄)/n."""
    if n < 1:
        raise InvalidInputError(f"sample size must be positive, got {n}")
    counts = sample_counts(q_bar, n, make_rng(seed))[0]
    return Pmf(counts / n)


def dirichlet_draws(alpha: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Rows distributed Dirichlet(α), built by normalizing Gamma(α_i, 1) draws."""
    gammas = rng.standard_gamma(alpha, size=(size, alpha.size))
    return gammas / gammas.sum(axis=1, keepdims=True)


def sample_dirichlet(alpha: ArrayLike, seed: int) -> Pmf:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or alpha.size == 0:
        raise InvalidInputError("alpha must be a non-empty vector")
    if not np.all(alpha > 0.0) or not np.all(np.isfinite(alpha)):
        raise InvalidInputError("Dirichlet concentrations must be positive and finite")
    draw = dirichlet_draws(alpha, 1, make_rng(seed))[0]
    return Pmf(draw / draw.sum())


def conditional_entropy(conditionals: np.ndarray, weights: np.ndarray) -> float:
    """H(Y|X) = Σ_x w(x) H(Y|x) for stacked conditional rows."""
    return float(weights @ entr(conditionals).sum(axis=1))


def mutual_information(conditionals: np.ndarray, weights: np.ndarray) -> float:
    """I(X;Y) = H(Y) − H(Y|X) for the joint w(x)·c(y|x)."""
    marginal = weights @ conditionals
    return float(entr(marginal).sum()) - conditional_entropy(conditionals, weights)
