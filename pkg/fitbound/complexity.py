"""
Task complexity C(q) = ½·E_{q̄|q} D_KL(q‖q̄) and the Monte-Carlo check of the
generalization-error tail bound.

The unknown true distribution q̄ gets a Dirichlet(α) prior, so the posterior
given counts c is Dirichlet(α + c). That yields an exact sampler and a
digamma closed form that serves as an independent oracle for the sampler.

Two readings of the expectation are implemented:

* posterior reading, E over q̄ | q (``estimate_complexity`` and friends);
* sampling reading, E over q ~ Multinomial(n, q̄)/n (``verify_gen_bound``).

The Jensen lower bound and the reciprocal upper estimates are reported on the
scale of E D_KL, which is 2·C(q).
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import digamma, rel_entr

from .errors import InvalidInputError, DimensionError, NumericError
from .models import ComplexityEstimate, GenBoundReport
from .prob_core import (
    Pmf,
    PmfLike,
    as_pmf,
    dirichlet_draws,
    entropy,
    kl_divergence,
    make_rng,
    sample_counts,
    validate_seed,
)
from .workers import chunk_sizes, map_ordered

logger = logging.getLogger(__name__)

MIN_COMPLEXITY_SAMPLES = 100
MC_CHUNK = 10_000
MAX_ZERO_DRAW_FRACTION = 1e-3
MAX_GEN_ALPHABET = 1_000
LOW_TRIALS = 1_000
WILSON_Z = 3.0


@dataclass(frozen=True)
class PosteriorSpec:
    """Observed counts over 𝒵 together with the Dirichlet prior on q̄."""

    prior_alpha: np.ndarray
    counts: np.ndarray
    n: int

    def __post_init__(self):
        alpha = np.array(self.prior_alpha, dtype=np.float64)
        counts = np.array(self.counts)
        if alpha.ndim != 1 or counts.ndim != 1:
            raise InvalidInputError("prior_alpha and counts must be vectors")
        if alpha.shape != counts.shape:
            raise DimensionError(f"prior_alpha has {alpha.size} entries, counts has {counts.size}")
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0.0):
            raise InvalidInputError("prior_alpha must be strictly positive")
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise InvalidInputError("counts must be non-negative integers")
        counts = counts.astype(np.int64)
        if self.n < 1:
            raise InvalidInputError(f"n must be positive, got {self.n}")
        if int(counts.sum()) != self.n:
            raise InvalidInputError(f"counts sum to {int(counts.sum())}, expected n={self.n}")
        alpha.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "prior_alpha", alpha)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def from_counts(cls, counts: Sequence[int], prior_alpha: Optional[Sequence[float]] = None) -> "PosteriorSpec":
        counts = np.asarray(counts)
        alpha = np.ones(counts.size) if prior_alpha is None else np.asarray(prior_alpha, dtype=np.float64)
        if alpha.size == 1 and counts.size > 1:
            alpha = np.full(counts.size, float(alpha.reshape(-1)[0]))
        return cls(prior_alpha=alpha, counts=counts, n=int(counts.sum()))

    @property
    def empirical(self) -> Pmf:
        return Pmf(self.counts / self.n)

    @property
    def posterior_alpha(self) -> np.ndarray:
        return self.prior_alpha + self.counts


def posterior_mean(spec: PosteriorSpec) -> Pmf:
    """Dirichlet posterior mean (α_z + c_z)/(α₀ + n)."""
    a = spec.posterior_alpha
    return Pmf(a / a.sum())


def complexity_closed_form(spec: PosteriorSpec) -> float:
    """
    Exact C(q) under the Dirichlet posterior.

    Uses E[ln q̄(z)] = ψ(a_z) − ψ(a₀) for q̄ ~ Dirichlet(a), so
    C(q) = ½[−H(q) − Σ_{q(z)>0} q(z)(ψ(a_z) − ψ(a₀))].
    """
    q = spec.empirical.probs
    a = spec.posterior_alpha
    support = q > 0
    expected_log = digamma(a[support]) - digamma(a.sum())
    return 0.5 * (-entropy(q) - float(q[support] @ expected_log))


def complexity_lower_bound(spec: PosteriorSpec) -> float:
    """Jensen lower bound D_KL(q‖E q̄) on E_{q̄|q} D_KL(q‖q̄) = 2·C(q)."""
    return kl_divergence(spec.empirical, posterior_mean(spec))


def complexity_upper_estimate(spec: PosteriorSpec) -> Optional[Tuple[float, float]]:
    """
    Reciprocal upper estimates of E_{q̄|q} D_KL(q‖q̄) from −ln x ≤ 1/x − 1.

    Returns ``(reciprocal, q_max_variant)`` where

    * reciprocal = −H(q) + Σ_z q(z)·(E[1/q̄(z)] − 1)
    * q_max_variant = H(q) + q_max·Σ_z E[1/q̄(z)] − 1

    with E[1/q̄(z)] = (a₀ − 1)/(a_z − 1) for the posterior Dirichlet(a).
    Only defined when every count is positive; returns None otherwise.
    The second form is reported as stated and is not a guaranteed bound.
    """
    if np.any(spec.counts == 0):
        return None
    q = spec.empirical.probs
    a = spec.posterior_alpha
    inverse_mean = (a.sum() - 1.0) / (a - 1.0)
    h = entropy(q)
    reciprocal = -h + float(q @ (inverse_mean - 1.0))
    q_max_variant = h + float(q.max() * inverse_mean.sum()) - 1.0
    return reciprocal, q_max_variant


def _half_kl_rows(q: np.ndarray, draws: np.ndarray) -> np.ndarray:
    support = q > 0
    log_ratio = np.log(q[support]) - np.log(draws[:, support])
    return 0.5 * (log_ratio @ q[support])


def _complexity_chunk(spec: PosteriorSpec, seed: int, index: int, size: int) -> Tuple[np.ndarray, int]:
    rng = make_rng(seed, index)
    a = spec.posterior_alpha
    support = spec.counts > 0
    draws = dirichlet_draws(a, size, rng)
    zero_draws = 0
    bad = ~np.all(draws[:, support] > 0.0, axis=1)
    for _ in range(100):
        if not np.any(bad):
            break
        count = int(bad.sum())
        zero_draws += count
        draws[bad] = dirichlet_draws(a, count, rng)
        bad = ~np.all(draws[:, support] > 0.0, axis=1)
    else:
        raise NumericError("posterior draws keep underflowing to zero")
    return _half_kl_rows(spec.empirical.probs, draws), zero_draws


def estimate_complexity(spec: PosteriorSpec, num_samples: int, seed: int, jobs: int = 1) -> ComplexityEstimate:
    """
    Monte-Carlo mean of ½·D_KL(q‖q̄_k) over posterior draws q̄_k.

    Draws are generated in fixed blocks of ``MC_CHUNK`` samples, block i using
    the stream (seed, i), so the estimate does not depend on ``jobs``.
    A draw that underflows to zero on the support of q is redrawn; more than
    0.1% of such redraws is a numeric failure.
    """
    if num_samples < MIN_COMPLEXITY_SAMPLES:
        raise InvalidInputError(f"num_samples must be at least {MIN_COMPLEXITY_SAMPLES}, got {num_samples}")
    seed = validate_seed(seed)
    blocks = list(enumerate(chunk_sizes(num_samples, MC_CHUNK)))
    results = map_ordered(lambda block: _complexity_chunk(spec, seed, *block), blocks, jobs)

    values = np.concatenate([values for values, _ in results])
    zero_draws = sum(zeros for _, zeros in results)
    if zero_draws:
        logger.warning("Redrew %d numerically zero Dirichlet samples", zero_draws)
    if zero_draws > MAX_ZERO_DRAW_FRACTION * num_samples:
        raise NumericError(f"{zero_draws} of {num_samples} posterior draws underflowed to zero")
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite divergence in complexity estimate")

    std_error = float(values.std(ddof=1) / np.sqrt(num_samples))
    return ComplexityEstimate(
        mean=float(values.mean()),
        std_error=std_error,
        num_samples=num_samples,
        closed_form=complexity_closed_form(spec),
        zero_draws_resampled=zero_draws,
    )


def suggested_regularization_multiplier(complexity: float, scale: float = 1.0) -> float:
    """Heuristic regularization weight scale·√C(q); larger for harder tasks."""
    return scale * float(np.sqrt(max(complexity, 0.0)))


def balanced_counts(n: int, k: int) -> np.ndarray:
    """The most uniform composition of n into k parts."""
    counts = np.full(k, n // k, dtype=np.int64)
    counts[: n % k] += 1
    return counts


def compositions(n: int, k: int) -> List[Tuple[int, ...]]:
    """All ordered k-part compositions of n with non-negative parts."""
    result = []
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        edges = (-1,) + bars + (n + k - 1,)
        result.append(tuple(edges[i + 1] - edges[i] - 1 for i in range(k)))
    return result


def majorizes(a: Sequence[int], b: Sequence[int]) -> bool:
    """True when a majorizes b: equal totals and dominating sorted partial sums."""
    a = np.sort(np.asarray(a))[::-1]
    b = np.sort(np.asarray(b))[::-1]
    if a.shape != b.shape:
        raise DimensionError("compositions must have the same number of parts")
    if a.sum() != b.sum():
        return False
    return bool(np.all(np.cumsum(a) >= np.cumsum(b)))


@dataclass
class UniformityReport:
    n: int
    alphabet_size: int
    uniform_counts: List[int]
    uniform_value: float
    compared: List[Tuple[List[int], float]] = field(default_factory=list)
    exhaustive: bool = False

    @property
    def uniform_is_minimum(self) -> bool:
        return all(self.uniform_value <= value + 1e-12 for _, value in self.compared)


def uniformity_ordering_check(
    n: int,
    k: int,
    seed: int,
    num_random: int = 50,
    prior_alpha: float = 1.0,
) -> UniformityReport:
    """
    Compare C(q) of the most uniform count vector with less uniform ones.

    Small problems (k ≤ 3, n ≤ 20) are enumerated exhaustively; otherwise
    ``num_random`` random compositions are drawn from stream ``seed``.
    """
    if n < 1 or k < 2:
        raise InvalidInputError(f"need n ≥ 1 and k ≥ 2, got n={n}, k={k}")
    alpha = np.full(k, float(prior_alpha))
    uniform = balanced_counts(n, k)
    report = UniformityReport(
        n=n,
        alphabet_size=k,
        uniform_counts=uniform.tolist(),
        uniform_value=complexity_closed_form(PosteriorSpec(alpha, uniform, n)),
    )

    if k <= 3 and n <= 20:
        candidates = [np.array(c) for c in compositions(n, k)]
        report.exhaustive = True
    else:
        rng = make_rng(seed)
        candidates = []
        for _ in range(num_random):
            weights = dirichlet_draws(np.ones(k), 1, rng)[0]
            candidates.append(sample_counts(weights / weights.sum(), n, rng)[0])

    for counts in candidates:
        value = complexity_closed_form(PosteriorSpec(alpha, counts, n))
        report.compared.append((counts.tolist(), value))
    return report


@dataclass
class MajorizationReport:
    pairs_checked: int
    violations: List[Tuple[Tuple[int, ...], Tuple[int, ...]]]

    @property
    def holds(self) -> bool:
        return not self.violations


def majorization_ordering_check(n: int, k: int, prior_alpha: float = 1.0) -> MajorizationReport:
    """
    Exhaustively check C(a) ≥ C(b) whenever a majorizes b (symmetric prior).

    Limited to k ≤ 3 and n ≤ 20, where every composition can be enumerated.
    """
    if k > 3 or n > 20:
        raise InvalidInputError("exhaustive majorization check is limited to k ≤ 3 and n ≤ 20")
    alpha = np.full(k, float(prior_alpha))
    comps = compositions(n, k)
    values = np.array([complexity_closed_form(PosteriorSpec(alpha, np.array(c), n)) for c in comps])
    partial = np.cumsum(-np.sort(-np.array(comps), axis=1), axis=1)

    # dominates[i, j]: composition i majorizes composition j
    dominates = np.all(partial[:, None, :] >= partial[None, :, :], axis=2)
    worse = values[:, None] < values[None, :] - 1e-12
    violating = np.argwhere(dominates & worse)
    return MajorizationReport(
        pairs_checked=int(dominates.sum()),
        violations=[(comps[i], comps[j]) for i, j in violating],
    )


def wilson_interval(p_hat: float, trials: int, z: float = WILSON_Z) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise InvalidInputError("trials must be positive")
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p_hat + z2 / (2 * trials)) / denom
    half = z / denom * np.sqrt(p_hat * (1 - p_hat) / trials + z2 / (4 * trials * trials))
    return max(0.0, center - half), min(1.0, center + half)


def wilson_half_width(p_hat: float, trials: int, z: float = WILSON_Z) -> float:
    low, high = wilson_interval(p_hat, trials, z)
    return 0.5 * (high - low)


def _gen_chunk(q_bar: np.ndarray, n: int, loss: np.ndarray, seed: int, index: int, size: int):
    counts = sample_counts(q_bar, n, make_rng(seed, index), size=size)
    q = counts / n
    gen = np.abs(q @ loss - q_bar @ loss)
    kl = rel_entr(q, q_bar[None, :]).sum(axis=1)
    return gen, kl


def verify_gen_bound(
    q_bar: PmfLike,
    n: int,
    loss_table: Sequence[float],
    loss_sup: float,
    epsilon_grid: Sequence[float],
    trials: int,
    seed: int,
    jobs: int = 1,
    t_grid: Optional[Sequence[float]] = None,
) -> GenBoundReport:
    """
    Brute-force check of Pr(|E_q ℓ − E_q̄ ℓ| ≥ ε) ≤ L²·E[D_KL(q‖q̄)]/(2ε²).

    Each trial draws q ~ Multinomial(n, q̄)/n. The tail at ε passes when the
    lower end of its 3-sigma Wilson interval does not exceed the bound. The
    intermediate Markov step Pr(D_KL ≥ t) ≤ E[D_KL]/t is measured on
    ``t_grid`` (default: multiples 0.5, 1, 2, 4 of the mean divergence).
    """
    q_bar = as_pmf(q_bar)
    if q_bar.alphabet_size > MAX_GEN_ALPHABET:
        raise InvalidInputError(f"|Z| = {q_bar.alphabet_size} exceeds {MAX_GEN_ALPHABET}")
    if n < 1 or trials < 1:
        raise InvalidInputError("n and trials must be positive")
    if not loss_sup > 0:
        raise InvalidInputError(f"L must be positive, got {loss_sup!r}")
    loss = np.asarray(loss_table, dtype=np.float64)
    if loss.shape != q_bar.probs.shape:
        raise DimensionError(f"loss table has shape {loss.shape}, expected {q_bar.probs.shape}")
    if np.any(loss < 0.0) or np.any(loss > loss_sup):
        raise InvalidInputError(f"loss table entries must lie in [0, {loss_sup}]")
    eps = np.sort(np.asarray(epsilon_grid, dtype=np.float64))
    if eps.size == 0 or np.any(eps <= 0.0):
        raise InvalidInputError("epsilon grid must be non-empty and positive")
    seed = validate_seed(seed)

    low_trials = trials < LOW_TRIALS
    if low_trials:
        logger.warning("Only %d trials; tail estimates are unreliable", trials)

    blocks = list(enumerate(chunk_sizes(trials, MC_CHUNK)))
    results = map_ordered(lambda block: _gen_chunk(q_bar.probs, n, loss, seed, *block), blocks, jobs)
    gen = np.concatenate([g for g, _ in results])
    kl = np.concatenate([d for _, d in results])

    mean_kl = float(kl.mean())
    tail = [(float(np.mean(gen >= e))) for e in eps]
    bound = [loss_sup**2 * mean_kl / (2.0 * e**2) for e in eps]
    half_widths = [wilson_half_width(t, trials) for t in tail]
    holds = [wilson_interval(t, trials)[0] <= b + 1e-12 for t, b in zip(tail, bound)]

    if t_grid is None:
        t_values = [mean_kl * m for m in (0.5, 1.0, 2.0, 4.0)] if mean_kl > 0 else []
    else:
        t_values = [float(t) for t in t_grid if t > 0]
    markov_tail = [float(np.mean(kl >= t)) for t in t_values]
    markov_bound = [mean_kl / t for t in t_values]

    report = GenBoundReport(
        epsilon_grid=eps.tolist(),
        empirical_tail=tail,
        bound_values=bound,
        wilson_half_width=half_widths,
        holds=holds,
        loss_sup=float(loss_sup),
        trials=trials,
        n=n,
        mean_kl=mean_kl,
        expected_gen_sq_normalized=float(2.0 * np.mean(gen**2) / loss_sup**2),
        markov_t_grid=t_values,
        markov_tail=markov_tail,
        markov_bound=markov_bound,
        low_trials_warning=low_trials,
    )
    logger.info("Generalization bound over %d trials: all hold = %s", trials, report.all_hold)
    return report
