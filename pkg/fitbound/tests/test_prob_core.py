import math

import numpy as np
import pytest

from fitbound.errors import DimensionError, InvalidInputError
from fitbound.prob_core import (
    Pmf,
    conditional_entropy,
    derive_seed,
    dirichlet_draws,
    entropy,
    kl_divergence,
    l1_distance,
    make_rng,
    mutual_information,
    pinsker_gap,
    sample_counts,
    sample_dirichlet,
    sample_empirical,
    softmax,
    validate_seed,
)


class FixedUniforms:
    """Generator stand-in whose uniforms all equal one value."""

    def __init__(self, value):
        self.value = value

    def random(self, shape):
        return np.full(shape, self.value)


class TestPmf:
    def test_valid_pmf_is_read_only(self):
        pmf = Pmf([0.2, 0.3, 0.5])
        assert pmf.alphabet_size == 3
        with pytest.raises(ValueError):
            pmf.probs[0] = 1.0

    @pytest.mark.parametrize("probs", [[0.5, 0.6], [-0.1, 1.1], [], [[0.5, 0.5]], [math.nan, 1.0]])
    def test_invalid_pmf_rejected(self, probs):
        with pytest.raises(InvalidInputError):
            Pmf(probs)

    def test_from_counts(self):
        np.testing.assert_allclose(Pmf.from_counts([3, 1]).probs, [0.75, 0.25])

    def test_from_zero_counts_rejected(self):
        with pytest.raises(InvalidInputError):
            Pmf.from_counts([0, 0])


class TestEntropy:
    def test_one_hot(self):
        assert entropy([1.0, 0.0, 0.0, 0.0]) == 0.0

    def test_uniform(self):
        assert entropy(Pmf.uniform(4)) == pytest.approx(math.log(4), abs=1e-12)

    def test_skewed(self):
        assert entropy([0.75, 0.25]) == pytest.approx(0.562335, abs=1e-6)

    def test_invalid_input(self):
        with pytest.raises(InvalidInputError):
            entropy([0.7, 0.7])


class TestKlDivergence:
    def test_identity(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_one_hot_against_uniform(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    def test_skewed(self):
        assert kl_divergence([0.75, 0.25], [0.5, 0.5]) == pytest.approx(0.130812, abs=1e-6)

    def test_missing_support_is_infinite(self):
        value = kl_divergence([0.5, 0.5], [1.0, 0.0])
        assert value == math.inf

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            kl_divergence([0.5, 0.5], [1 / 3, 1 / 3, 1 / 3])

    def test_pinsker_sweep(self):
        """KL dominates half the squared L1 distance on random pairs."""
        rng = np.random.default_rng(42)
        for _ in range(10_000):
            k = int(rng.integers(2, 6))
            q = rng.dirichlet(np.ones(k))
            p = rng.dirichlet(np.ones(k))
            q, p = q / q.sum(), p / p.sum()
            assert kl_divergence(q, p) >= l1_distance(q, p) ** 2 / 2 - 1e-12

    def test_non_negative_and_zero_only_on_equality(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            q = rng.dirichlet(np.ones(4))
            q /= q.sum()
            assert kl_divergence(q, q) == pytest.approx(0.0, abs=1e-12)
            p = rng.dirichlet(np.ones(4))
            p /= p.sum()
            assert kl_divergence(q, p) > 0.0


class TestSoftmax:
    def test_zero_logits(self):
        pmf, log_z = softmax([0.0, 0.0, 0.0])
        np.testing.assert_allclose(pmf.probs, [1 / 3] * 3, atol=1e-15)
        assert log_z == pytest.approx(math.log(3), abs=1e-12)

    def test_analytic(self):
        pmf, log_z = softmax([math.log(2), 0.0])
        np.testing.assert_allclose(pmf.probs, [2 / 3, 1 / 3], atol=1e-15)
        assert log_z == pytest.approx(math.log(3), abs=1e-12)

    def test_shift_invariance(self):
        f = np.array([0.3, -1.2, 2.0])
        base, _ = softmax(f)
        shifted, _ = softmax(f + 123.4)
        np.testing.assert_allclose(base.probs, shifted.probs, atol=1e-12)

    def test_large_magnitudes(self):
        pmf, log_z = softmax([700.0, -700.0, 699.0])
        assert np.all(np.isfinite(pmf.probs))
        assert log_z == pytest.approx(700.0 + math.log1p(math.exp(-1.0)), abs=1e-9)

    def test_log_partition_matches_direct_sum(self):
        f = np.array([0.1, -0.4, 0.9, 0.0])
        _, log_z = softmax(f)
        assert log_z == pytest.approx(math.log(np.exp(f).sum()), abs=1e-12)

    def test_uniform_entropy(self):
        pmf, _ = softmax(np.zeros(5))
        assert entropy(pmf) == pytest.approx(math.log(5), abs=1e-12)

    def test_nan_logit_rejected(self):
        with pytest.raises(InvalidInputError):
            softmax([0.0, math.nan])


class TestL1Distance:
    def test_examples(self):
        assert l1_distance([0.3, 0.7], [0.3, 0.7]) == 0.0
        assert l1_distance([1.0, 0.0], [0.0, 1.0]) == 2.0
        assert l1_distance([0.75, 0.25], [0.5, 0.5]) == pytest.approx(0.5)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            l1_distance([1.0], [0.5, 0.5])


class TestPinskerGap:
    def test_identical_distributions(self):
        assert pinsker_gap([0.2, 0.8], [0.2, 0.8], [1.0, 0.0], 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_hand_example(self):
        gap = pinsker_gap([1.0, 0.0], [0.5, 0.5], [3.0, 0.0], 3.0)
        assert gap == pytest.approx(math.log(2) - 0.5, abs=1e-12)

    def test_random_sweep_non_negative(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            k = int(rng.integers(2, 8))
            bound = float(rng.uniform(0.1, 10.0))
            q = rng.dirichlet(np.ones(k))
            p = rng.dirichlet(np.ones(k))
            f = rng.uniform(0.0, bound, size=k)
            assert pinsker_gap(q / q.sum(), p / p.sum(), f, bound) >= -1e-12

    def test_out_of_range_f(self):
        with pytest.raises(InvalidInputError):
            pinsker_gap([0.5, 0.5], [0.5, 0.5], [2.0, 0.0], 1.0)


class TestSampling:
    def test_seed_validation(self):
        assert validate_seed(2**64 - 1) == 2**64 - 1
        for bad in (-1, 2**64, 1.5, True):
            with pytest.raises(InvalidInputError):
                validate_seed(bad)

    def test_sample_empirical_deterministic(self):
        first = sample_empirical([0.2, 0.3, 0.5], 17, seed=3)
        second = sample_empirical([0.2, 0.3, 0.5], 17, seed=3)
        np.testing.assert_array_equal(first.probs, second.probs)

    def test_sample_empirical_structure(self):
        n = 13
        pmf = sample_empirical([0.1, 0.6, 0.3], n, seed=11)
        counts = pmf.probs * n
        np.testing.assert_allclose(counts, np.round(counts), atol=1e-9)
        assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_sample_empirical_law_of_large_numbers(self):
        pmf = sample_empirical([0.5, 0.5], 1_000_000, seed=2024)
        assert l1_distance(pmf, [0.5, 0.5]) < 0.01

    def test_zero_sample_size(self):
        with pytest.raises(InvalidInputError):
            sample_empirical([0.5, 0.5], 0, seed=1)

    def test_sample_counts_shape_and_totals(self):
        counts = sample_counts([0.25, 0.25, 0.5], 40, make_rng(5), size=8)
        assert counts.shape == (8, 3)
        np.testing.assert_array_equal(counts.sum(axis=1), np.full(8, 40))

    def test_zero_probability_symbol_never_drawn(self):
        counts = sample_counts([0.5, 0.0, 0.5], 1000, make_rng(9), size=4)
        assert np.all(counts[:, 1] == 0)

    def test_trailing_zero_symbol_survives_rounded_cdf(self):
        # the positive entries sum to just under 1, so a uniform near 1 sits past their CDF
        q = Pmf([0.5, 0.5 - 1e-13, 0.0])
        counts = sample_counts(q, 5, FixedUniforms(1.0 - 5e-14))
        np.testing.assert_array_equal(counts, [[0, 5, 0]])

    def test_derived_seed_is_stable_and_keyed(self):
        assert derive_seed(3, 1, 2) == derive_seed(3, 1, 2)
        assert derive_seed(3, 1, 2) != derive_seed(3, 1, 3)
        assert derive_seed(3, 1, 2) != derive_seed(4, 1, 2)

    def test_derived_seed_from_largest_seed_is_valid(self):
        top = 2**64 - 1
        seeds = [derive_seed(top, 0, i) for i in range(5)]
        assert all(validate_seed(s) == s for s in seeds)
        assert len(set(seeds)) == 5

    def test_independent_streams(self):
        a = make_rng(1, 0).random(4)
        b = make_rng(1, 1).random(4)
        assert not np.array_equal(a, b)


class TestDirichlet:
    def test_mean_of_flat_prior(self):
        draws = dirichlet_draws(np.array([1.0, 1.0]), 100_000, make_rng(42))
        assert draws[:, 0].mean() == pytest.approx(0.5, abs=0.005)

    def test_concentrated(self):
        pmf = sample_dirichlet([1e6, 1e6], seed=8)
        np.testing.assert_allclose(pmf.probs, [0.5, 0.5], atol=0.01)

    def test_deterministic_valid_pmf(self):
        a = sample_dirichlet([0.5, 2.0, 1.0], seed=4)
        b = sample_dirichlet([0.5, 2.0, 1.0], seed=4)
        np.testing.assert_array_equal(a.probs, b.probs)
        assert isinstance(a, Pmf)

    @pytest.mark.parametrize("alpha", [[0.0, 1.0], [-1.0, 2.0]])
    def test_non_positive_alpha(self, alpha):
        with pytest.raises(InvalidInputError):
            sample_dirichlet(alpha, seed=1)


class TestInformationHelpers:
    def test_independent_joint_has_zero_information(self):
        conditionals = np.array([[0.3, 0.7], [0.3, 0.7]])
        weights = np.array([0.4, 0.6])
        assert mutual_information(conditionals, weights) == pytest.approx(0.0, abs=1e-12)
        assert conditional_entropy(conditionals, weights) == pytest.approx(entropy([0.3, 0.7]))

    def test_deterministic_labels(self):
        conditionals = np.array([[1.0, 0.0], [0.0, 1.0]])
        weights = np.array([0.5, 0.5])
        assert mutual_information(conditionals, weights) == pytest.approx(math.log(2))
