import math

import numpy as np
import pytest
from pydantic import ValidationError

from fitbound.complexity import PosteriorSpec, complexity_closed_form
from fitbound.errors import ConfigurationError, DimensionError, DomainError, InvalidInputError
from fitbound.model import ModelSpec, init_params, predictive_batch
from fitbound.risk import (
    ConditionalSource,
    Dataset,
    JointDistribution,
    LossKind,
    LossSpec,
    empirical_conditional_entropy,
    erf_risk,
    expected_risk_bound,
    gen_error,
    model_mutual_information,
    risk,
    verify_risk_coverage,
)

SCE = LossSpec()
ZERO_ONE = LossSpec(kind="zero_one")


@pytest.fixture
def line_spec():
    return ModelSpec(input_dim=1, num_classes=2)


@pytest.fixture
def line_theta():
    # logits (x, -x)
    return np.array([1.0, -1.0, 0.0, 0.0])


@pytest.fixture
def toy_joint():
    features = np.array([[-1.0], [0.5], [2.0]])
    probs = np.array([[0.20, 0.10], [0.15, 0.15], [0.05, 0.35]])
    return JointDistribution(features=features, probs=probs)


def random_dataset(rng, size, input_dim, num_classes):
    features = rng.normal(size=(size, input_dim))
    conditionals = rng.dirichlet(np.ones(num_classes), size=size)
    conditionals /= conditionals.sum(axis=1, keepdims=True)
    weights = rng.dirichlet(np.ones(size))
    weights /= math.fsum(weights)
    return Dataset(features=features, conditionals=conditionals, weights=weights)


class TestDataset:
    def test_from_samples_groups_rows(self):
        dataset = Dataset.from_samples(np.array([[0.0], [0.0], [1.0]]), np.array([0, 1, 1]), num_classes=2)
        np.testing.assert_array_equal(dataset.features, [[0.0], [1.0]])
        np.testing.assert_allclose(dataset.conditionals, [[0.5, 0.5], [0.0, 1.0]])
        np.testing.assert_allclose(dataset.weights, [2 / 3, 1 / 3])
        assert dataset.num_samples == 3
        assert dataset.joint_counts().tolist() == [1, 1, 0, 1]

    def test_expand_restores_samples(self):
        dataset = Dataset.from_samples(np.array([[1.0], [0.0], [0.0]]), np.array([1, 0, 1]), num_classes=2)
        X, y = dataset.expand()
        np.testing.assert_array_equal(X.ravel(), [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(y, [0, 1, 1])

    def test_duplicate_features_rejected(self):
        with pytest.raises(InvalidInputError):
            Dataset(features=[[0.0], [0.0]], conditionals=[[1, 0], [0, 1]], weights=[0.5, 0.5])

    def test_weights_must_sum_to_one(self):
        with pytest.raises(InvalidInputError):
            Dataset(features=[[0.0], [1.0]], conditionals=[[1, 0], [0, 1]], weights=[0.5, 0.6])

    def test_bad_labels(self):
        with pytest.raises(InvalidInputError):
            Dataset.from_samples(np.zeros((2, 1)), np.array([0, 2]), num_classes=2)

    def test_joint_pmf(self):
        dataset = Dataset(features=[[0.0], [1.0]], conditionals=[[0.5, 0.5], [0.0, 1.0]], weights=[0.4, 0.6])
        np.testing.assert_allclose(dataset.joint_pmf().probs, [0.2, 0.2, 0.0, 0.6])


class TestLossSpec:
    def test_sup(self):
        assert SCE.sup == math.inf
        assert LossSpec(kind="clipped_cross_entropy", l_max=3.0).sup == 3.0
        assert ZERO_ONE.sup == 1.0

    def test_zero_one_ties_first_argmax(self):
        np.testing.assert_array_equal(ZERO_ONE.loss_vectors([[0.0, 0.0, -1.0]]), [[0.0, 1.0, 1.0]])

    def test_clipping(self):
        losses = LossSpec(kind=LossKind.CLIPPED_CROSS_ENTROPY, l_max=1.0).loss_vectors([[50.0, 0.0]])
        assert losses[0, 1] == 1.0
        assert losses[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_invalid_l_max(self):
        with pytest.raises(ValidationError):
            LossSpec(kind="clipped_cross_entropy", l_max=0.0)


class TestRisk:
    def test_model_cross_entropy_is_conditional_entropy(self):
        rng = np.random.default_rng(42)
        spec = ModelSpec(input_dim=2, hidden_dims=[4], num_classes=3)
        for i in range(20):
            dataset = random_dataset(rng, 5, 2, 3)
            theta = init_params(spec, seed=i)
            p = predictive_batch(spec, theta, dataset.features)
            expected = float(dataset.weights @ -(p * np.log(p)).sum(axis=1))
            assert risk(spec, theta, dataset, ConditionalSource.MODEL, SCE) == pytest.approx(expected, abs=1e-10)

    def test_zero_one_hand_example(self, line_spec, line_theta):
        dataset = Dataset(
            features=[[-1.0], [0.5], [2.0]],
            conditionals=[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            weights=[0.2, 0.3, 0.5],
        )
        assert risk(line_spec, line_theta, dataset, "empirical", ZERO_ONE) == pytest.approx(0.7)

    def test_perfect_single_entry(self, line_spec):
        theta = np.array([0.0, 0.0, 700.0, -700.0])
        dataset = Dataset(features=[[0.0]], conditionals=[[1.0, 0.0]], weights=[1.0])
        assert risk(line_spec, theta, dataset, ConditionalSource.EMPIRICAL, SCE) == 0.0
        assert risk(line_spec, theta, dataset, ConditionalSource.MODEL, SCE) == 0.0

    def test_confident_wrong_prediction(self, line_spec):
        theta = np.array([0.0, 0.0, 700.0, -700.0])
        dataset = Dataset(features=[[0.0]], conditionals=[[0.0, 1.0]], weights=[1.0])
        value = risk(line_spec, theta, dataset, ConditionalSource.EMPIRICAL, SCE)
        assert value == pytest.approx(1400.0)

    def test_external_requires_joint(self, line_spec, line_theta):
        with pytest.raises(InvalidInputError):
            risk(line_spec, line_theta, None, ConditionalSource.EXTERNAL, SCE)

    @pytest.mark.parametrize(
        "features, probs",
        [
            ([[0.0], [1.0]], [[0.2, 0.1, 0.2], [0.1, 0.2, 0.2]]),
            ([[0.0, 1.0], [1.0, 0.0]], [[0.25, 0.25], [0.25, 0.25]]),
        ],
    )
    def test_external_joint_must_match_model(self, line_spec, line_theta, features, probs):
        q_bar = JointDistribution(features=np.array(features), probs=np.array(probs))
        with pytest.raises(DimensionError):
            risk(line_spec, line_theta, None, ConditionalSource.EXTERNAL, ZERO_ONE, q_bar=q_bar)

    def test_dimension_mismatch(self, line_spec, line_theta):
        dataset = Dataset(features=[[0.0, 1.0]], conditionals=[[1.0, 0.0]], weights=[1.0])
        with pytest.raises(DimensionError):
            risk(line_spec, line_theta, dataset, ConditionalSource.EMPIRICAL, SCE)


class TestErf:
    def test_identity_with_cross_entropy(self):
        rng = np.random.default_rng(1)
        spec = ModelSpec(input_dim=3, hidden_dims=[5], num_classes=4)
        for i in range(20):
            dataset = random_dataset(rng, 6, 3, 4)
            theta = init_params(spec, seed=100 + i)
            sce = risk(spec, theta, dataset, ConditionalSource.EMPIRICAL, SCE)
            assert sce - empirical_conditional_entropy(dataset) == pytest.approx(erf_risk(spec, theta, dataset), abs=1e-10)

    def test_model_matching_data(self, line_spec, line_theta):
        features = np.array([[-0.3], [0.8]])
        conditionals = predictive_batch(line_spec, line_theta, features)
        dataset = Dataset(features=features, conditionals=conditionals, weights=[0.5, 0.5])
        assert erf_risk(line_spec, line_theta, dataset) == pytest.approx(0.0, abs=1e-15)

    def test_one_hot_equals_cross_entropy(self, line_spec, line_theta):
        dataset = Dataset(features=[[-0.3], [0.8]], conditionals=[[1.0, 0.0], [0.0, 1.0]], weights=[0.5, 0.5])
        assert erf_risk(line_spec, line_theta, dataset) == pytest.approx(
            risk(line_spec, line_theta, dataset, ConditionalSource.EMPIRICAL, SCE), abs=1e-15
        )


class TestGenError:
    def test_zero_when_joint_matches(self, line_spec, line_theta, toy_joint):
        dataset = Dataset(
            features=toy_joint.features,
            conditionals=toy_joint.probs / toy_joint.marginal[:, None],
            weights=toy_joint.marginal,
        )
        assert gen_error(line_spec, line_theta, dataset, toy_joint, SCE) == pytest.approx(0.0, abs=1e-12)

    def test_constant_loss(self, line_spec, line_theta, toy_joint):
        dataset = Dataset(features=[[0.5]], conditionals=[[1.0, 0.0]], weights=[1.0])
        flat = LossSpec(kind="clipped_cross_entropy", l_max=1e-9)
        assert gen_error(line_spec, line_theta, dataset, toy_joint, flat) == pytest.approx(0.0, abs=1e-18)

    def test_hand_computation(self, line_spec, line_theta, toy_joint):
        dataset = Dataset(features=[[0.5], [2.0]], conditionals=[[0.5, 0.5], [0.0, 1.0]], weights=[0.25, 0.75])
        # zero-one losses: x=-1 → predicts 1; x=0.5 → 0; x=2 → 0
        expected = 0.20 + 0.15 + 0.35
        empirical = 0.25 * 0.5 + 0.75 * 1.0
        assert gen_error(line_spec, line_theta, dataset, toy_joint, ZERO_ONE) == pytest.approx(abs(expected - empirical))

    def test_feature_outside_support(self, line_spec, line_theta, toy_joint):
        dataset = Dataset(features=[[3.0]], conditionals=[[1.0, 0.0]], weights=[1.0])
        with pytest.raises(DomainError):
            gen_error(line_spec, line_theta, dataset, toy_joint, SCE)


class TestExpectedRiskBound:
    @pytest.fixture
    def sampled(self, toy_joint):
        counts = np.array([[5, 2], [3, 4], [1, 9]])
        return Dataset.from_joint_counts(toy_joint.features, counts)

    def test_unbounded_loss(self, line_spec, line_theta, sampled):
        with pytest.raises(ConfigurationError):
            expected_risk_bound(line_spec, line_theta, sampled, 0.1, SCE)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.2, 1.5])
    def test_delta_range(self, line_spec, line_theta, sampled, delta):
        with pytest.raises(InvalidInputError):
            expected_risk_bound(line_spec, line_theta, sampled, delta, ZERO_ONE)

    def test_total_is_sum(self, line_spec, line_theta, sampled):
        report = expected_risk_bound(line_spec, line_theta, sampled, 0.1, ZERO_ONE)
        assert report.total_bound == pytest.approx(report.model_risk + report.fit_bound_term + report.gen_epsilon)
        assert report.gen_epsilon == pytest.approx(math.sqrt(report.complexity / 0.1))
        assert report.regularization_multiplier == pytest.approx(math.sqrt(report.complexity))

    def test_functional_form(self, line_spec, line_theta, sampled):
        base = expected_risk_bound(line_spec, line_theta, sampled, 0.4, LossSpec(kind="clipped_cross_entropy", l_max=2.0))
        quarter = expected_risk_bound(line_spec, line_theta, sampled, 0.1, LossSpec(kind="clipped_cross_entropy", l_max=2.0))
        double = expected_risk_bound(line_spec, line_theta, sampled, 0.4, LossSpec(kind="clipped_cross_entropy", l_max=4.0))
        assert quarter.gen_epsilon == pytest.approx(2 * base.gen_epsilon)
        assert double.gen_epsilon == pytest.approx(2 * base.gen_epsilon)

    def test_matching_model_has_no_fit_term(self, line_spec, line_theta):
        features = np.array([[-0.3], [0.8]])
        dataset = Dataset(
            features=features,
            conditionals=predictive_batch(line_spec, line_theta, features),
            weights=[0.5, 0.5],
        )
        posterior = PosteriorSpec.from_counts([3, 2, 1, 4])
        report = expected_risk_bound(line_spec, line_theta, dataset, 0.1, ZERO_ONE, posterior=posterior)
        assert report.fit_bound_term == pytest.approx(0.0, abs=1e-12)
        assert report.total_bound == pytest.approx(report.model_risk + report.gen_epsilon)

    def test_vanishing_complexity_limit(self, line_spec, line_theta, sampled):
        posterior = PosteriorSpec.from_counts([10**6] * 6)
        report = expected_risk_bound(line_spec, line_theta, sampled, 0.999, ZERO_ONE, posterior=posterior)
        assert report.gen_epsilon < 1e-2

    def test_unobserved_input_counts_towards_alphabet(self, line_spec, line_theta, toy_joint):
        dataset = Dataset.from_joint_counts(toy_joint.features, np.array([[10, 10], [15, 15], [0, 0]]))
        assert dataset.size == 2
        observed = expected_risk_bound(line_spec, line_theta, dataset, 0.1, ZERO_ONE)
        full = expected_risk_bound(line_spec, line_theta, dataset, 0.1, ZERO_ONE, q_bar=toy_joint)
        assert (observed.alphabet_size, full.alphabet_size) == (4, 6)
        assert full.complexity == pytest.approx(complexity_closed_form(PosteriorSpec.from_counts([10, 10, 15, 15, 0, 0])))
        assert full.complexity > 2.0 * observed.complexity
        assert full.total_bound > observed.total_bound

    def test_support_counts_keep_layout(self, toy_joint, sampled):
        np.testing.assert_array_equal(toy_joint.support_counts(sampled), [5, 2, 3, 4, 1, 9])
        partial = Dataset.from_joint_counts(toy_joint.features[[2, 0]], np.array([[1, 2], [3, 0]]))
        np.testing.assert_array_equal(toy_joint.support_counts(partial), [3, 0, 0, 0, 1, 2])

    def test_support_counts_need_sample_counts(self, toy_joint):
        dataset = Dataset(features=[[0.5]], conditionals=[[1.0, 0.0]], weights=[1.0])
        with pytest.raises(InvalidInputError):
            toy_joint.support_counts(dataset)

    def test_information_terms_split_model_cross_entropy(self, line_spec, line_theta, sampled):
        report = expected_risk_bound(line_spec, line_theta, sampled, 0.1, ZERO_ONE)
        conditional = risk(line_spec, line_theta, sampled, ConditionalSource.MODEL, SCE)
        assert report.model_label_entropy - report.model_mutual_information == pytest.approx(conditional, abs=1e-12)
        assert report.model_mutual_information == pytest.approx(model_mutual_information(line_spec, line_theta, sampled))
        assert 0.0 <= report.model_mutual_information <= math.log(2)


class TestCoverage:
    def test_bound_covers_true_risk(self, line_spec, line_theta, toy_joint):
        report = verify_risk_coverage(line_spec, line_theta, toy_joint, n=50, delta=0.1, loss=ZERO_ONE, trials=500, seed=42)
        assert report.coverage >= 0.9
        assert report.triangle_violations == 0

    def test_independent_of_jobs(self, line_spec, line_theta, toy_joint):
        kwargs = dict(n=20, delta=0.1, loss=ZERO_ONE, trials=1500, seed=3)
        serial = verify_risk_coverage(line_spec, line_theta, toy_joint, jobs=1, **kwargs)
        parallel = verify_risk_coverage(line_spec, line_theta, toy_joint, jobs=2, **kwargs)
        assert serial == parallel


def test_uninformative_model_has_no_information(line_spec):
    dataset = Dataset(features=[[0.0], [1.0]], conditionals=[[1.0, 0.0], [0.0, 1.0]], weights=[0.5, 0.5])
    assert model_mutual_information(line_spec, np.zeros(4), dataset) == pytest.approx(0.0, abs=1e-15)
