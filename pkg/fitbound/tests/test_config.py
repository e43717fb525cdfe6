import json

import pytest
from pydantic import ValidationError

from fitbound.config import (
    ComplexityConfig,
    CorrelateConfig,
    DiagnoseConfig,
    TrainRunConfig,
    VerifyConfig,
    load_config,
)
from fitbound.errors import ConfigurationError
from fitbound.risk import LossKind


class TestLoadConfig:
    def test_defaults_without_file(self):
        config = load_config(None, VerifyConfig)
        assert config.seed == 0
        assert config.gen_bound_trials == 100_000
        assert config.delta == 0.1

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 3, "num_samples": 500}))
        config = load_config(path, ComplexityConfig, {"seed": 9, "num_samples": None})
        assert config.seed == 9
        assert config.num_samples == 500

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="cannot read"):
            load_config(tmp_path / "absent.json", VerifyConfig)

    def test_malformed_json_reports_position(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"seed": 1,,}')
        with pytest.raises(ConfigurationError, match="line 1"):
            load_config(path, VerifyConfig)

    def test_top_level_must_be_object(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigurationError, match="JSON object"):
            load_config(path, VerifyConfig)

    @pytest.mark.parametrize(
        "model, data",
        [
            (VerifyConfig, {"unknown": 1}),
            (VerifyConfig, {"delta": 1.0}),
            (VerifyConfig, {"seed": -1}),
            (ComplexityConfig, {"num_samples": 99}),
            (DiagnoseConfig, {"delta": 0.0}),
            (CorrelateConfig, {"stabilization_window": 0}),
            (TrainRunConfig, {"seeds": []}),
            (TrainRunConfig, {"train": {"epochs": 0}}),
            (TrainRunConfig, {"train": {"momentum": 1.0}}),
            (TrainRunConfig, {"train": {"learning_rate_schedule": [[1, 0.1]]}}),
            (TrainRunConfig, {"data": {"label_noise": 0.6}}),
        ],
    )
    def test_invalid_values(self, tmp_path, model, data):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(data))
        with pytest.raises(ConfigurationError):
            load_config(path, model)


class TestVerifyConfig:
    def test_trials_override_both_monte_carlo_counts(self):
        config = VerifyConfig().with_trials(10)
        assert (config.gen_bound_trials, config.coverage_trials) == (10, 10)

    def test_no_override(self):
        config = VerifyConfig(seed=4)
        assert config.with_trials(None) is config

    def test_override_is_validated(self):
        with pytest.raises(ValueError):
            VerifyConfig().with_trials(0)


class TestCommandConfigs:
    def test_diagnose_loss_from_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"loss": {"kind": "clipped_cross_entropy", "l_max": 5.0}, "delta": 0.05}))
        config = load_config(path, DiagnoseConfig)
        assert config.loss.kind is LossKind.CLIPPED_CROSS_ENTROPY
        assert config.loss.sup == 5.0

    def test_prior_alpha_accepts_a_vector(self):
        assert ComplexityConfig(prior_alpha=[1.0, 2.0]).prior_alpha == [1.0, 2.0]

    def test_train_defaults(self):
        config = TrainRunConfig()
        assert [m.hidden_dims for m in config.models] == [[16]]
        assert config.train.epochs == 200
        assert config.seeds == [0]

    def test_single_model_shorthand(self):
        config = TrainRunConfig.model_validate({"model": {"input_dim": 2, "hidden_dims": [4], "num_classes": 3}})
        assert [m.hidden_dims for m in config.models] == [[4]]
        assert "model" not in config.model_dump()

    def test_several_architectures(self):
        config = TrainRunConfig.model_validate(
            {"models": [{"input_dim": 2, "num_classes": 3}, {"input_dim": 2, "hidden_dims": [8, 8], "num_classes": 3}]}
        )
        assert [m.num_params for m in config.models] == [9, 24 + 72 + 27]

    @pytest.mark.parametrize(
        "data",
        [
            {"models": []},
            {"model": {"input_dim": 2, "num_classes": 3}, "models": [{"input_dim": 2, "num_classes": 3}]},
        ],
    )
    def test_rejected_architecture_lists(self, data):
        with pytest.raises(ValidationError):
            TrainRunConfig.model_validate(data)
