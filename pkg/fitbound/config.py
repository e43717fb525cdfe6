import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError
from .experiment import DEFAULT_DISPLAY_CONSTANT, SyntheticDataSpec, TrainConfig
from .model import ModelSpec
from .risk import LossSpec

load_dotenv()

OUT_DIR = os.getenv("FITBOUND_OUT_DIR", "runs")
JOBS = int(os.getenv("FITBOUND_JOBS", "1"))
# falls back to sqlite:///<out>/runs.db when unset
DATABASE_URL = os.getenv("FITBOUND_DATABASE_URL")
LOG_LEVEL = os.getenv("FITBOUND_LOG_LEVEL", "INFO")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")


class VerifyConfig(RunConfig):
    """Instance and trial counts for the verification suites."""
    seed: int = Field(default=0, ge=0, lt=2**64)
    lemma_instances: int = Field(default=1000, gt=0)
    pinsker_instances: int = Field(default=10_000, gt=0)
    decomposition_instances: int = Field(default=1000, gt=0)
    fit_bound_pairs: int = Field(default=50, gt=0)
    gen_bound_trials: int = Field(default=100_000, gt=0)
    gen_bound_n: int = Field(default=50, gt=0)
    epsilon_grid: List[float] = [0.05, 0.1, 0.2, 0.4]
    complexity_specs: int = Field(default=50, gt=0)
    complexity_samples: int = Field(default=100_000, ge=100)
    hessian_instances: int = Field(default=20, gt=0)
    monotonicity_instances: int = Field(default=20, gt=0)
    coverage_trials: int = Field(default=10_000, gt=0)
    coverage_n: int = Field(default=50, gt=0)
    delta: float = Field(default=0.1, gt=0.0, lt=1.0)

    def with_trials(self, trials: Optional[int]) -> "VerifyConfig":
        """Apply a --trials override to every Monte-Carlo trial count."""
        if trials is None:
            return self
        return self.model_validate({**self.model_dump(), "gen_bound_trials": trials, "coverage_trials": trials})


class ComplexityConfig(RunConfig):
    dataset_path: Optional[str] = None
    prior_alpha: Union[float, List[float]] = 1.0
    num_samples: int = Field(default=100_000, ge=100)
    seed: int = Field(default=0, ge=0, lt=2**64)


class DiagnoseConfig(RunConfig):
    checkpoint_path: Optional[str] = None
    dataset_path: Optional[str] = None
    loss: LossSpec = LossSpec()
    with_g_min: bool = True
    # ground-truth joint CSV; when set the generalization error is reported
    q_bar_path: Optional[str] = None
    # when set, the expected-risk bound is assembled as well (needs a bounded loss)
    delta: Optional[float] = Field(default=None, gt=0.0, lt=1.0)


class CorrelateConfig(RunConfig):
    records_path: Optional[str] = None
    seed: int = Field(default=0, ge=0, lt=2**64)
    stabilization_window: int = Field(default=10, gt=0)
    stabilization_tolerance: float = Field(default=1e-3, gt=0.0)
    display_constant: float = Field(default=DEFAULT_DISPLAY_CONSTANT, gt=0.0)


class TrainRunConfig(RunConfig):
    """
    One training run per (architecture, seed). ``model`` is accepted as
    shorthand for a single-entry ``models`` list.
    """
    models: List[ModelSpec] = Field(default=[ModelSpec(input_dim=2, hidden_dims=[16], num_classes=3)], min_length=1)
    train: TrainConfig = TrainConfig()
    data: SyntheticDataSpec = SyntheticDataSpec()
    seeds: List[int] = Field(default=[0], min_length=1)
    display_constant: float = Field(default=DEFAULT_DISPLAY_CONSTANT, gt=0.0)

    @model_validator(mode="before")
    @classmethod
    def _single_model(cls, data: Any) -> Any:
        if isinstance(data, dict) and "model" in data:
            if "models" in data:
                raise ValueError("give either model or models, not both")
            data = {**data, "models": [data["model"]]}
            del data["model"]
        return data


ConfigT = TypeVar("ConfigT", bound=RunConfig)


def load_config(path: Optional[Union[str, Path]], model: Type[ConfigT], overrides: Optional[Dict[str, Any]] = None) -> ConfigT:
    """
    Read a JSON configuration file (optional) and apply flag overrides on top.

    Overrides whose value is None are ignored so unset flags keep the file
    or default value.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigurationError(f"cannot read configuration {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"malformed configuration {path}: line {e.lineno} column {e.colno}: {e.msg}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"configuration {path} must hold a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid {model.__name__}: {e}") from e
