"""Physics-informed state space model for next-hour solar irradiance forecasting."""

from .evaluate import EvalReport, mae, r2, rmse
from .features import NormStats, SampleSet, SplitSpec, prepare
from .hankel import HankelSpec, unroll
from .model import ModelConfig, count_params, deserialize, forward, init_model, serialize
from .solar import SiteConfig, solar_state
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "HankelSpec",
    "ModelConfig",
    "NormStats",
    "SampleSet",
    "SiteConfig",
    "SplitSpec",
    "TrainConfig",
    "count_params",
    "deserialize",
    "forward",
    "init_model",
    "mae",
    "prepare",
    "r2",
    "rmse",
    "serialize",
    "solar_state",
    "train",
    "unroll",
]
