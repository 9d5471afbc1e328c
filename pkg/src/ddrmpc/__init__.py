"""Data-driven robust MPC for irrigation scheduling."""

from .dynamics import ConstraintSet, WaterBalanceParams, build_stacked, step
from .svc import SvcModel, SvcTrainConfig, train_svc
from .uncertainty import ConditionalSet, GuaranteeBudget, LearnedSets, SvcSet, calibrate
from .weather import HargreavesParams, WeatherRecord, hargreaves_et

__all__ = [
    "ConditionalSet",
    "ConstraintSet",
    "GuaranteeBudget",
    "HargreavesParams",
    "LearnedSets",
    "SvcModel",
    "SvcSet",
    "SvcTrainConfig",
    "WaterBalanceParams",
    "WeatherRecord",
    "build_stacked",
    "calibrate",
    "hargreaves_et",
    "step",
    "train_svc",
]
