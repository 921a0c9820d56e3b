from .denoiser import DenoiserNet, DenoiserScore, DsmConfig, DsmState, dsm_loss, dsm_train
from .schedule import NoiseSchedule
from .score import (
    GaussianAnalyticPrior,
    ScoreModel,
    euler_step,
    ode_sample,
    tweedie_denoise,
)

__all__ = [
    "DenoiserNet",
    "DenoiserScore",
    "DsmConfig",
    "DsmState",
    "GaussianAnalyticPrior",
    "NoiseSchedule",
    "ScoreModel",
    "dsm_loss",
    "dsm_train",
    "euler_step",
    "ode_sample",
    "tweedie_denoise",
]
