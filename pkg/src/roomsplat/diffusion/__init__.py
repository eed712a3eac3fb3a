"""Diffusion-adjacent machinery: schedules, codecs, providers, wire protocol."""
from .codec import IdentityCodec, LatentImage, PoolCodec, get_codec
from .conditions import CONDITION_ROLES, LATENT_CHANNELS, ConditionSet, Stage
from .providers import (AffineTarget, AnalyticScoreProvider, ScoreProvider,
                        analytic_provider_from_params, analytic_provider_params_to_json,
                        default_analytic_params, load_analytic_params, pool_to,
                        tile_channels)
from .remote import RemoteScoreProvider
from .schedule import NoiseSchedule, ddim_estimate, make_schedule
from .toy_denoiser import (ToyDenoiser, ToyDenoiserProvider, ToyTrainConfig,
                           ToyTrainReport, train_toy_denoiser)

__all__ = [
    "AffineTarget", "AnalyticScoreProvider", "CONDITION_ROLES", "ConditionSet",
    "IdentityCodec", "LATENT_CHANNELS", "LatentImage", "NoiseSchedule", "PoolCodec",
    "RemoteScoreProvider", "ScoreProvider", "Stage", "ToyDenoiser", "ToyDenoiserProvider",
    "ToyTrainConfig", "ToyTrainReport", "analytic_provider_from_params",
    "analytic_provider_params_to_json", "ddim_estimate", "default_analytic_params",
    "get_codec", "load_analytic_params", "make_schedule", "pool_to", "tile_channels",
    "train_toy_denoiser",
]
