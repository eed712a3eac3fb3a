"""Score providers: the noise-prediction contract and the analytic oracle.

A provider maps (z_t, t, conditions) to a noise estimate with the shape of
z_t, deterministically. The analytic provider assumes a delta-concentrated
data distribution at a mean image mu(conditions) that is an affine function
of the condition images; its prediction

    eps_hat = (z_t - sqrt(ab_t) * mu) / sqrt(1 - ab_t)

is the exact posterior noise for that distribution, which makes every
distillation quantity computable in closed form for tests.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import math
import numpy as np

from ..errors import ValidationError
from .conditions import CONDITION_ROLES, LATENT_CHANNELS, ConditionSet, Stage
from .schedule import NoiseSchedule


@runtime_checkable
class ScoreProvider(Protocol):
    stage: Stage

    @property
    def latent_channels(self) -> int: ...

    def predict(self, z_t: np.ndarray, t: int, cond: ConditionSet) -> np.ndarray: ...


def tile_channels(img: np.ndarray, channels: int) -> np.ndarray:
    """Repeat condition channels cyclically to fill ``channels`` planes."""
    c = img.shape[0]
    reps = -(-channels // c)
    return np.concatenate([img] * reps, axis=0)[:channels]


def pool_to(img: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    """Integer-factor average pooling of a condition image to the latent size."""
    c, h, w = img.shape
    th, tw = hw
    if (h, w) == (th, tw):
        return img
    if h % th or w % tw or h < th or w < tw:
        raise ValidationError(
            f"provider: condition {h}x{w} not an integer multiple of latent {th}x{tw}"
        )
    return img.reshape(c, th, h // th, tw, w // tw).mean(axis=(2, 4))


@dataclass(frozen=True)
class AffineTarget:
    """mu = mu0 + sum_k W_k . cond_k with scalar or (C, c_img) matrix weights.

    Scalar weights multiply the condition tiled cyclically to the latent
    channel count; matrix weights mix condition channels per pixel. Missing
    condition images contribute nothing.
    """

    mu0: float | np.ndarray = 0.0
    weights: dict = field(default_factory=dict)

    def mean_image(self, cond: ConditionSet, channels: int, hw: tuple[int, int]) -> np.ndarray:
        mu = np.zeros((channels, *hw), dtype=np.float64)
        mu0 = np.asarray(self.mu0, dtype=np.float64)
        if mu0.ndim == 0:
            mu += float(mu0)
        elif mu0.shape == (channels,):
            mu += mu0[:, None, None]
        elif mu0.shape == (channels, *hw):
            mu += mu0
        else:
            raise ValidationError(
                f"provider: mu0 shape {mu0.shape} incompatible with ({channels}, {hw})"
            )
        for role, weight in self.weights.items():
            if role not in CONDITION_ROLES:
                raise ValidationError(f"provider: unknown condition role {role!r}")
            img = getattr(cond, role)
            if img is None:
                continue
            img = pool_to(np.asarray(img, dtype=np.float64), hw)
            w = np.asarray(weight, dtype=np.float64)
            if w.ndim == 0:
                mu += float(w) * tile_channels(img, channels)
            elif w.ndim == 2 and w.shape == (channels, img.shape[0]):
                mu += np.einsum("oc,chw->ohw", w, img)
            else:
                raise ValidationError(
                    f"provider: weight for {role!r} must be scalar or "
                    f"({channels}, {img.shape[0]}), got shape {w.shape}"
                )
        return mu

    def to_json_dict(self) -> dict:
        mu0 = self.mu0
        out = {"mu0": mu0.tolist() if isinstance(mu0, np.ndarray) else mu0, "weights": {}}
        for role, w in self.weights.items():
            out["weights"][role] = w.tolist() if isinstance(w, np.ndarray) else w
        return out

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AffineTarget":
        mu0 = doc.get("mu0", 0.0)
        if isinstance(mu0, list):
            mu0 = np.asarray(mu0, dtype=np.float64)
        weights = {}
        for role, w in doc.get("weights", {}).items():
            weights[role] = np.asarray(w, dtype=np.float64) if isinstance(w, list) else float(w)
        return cls(mu0=mu0, weights=weights)


class AnalyticScoreProvider:
    """Closed-form oracle provider for a delta-target data distribution."""

    def __init__(self, stage: Stage, schedule: NoiseSchedule,
                 cond_target: AffineTarget, uncond_target: AffineTarget | None = None,
                 latent_channels: int | None = None):
        self.stage = Stage(stage)
        self.schedule = schedule
        self.cond_target = cond_target
        self.uncond_target = uncond_target if uncond_target is not None else cond_target
        self._channels = latent_channels or LATENT_CHANNELS[self.stage]

    @property
    def latent_channels(self) -> int:
        return self._channels

    def target(self, cond: ConditionSet) -> AffineTarget:
        return self.cond_target if cond.prompt_present else self.uncond_target

    def mean_image(self, cond: ConditionSet, hw: tuple[int, int]) -> np.ndarray:
        return self.target(cond).mean_image(cond, self._channels, hw)

    def predict(self, z_t: np.ndarray, t: int, cond: ConditionSet) -> np.ndarray:
        z_t = np.asarray(z_t, dtype=np.float64)
        if z_t.ndim != 3 or z_t.shape[0] != self._channels:
            raise ValidationError(
                f"provider: latent must be ({self._channels}, h, w), got {z_t.shape}"
            )
        t = self.schedule.check_t(t)
        mu = self.mean_image(cond, z_t.shape[1:])
        ab = float(self.schedule.alpha_bar[t])
        return (z_t - math.sqrt(ab) * mu) / math.sqrt(1.0 - ab)


def analytic_provider_params_to_json(providers: dict[str, AnalyticScoreProvider]) -> str:
    doc = {}
    for name, p in providers.items():
        doc[name] = {
            "latent_channels": p.latent_channels,
            "cond": p.cond_target.to_json_dict(),
            "uncond": p.uncond_target.to_json_dict(),
        }
    return json.dumps(doc, indent=2)


def load_analytic_params(path: str | Path) -> dict[str, dict]:
    """Raw per-stage affine parameter dicts from a JSON params file."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: analytic params must be a JSON object")
    return doc


def analytic_provider_from_params(stage: Stage, schedule: NoiseSchedule,
                                  params: dict) -> AnalyticScoreProvider:
    cond = AffineTarget.from_json_dict(params.get("cond", {}))
    uncond_doc = params.get("uncond")
    uncond = AffineTarget.from_json_dict(uncond_doc) if uncond_doc is not None else None
    return AnalyticScoreProvider(stage, schedule, cond, uncond,
                                 latent_channels=params.get("latent_channels"))


def default_analytic_params() -> dict[str, dict]:
    """Built-in analytic targets: appearance pulls toward the semantic map
    (uncond toward mid-gray); geometry pulls toward the rendered normal and
    inverse-depth conditions when present."""
    eye3 = np.eye(3)
    geometry = {
        "latent_channels": 6,
        "cond": AffineTarget(
            mu0=0.0,
            weights={
                "normal": np.concatenate([eye3, np.zeros((3, 3))], axis=0),
                "depth": np.concatenate([np.zeros((3, 1)), np.ones((3, 1))], axis=0),
            },
        ).to_json_dict(),
        "uncond": AffineTarget(mu0=0.5).to_json_dict(),
    }
    appearance = {
        "latent_channels": 3,
        "cond": AffineTarget(mu0=0.0, weights={"semantic": 1.0}).to_json_dict(),
        "uncond": AffineTarget(mu0=0.5).to_json_dict(),
    }
    return {"geometry": geometry, "appearance": appearance}
