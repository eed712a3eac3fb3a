"""Mock backend: closed-form noise prediction for delta-target distributions.

Independent re-implementation of the analytic scoring rule so the service
can be conformance-tested against client-side oracles:

    mu = mu0 + sum_k W_k . cond_k        (affine map of condition images)
    eps_hat = (z_t - sqrt(ab_t) mu) / sqrt(1 - ab_t)

Weights are scalars (condition tiled cyclically over latent channels) or
(C_latent x C_cond) per-pixel channel mixes; condition images are average-
pooled to the latent resolution when larger by an integer factor.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONDITION_ROLES = ("semantic", "normal", "depth")


def make_alpha_bar(T: int, kind: str = "cosine") -> np.ndarray:
    """Cumulative signal coefficients, index 0..T with alpha_bar[0] = 1."""
    t = np.arange(T + 1, dtype=np.float64)
    if kind == "cosine":
        s = 0.008
        f = np.cos((t / T + s) / (1.0 + s) * math.pi / 2.0) ** 2
        ab = np.clip(f / f[0], 1e-9, 1.0)
        ab[0] = 1.0
        return ab
    if kind == "linear":
        scale = 1000.0 / T
        betas = np.clip(np.linspace(1e-4, 2e-2, T) * scale, 0.0, 0.999)
        return np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    raise ValueError(f"unknown schedule kind {kind!r}")


def _tile_channels(img: np.ndarray, channels: int) -> np.ndarray:
    reps = -(-channels // img.shape[0])
    return np.concatenate([img] * reps, axis=0)[:channels]


def _pool_to(img: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    c, h, w = img.shape
    th, tw = hw
    if (h, w) == (th, tw):
        return img
    if h % th or w % tw or h < th or w < tw:
        raise ValueError(f"condition {h}x{w} incompatible with latent {th}x{tw}")
    return img.reshape(c, th, h // th, tw, w // tw).mean(axis=(2, 4))


@dataclass(frozen=True)
class AffineTarget:
    mu0: object = 0.0                  # scalar | (C,) | (C, h, w)
    weights: dict = field(default_factory=dict)

    def mean_image(self, conditions: dict, channels: int, hw: tuple[int, int]) -> np.ndarray:
        mu = np.zeros((channels, *hw))
        mu0 = np.asarray(self.mu0, dtype=np.float64)
        if mu0.ndim == 0:
            mu += float(mu0)
        elif mu0.shape == (channels,):
            mu += mu0[:, None, None]
        else:
            mu += mu0.reshape(channels, *hw)
        for role, weight in self.weights.items():
            img = conditions.get(role)
            if img is None:
                continue
            img = _pool_to(np.asarray(img, dtype=np.float64), hw)
            w = np.asarray(weight, dtype=np.float64)
            if w.ndim == 0:
                mu += float(w) * _tile_channels(img, channels)
            else:
                mu += np.einsum("oc,chw->ohw", w, img)
        return mu

    @classmethod
    def from_json(cls, doc: dict) -> "AffineTarget":
        mu0 = doc.get("mu0", 0.0)
        if isinstance(mu0, list):
            mu0 = np.asarray(mu0, dtype=np.float64)
        weights = {}
        for role, w in doc.get("weights", {}).items():
            if role not in CONDITION_ROLES:
                raise ValueError(f"unknown condition role {role!r}")
            weights[role] = np.asarray(w, dtype=np.float64) if isinstance(w, list) else float(w)
        return cls(mu0=mu0, weights=weights)


@dataclass
class AnalyticStage:
    cond: AffineTarget
    uncond: AffineTarget
    latent_channels: int

    def predict(self, z: np.ndarray, t: int, T: int, prompt_present: bool,
                conditions: dict, alpha_bar: np.ndarray) -> np.ndarray:
        if z.shape[0] != self.latent_channels:
            raise ValueError(
                f"latent has {z.shape[0]} channels, stage expects {self.latent_channels}"
            )
        if not 1 <= t <= T:
            raise ValueError(f"t={t} outside [1, {T}]")
        target = self.cond if prompt_present else self.uncond
        mu = target.mean_image(conditions, self.latent_channels, z.shape[1:])
        ab = float(alpha_bar[t])
        return (z.astype(np.float64) - math.sqrt(ab) * mu) / math.sqrt(1.0 - ab)


def default_params() -> dict:
    """Built-in targets mirroring the documented analytic-params defaults."""
    eye3 = np.eye(3)
    return {
        "geometry": {
            "latent_channels": 6,
            "cond": {"mu0": 0.0, "weights": {
                "normal": np.concatenate([eye3, np.zeros((3, 3))]).tolist(),
                "depth": np.concatenate([np.zeros((3, 1)), np.ones((3, 1))]).tolist(),
            }},
            "uncond": {"mu0": 0.5, "weights": {}},
        },
        "appearance": {
            "latent_channels": 3,
            "cond": {"mu0": 0.0, "weights": {"semantic": 1.0}},
            "uncond": {"mu0": 0.5, "weights": {}},
        },
    }


def load_stages(params_path: str | Path | None) -> dict[int, AnalyticStage]:
    """Stage table from a mu-parameter JSON file (or the built-in defaults)."""
    doc = (json.loads(Path(params_path).read_text(encoding="utf-8"))
           if params_path else default_params())
    stages = {}
    for code, name, default_channels in ((0, "geometry", 6), (1, "appearance", 3)):
        if name not in doc:
            continue
        entry = doc[name]
        stages[code] = AnalyticStage(
            cond=AffineTarget.from_json(entry.get("cond", {})),
            uncond=AffineTarget.from_json(entry.get("uncond", {"mu0": 0.5})),
            latent_channels=int(entry.get("latent_channels", default_channels)),
        )
    if not stages:
        raise ValueError("params file defines no stages")
    return stages
