"""Multiresolution hashed feature grid with a linear RGB decoder.

Background appearance is a view-independent function of the 3D world point:
per level, the point is trilinearly interpolated in a virtual dense grid
whose vertices are hashed into a fixed-size feature table; concatenated
level features pass through one linear layer and a clamp to [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

_PRIMES = (1, 2654435761, 805459861)


@dataclass(frozen=True)
class FieldConfig:
    levels: int = 4
    features: int = 2
    log2_table: int = 12
    base_resolution: int = 8
    growth: float = 2.0

    def resolutions(self) -> list[int]:
        return [int(np.floor(self.base_resolution * self.growth**i)) for i in range(self.levels)]


class BackgroundField:
    """Learnable appearance field over an axis-aligned bounding box."""

    def __init__(self, config: FieldConfig, aabb_min, aabb_max,
                 dtype=torch.float32, seed: int = 0):
        self.config = config
        self.aabb_min = np.asarray(aabb_min, dtype=np.float64)
        self.aabb_max = np.asarray(aabb_max, dtype=np.float64)
        span = self.aabb_max - self.aabb_min
        if np.any(span <= 0):
            raise ValueError("background field: degenerate bounding box")
        rng = np.random.default_rng(seed)
        tsize = 1 << config.log2_table
        self.tables = torch.as_tensor(
            rng.uniform(-1e-4, 1e-4, size=(config.levels, tsize, config.features)), dtype=dtype
        )
        self.decoder_weight = torch.as_tensor(
            rng.normal(0.0, 1e-2, size=(3, config.levels * config.features)), dtype=dtype
        )
        # Bias 0.5 so an untrained field decodes to mid-gray.
        self.decoder_bias = torch.full((3,), 0.5, dtype=dtype)

    def parameters(self) -> list[torch.Tensor]:
        return [self.tables, self.decoder_weight, self.decoder_bias]

    def requires_grad_(self, flag: bool = True) -> "BackgroundField":
        for p in self.parameters():
            p.requires_grad_(flag)
        return self

    @property
    def dtype(self):
        return self.tables.dtype

    def _hash(self, cells: torch.Tensor) -> torch.Tensor:
        """Spatial hash of integer grid coordinates (..., 3) -> table index."""
        mask = (1 << self.config.log2_table) - 1
        h = cells[..., 0] * _PRIMES[0]
        h = h ^ (cells[..., 1] * _PRIMES[1])
        h = h ^ (cells[..., 2] * _PRIMES[2])
        return h & mask

    def features_at(self, points: torch.Tensor) -> torch.Tensor:
        """Concatenated per-level trilinear features for world points (M, 3)."""
        lo = torch.as_tensor(self.aabb_min, dtype=points.dtype)
        hi = torch.as_tensor(self.aabb_max, dtype=points.dtype)
        x01 = ((points - lo) / (hi - lo)).clamp(0.0, 1.0)
        outs = []
        for level, res in enumerate(self.config.resolutions()):
            xs = x01 * res
            c0 = xs.floor().long().clamp(0, res - 1)            # (M, 3)
            frac = xs - c0
            acc = None
            for corner in range(8):
                off = torch.tensor(
                    [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1], dtype=torch.long
                )
                idx = self._hash(c0 + off)
                wgt = torch.where(off.bool(), frac, 1.0 - frac).prod(dim=-1, keepdim=True)
                term = self.tables[level][idx] * wgt
                acc = term if acc is None else acc + term
            outs.append(acc)
        return torch.cat(outs, dim=-1)

    def rgb(self, points: torch.Tensor) -> torch.Tensor:
        """Decoded color in [0, 1] for world points, shape (M, 3)."""
        feats = self.features_at(points)
        return (feats @ self.decoder_weight.T + self.decoder_bias).clamp(0.0, 1.0)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "tables": self.tables.detach().cpu().numpy(),
            "decoder_weight": self.decoder_weight.detach().cpu().numpy(),
            "decoder_bias": self.decoder_bias.detach().cpu().numpy(),
            "aabb_min": self.aabb_min,
            "aabb_max": self.aabb_max,
        }

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.tables = torch.as_tensor(arrays["tables"], dtype=self.dtype)
        self.decoder_weight = torch.as_tensor(arrays["decoder_weight"], dtype=self.dtype)
        self.decoder_bias = torch.as_tensor(arrays["decoder_bias"], dtype=self.dtype)
        self.aabb_min = np.asarray(arrays["aabb_min"], dtype=np.float64)
        self.aabb_max = np.asarray(arrays["aabb_max"], dtype=np.float64)
