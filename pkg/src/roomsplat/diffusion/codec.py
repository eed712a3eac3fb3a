"""Image <-> latent codec abstraction.

A pretrained VAE is out of scope at desk scale; the identity codec keeps
every analytic oracle exact, and the average-pool codec exercises the
resolution-mismatch plumbing. Arrays are channel-first (C, H, W); both
numpy arrays and torch tensors pass through (pooling stays differentiable).
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ValidationError


@dataclass(frozen=True)
class LatentImage:
    data: np.ndarray  # (C, h, w)
    codec_id: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("latent: non-finite values")


class IdentityCodec:
    codec_id = "identity"
    factor = 1

    def encode_array(self, image):
        return image

    def decode_array(self, latent):
        return latent

    def encode(self, image) -> LatentImage:
        return LatentImage(data=np.asarray(image), codec_id=self.codec_id)

    def decode(self, latent: LatentImage) -> np.ndarray:
        return latent.data


class PoolCodec:
    """k x k average-pool encode; blockwise-constant (nearest) decode."""

    def __init__(self, k: int):
        if k < 1:
            raise ValidationError("codec: pool factor must be >= 1")
        self.factor = k
        self.codec_id = f"pool{k}"

    def encode_array(self, image):
        k = self.factor
        c, h, w = image.shape
        if h % k or w % k:
            raise ValidationError(f"codec: resolution {h}x{w} not divisible by {k}")
        blocks = image.reshape(c, h // k, k, w // k, k)
        if isinstance(image, torch.Tensor):
            return blocks.mean(dim=(2, 4))
        return blocks.mean(axis=(2, 4))

    def decode_array(self, latent):
        k = self.factor
        if isinstance(latent, torch.Tensor):
            return latent.repeat_interleave(k, dim=1).repeat_interleave(k, dim=2)
        return np.repeat(np.repeat(latent, k, axis=1), k, axis=2)

    def encode(self, image) -> LatentImage:
        return LatentImage(data=np.asarray(self.encode_array(np.asarray(image))),
                           codec_id=self.codec_id)

    def decode(self, latent: LatentImage) -> np.ndarray:
        return np.asarray(self.decode_array(latent.data))


def get_codec(spec: str):
    """Parse a codec spec: ``identity`` or ``pool<k>`` / ``average-pool-<k>``."""
    spec = spec.strip().lower()
    if spec == "identity":
        return IdentityCodec()
    m = re.fullmatch(r"(?:average-)?pool-?(\d+)", spec)
    if m:
        return PoolCodec(int(m.group(1)))
    raise ValidationError(f"codec: unknown spec {spec!r}")
