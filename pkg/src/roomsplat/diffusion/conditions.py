"""Condition images handed to score providers, plus the stage contract."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..errors import ValidationError


class Stage(IntEnum):
    """Which half of the pipeline a provider serves (values match the wire)."""

    GEOMETRY = 0
    APPEARANCE = 1


# Latent channel contract per stage: geometry latents stack the normal map
# and the (replicated) inverse-depth map; appearance latents are RGB.
LATENT_CHANNELS = {Stage.GEOMETRY: 6, Stage.APPEARANCE: 3}

CONDITION_ROLES = ("semantic", "normal", "depth")


@dataclass(frozen=True)
class ConditionSet:
    """Channel-first condition images sharing one resolution.

    semantic: (3, H, W) palette colors; normal: (3, H, W) camera-space
    normals remapped to [0, 1]; depth: (1, H, W) inverse depth (sentinel
    pixels are 0). prompt_present distinguishes the conditional branch from
    the empty-prompt branch of classifier-free pairs.
    """

    semantic: np.ndarray
    normal: np.ndarray | None = None
    depth: np.ndarray | None = None
    prompt_present: bool = True

    def __post_init__(self):
        sem = np.asarray(self.semantic, dtype=np.float64)
        if sem.ndim != 3 or sem.shape[0] != 3:
            raise ValidationError(f"conditions: semantic must be (3, H, W), got {sem.shape}")
        hw = sem.shape[1:]
        object.__setattr__(self, "semantic", sem)
        for name, channels in (("normal", 3), ("depth", 1)):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim != 3 or arr.shape[0] != channels or arr.shape[1:] != hw:
                raise ValidationError(
                    f"conditions: {name} must be ({channels}, {hw[0]}, {hw[1]}), got {arr.shape}"
                )
            object.__setattr__(self, name, arr)

    @property
    def hw(self) -> tuple[int, int]:
        return self.semantic.shape[1], self.semantic.shape[2]

    def without_prompt(self) -> "ConditionSet":
        return ConditionSet(semantic=self.semantic, normal=self.normal,
                            depth=self.depth, prompt_present=False)
