"""Condition-image sources for the distillation steps.

The default source renders conditions from the current scene state (the
semantic map for the geometry stage; semantic+normal+depth for the
appearance stage). Oracle sources render a frozen reference scene instead,
which lets analytic providers express per-view targets such as the
solid-box geometry implied by the layout.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch

from ..diffusion import ConditionSet, Stage
from ..palette import SemanticPalette
from ..renderer import (Camera, GaussianBatch, RasterResult, RenderBundle, SplatOptions,
                        box_faces, rasterize_polygons, semantic_image, splat_gaussians)
from ..renderer.composite import composite
from ..renderer.bundle import empty_bundle
from ..scene import SemanticLayout


def bundle_to_condition_images(bundle: RenderBundle) -> dict[str, np.ndarray]:
    """Channel-first semantic / normal01 / inverse-depth images from a bundle."""
    with torch.no_grad():
        semantic = bundle.S.permute(2, 0, 1).detach().double().numpy()
        normal01 = ((bundle.N + 1.0) * 0.5).permute(2, 0, 1).detach().double().numpy()
        d = bundle.D.detach().double().numpy()
    inv_depth = np.where(np.isfinite(d) & (d > 0), 1.0 / np.where(d > 0, d, 1.0), 0.0)
    return {"semantic": semantic, "normal": normal01, "depth": inv_depth[None]}


def geometry_latent_image(bundle: RenderBundle) -> torch.Tensor:
    """Differentiable geometry image (6, H, W): normals in [0,1] + inverse depth x3."""
    normal01 = ((bundle.N + 1.0) * 0.5).permute(2, 0, 1)
    d = bundle.D
    finite = torch.isfinite(d) & (d > 0)
    inv = torch.where(finite, 1.0 / torch.where(finite, d, torch.ones_like(d)),
                      torch.zeros_like(d))
    return torch.cat([normal01, inv[None].expand(3, -1, -1)], dim=0)


def appearance_latent_image(bundle: RenderBundle) -> torch.Tensor:
    """Differentiable RGB image (3, H, W)."""
    return bundle.I.permute(2, 0, 1)


class ConditionSource(Protocol):
    def conditions_for(self, cam: Camera, state_bundle: RenderBundle,
                       stage: Stage) -> ConditionSet: ...


class StateConditionSource:
    """Conditions rendered from the current scene (the production wiring)."""

    def conditions_for(self, cam: Camera, state_bundle: RenderBundle,
                       stage: Stage) -> ConditionSet:
        imgs = bundle_to_condition_images(state_bundle)
        if stage == Stage.GEOMETRY:
            return ConditionSet(semantic=imgs["semantic"], prompt_present=True)
        return ConditionSet(semantic=imgs["semantic"], normal=imgs["normal"],
                            depth=imgs["depth"], prompt_present=True)


@dataclass
class LayoutOracleConditionSource:
    """Conditions rendered from the layout's solid boxes + room shell.

    Gives per-view oracle semantic/normal/inverse-depth maps, so an analytic
    provider with passthrough weights turns distillation into a pull toward
    the layout-consistent geometry.
    """

    layout: SemanticLayout
    palette: SemanticPalette

    def __post_init__(self):
        self._polygons = list(self.layout.room.polygons)
        for box in self.layout.boxes:
            self._polygons.extend(box_faces(box))

    def raster(self, cam: Camera) -> RasterResult:
        return rasterize_polygons(self._polygons, cam)

    def conditions_for(self, cam: Camera, state_bundle: RenderBundle,
                       stage: Stage) -> ConditionSet:
        raster = self.raster(cam)
        semantic = semantic_image(raster, self.palette).transpose(2, 0, 1)
        normal01 = ((raster.normal + 1.0) * 0.5).transpose(2, 0, 1)
        d = raster.depth
        inv = np.where(np.isfinite(d) & (d > 0), 1.0 / np.where(d > 0, d, 1.0), 0.0)
        return ConditionSet(semantic=semantic, normal=normal01, depth=inv[None],
                            prompt_present=True)


@dataclass
class SnapshotConditionSource:
    """Conditions rendered from a frozen gaussian snapshot.

    With a shell and palette the snapshot is composited over the background
    exactly like the live scene, so a state snapshotting itself reproduces
    the optimization latent bit for bit.
    """

    batch: GaussianBatch
    shell: object = None
    palette: SemanticPalette | None = None
    opts: SplatOptions = SplatOptions()

    def conditions_for(self, cam: Camera, state_bundle: RenderBundle,
                       stage: Stage) -> ConditionSet:
        from ..renderer import render_background

        with torch.no_grad():
            bundle = splat_gaussians(self.batch, cam, self.opts)
            if self.shell is not None:
                bg = render_background(self.shell, None, cam, self.palette,
                                       dtype=self.batch.dtype)
                bundle = composite(bundle, bg)
        imgs = bundle_to_condition_images(bundle)
        return ConditionSet(semantic=imgs["semantic"], normal=imgs["normal"],
                            depth=imgs["depth"], prompt_present=True)
