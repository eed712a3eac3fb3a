"""Differentiable hybrid renderer: disk splatting + polygon background + fusion."""
from __future__ import annotations

import torch

from ..errors import ValidationError
from ..palette import SemanticPalette
from ..scene import ObjectGaussians, RoomShell
from .background import (RasterResult, box_faces, rasterize_polygons,
                         render_background, semantic_image)
from .bundle import BundleGrads, ParamGradients, RenderBundle, empty_bundle
from .cameras import Camera, load_cameras, save_cameras
from .composite import composite
from .gaussians import DEFAULT_OPTS, GaussianBatch, SplatOptions, exp_so3, splat_gaussians
from .hashgrid import BackgroundField, FieldConfig

__all__ = [
    "BackgroundField", "BundleGrads", "Camera", "DEFAULT_OPTS", "FieldConfig",
    "GaussianBatch", "ParamGradients", "RasterResult", "RenderBundle", "SplatOptions",
    "backward", "box_faces", "composite", "empty_bundle", "exp_so3", "load_cameras",
    "rasterize_polygons", "render_background", "render_hybrid", "render_objects",
    "save_cameras", "semantic_image", "splat_gaussians",
]


def render_objects(primitives, cam: Camera, opts: SplatOptions = DEFAULT_OPTS,
                   dtype=torch.float32) -> RenderBundle:
    """Objects-only bundle from world-space primitives.

    Accepts a GaussianBatch (tensors pass through, gradients preserved) or
    ObjectGaussians / list of ObjectGaussians already carried to world space.
    """
    if isinstance(primitives, GaussianBatch):
        batch = primitives
    elif isinstance(primitives, (ObjectGaussians, list)):
        batch = GaussianBatch.from_objects(primitives, dtype=dtype)
    else:
        raise ValidationError(f"render_objects: unsupported primitives {type(primitives)!r}")
    return splat_gaussians(batch, cam, opts)


def render_hybrid(batch, shell: RoomShell, field: BackgroundField, cam: Camera,
                  palette: SemanticPalette, opts: SplatOptions = DEFAULT_OPTS) -> RenderBundle:
    """Full scene bundle: splat objects, raster background, fuse by depth."""
    obj = render_objects(batch, cam, opts, dtype=field.dtype)
    bg = render_background(shell, field, cam, palette)
    return composite(obj, bg)


def _upstream_loss(bundle: RenderBundle, upstream: BundleGrads) -> torch.Tensor:
    """Scalar whose gradient w.r.t. parameters is the requested JVP."""
    total = None
    for name in ("I", "A", "S", "N", "D"):
        g = getattr(upstream, name)
        if g is None:
            continue
        value = getattr(bundle, name)
        g = torch.as_tensor(g, dtype=value.dtype)
        if g.shape != value.shape:
            raise ValidationError(
                f"backward: upstream {name} shape {tuple(g.shape)} != {tuple(value.shape)}"
            )
        if name == "D":
            finite = torch.isfinite(value)
            term = (value * g)[finite].sum()
        else:
            term = (value * g).sum()
        total = term if total is None else total + term
    if total is None:
        raise ValidationError("backward: no upstream gradients given")
    return total


def backward(batch: GaussianBatch, cam: Camera, upstream: BundleGrads,
             shell: RoomShell | None = None, field: BackgroundField | None = None,
             palette: SemanticPalette | None = None,
             opts: SplatOptions = DEFAULT_OPTS) -> ParamGradients:
    """Analytic gradients of the (optionally composited) bundle.

    Re-runs the forward pass with fresh autograd leaves, applies the upstream
    gradient images and returns per-parameter gradients. Depth sort order and
    the fusion branch selection are locally constant, matching the forward.
    """
    leaves = GaussianBatch(
        positions=batch.positions.detach().clone().requires_grad_(True),
        rotations=batch.rotations.detach().clone(),
        scales=batch.scales.detach().clone().requires_grad_(True),
        opacities=batch.opacities.detach().clone().requires_grad_(True),
        colors=batch.colors.detach().clone().requires_grad_(True),
        semantics=batch.semantics.detach().clone(),
        rot_delta=torch.zeros_like(batch.positions).requires_grad_(True),
    )
    params = [leaves.positions, leaves.rot_delta, leaves.scales, leaves.opacities, leaves.colors]
    field_params: list[torch.Tensor] = []
    if field is not None:
        if shell is None or palette is None:
            raise ValidationError("backward: background needs shell and palette")
        field.requires_grad_(True)
        field_params = field.parameters()
        bundle = render_hybrid(leaves, shell, field, cam, palette, opts)
    else:
        bundle = splat_gaussians(leaves, cam, opts)

    loss = _upstream_loss(bundle, upstream)
    grads = torch.autograd.grad(loss, params + field_params, allow_unused=True)

    def g(i, like):
        return grads[i] if grads[i] is not None else torch.zeros_like(like)

    out = ParamGradients(
        position=g(0, leaves.positions),
        orientation=g(1, leaves.rot_delta),
        scale=g(2, leaves.scales),
        opacity=g(3, leaves.opacities),
        color=g(4, leaves.colors),
    )
    if field is not None:
        out.field_tables = g(5, field.tables)
        out.field_decoder_weight = g(6, field.decoder_weight)
        out.field_decoder_bias = g(7, field.decoder_bias)
        field.requires_grad_(False)
    return out
