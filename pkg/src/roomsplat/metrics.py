"""Layout-adherence metrics.

The paper-standard scores need pretrained networks, so quality here is
measured directly against the layout: per-label semantic IoU between the
rendered semantic map (quantized to the nearest palette color) and an
oracle render of the boxes as solid volumes, plus camera coverage and an
opacity-concentration diagnostic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .optim.state import SceneState
from .optim.targets import LayoutOracleConditionSource
from .renderer import Camera, render_background, splat_gaussians, SplatOptions
from .renderer.composite import composite
from .scene import SemanticLayout
from .tsdf import build_tsdf
from .view_sampling import CameraSampler, CameraSamplerConfig, coverage_report


@dataclass
class MetricsReport:
    n_views: int
    per_label_iou: dict[str, float]
    mean_object_iou: float
    free_voxel_coverage: float
    per_box_visibility: tuple[int, ...]
    opacity_inside: float
    opacity_outside: float
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and not np.isfinite(v) else v

        return {
            "n_views": self.n_views,
            "per_label_iou": {k: clean(v) for k, v in self.per_label_iou.items()},
            "mean_object_iou": self.mean_object_iou,
            "free_voxel_coverage": self.free_voxel_coverage,
            "per_box_visibility": list(self.per_box_visibility),
            "opacity_inside": self.opacity_inside,
            "opacity_outside": self.opacity_outside,
        }


def quantize_to_labels(s_img: np.ndarray, labels: list[str], palette) -> np.ndarray:
    """Nearest-palette-color label index per pixel for a rendered semantic map."""
    colors = np.stack([palette.rgb_float(label) for label in labels])  # (L, 3)
    dist = ((s_img[..., None, :] - colors) ** 2).sum(axis=-1)          # (H, W, L)
    return dist.argmin(axis=-1)


def render_state_bundle(state: SceneState, cam: Camera,
                        opts: SplatOptions = SplatOptions(), with_rgb: bool = True):
    with torch.no_grad():
        obj = splat_gaussians(state.world_batch(), cam, opts)
        bg = render_background(state.layout.room, state.field if with_rgb else None,
                               cam, state.palette, dtype=state.dtype)
        return composite(obj, bg)


def semantic_iou(state: SceneState, cams: list[Camera],
                 opts: SplatOptions = SplatOptions()) -> dict[str, float]:
    """Per-label IoU of rendered vs oracle solid-box semantics over the views."""
    layout = state.layout
    palette = state.palette
    object_labels = sorted({b.label for b in layout.boxes})
    bg_labels = sorted({p.label for p in layout.room.polygons})
    labels = object_labels + [l for l in bg_labels if l not in object_labels]
    label_pos = {l: i for i, l in enumerate(labels)}

    oracle = LayoutOracleConditionSource(layout, palette)
    inter = np.zeros(len(labels))
    union = np.zeros(len(labels))
    for cam in cams:
        bundle = render_state_bundle(state, cam, opts, with_rgb=False)
        rendered = quantize_to_labels(bundle.S.detach().double().numpy(), labels, palette)
        raster = oracle.raster(cam)
        gt = np.full(rendered.shape, -1, dtype=np.int64)
        hit = raster.hit
        gt_labels = np.array([label_pos.get(l, -1) for l in raster.labels] + [-1])
        gt[hit] = gt_labels[raster.label_index[hit]]
        for i in range(len(labels)):
            a = rendered == i
            b = gt == i
            inter[i] += np.logical_and(a, b).sum()
            union[i] += np.logical_or(a, b).sum()
    return {
        label: float(inter[i] / union[i]) if union[i] > 0 else float("nan")
        for i, label in enumerate(labels)
    }


def opacity_concentration(state: SceneState) -> tuple[float, float]:
    """Mean primitive opacity inside any layout box vs outside all of them."""
    with torch.no_grad():
        batch = state.world_batch()
        positions = batch.positions.double().numpy()
        opacities = batch.opacities.double().numpy()
    inside = np.zeros(positions.shape[0], dtype=bool)
    for box in state.layout.boxes:
        inside |= box.contains(positions, pad=1e-9)
    mean_in = float(opacities[inside].mean()) if inside.any() else 0.0
    mean_out = float(opacities[~inside].mean()) if (~inside).any() else 0.0
    return mean_in, mean_out


def compute_metrics(state: SceneState, n_views: int = 16, seed: int = 0,
                    camera_config: CameraSamplerConfig | None = None) -> MetricsReport:
    layout: SemanticLayout = state.layout
    camera_config = camera_config or CameraSamplerConfig()
    sampler = CameraSampler(layout, camera_config, seed=seed)
    cams = sampler.sample(n_views) if n_views > 0 else []

    iou = semantic_iou(state, cams) if cams else {}
    object_labels = {b.label for b in layout.boxes}
    object_ious = [v for k, v in iou.items() if k in object_labels and np.isfinite(v)]
    grid = build_tsdf(layout, camera_config.voxel, camera_config.tau)
    cover = coverage_report(cams, layout, grid)
    op_in, op_out = opacity_concentration(state)
    return MetricsReport(
        n_views=len(cams),
        per_label_iou=iou,
        mean_object_iou=float(np.mean(object_ious)) if object_ious else 0.0,
        free_voxel_coverage=cover.free_voxel_coverage,
        per_box_visibility=cover.per_box_visibility,
        opacity_inside=op_in,
        opacity_outside=op_out,
    )
