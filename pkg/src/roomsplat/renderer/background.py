"""Polygon z-buffer rasterization and the learnable-field background pass.

Polygon geometry is fixed (never optimized), so visibility runs in plain
numpy; only the appearance field lookup at the hit points is differentiable.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..palette import SemanticPalette
from ..scene import BackgroundPolygon, RoomShell, SemanticBox, loop_order
from .bundle import RenderBundle
from .cameras import Camera
from .hashgrid import BackgroundField

logger = logging.getLogger(__name__)


@dataclass
class RasterResult:
    """Per-pixel nearest polygon hit (numpy, camera-space normals)."""

    depth: np.ndarray        # (H, W), +inf where no polygon is hit
    normal: np.ndarray       # (H, W, 3), flipped toward the camera, zero on miss
    label_index: np.ndarray  # (H, W) int, -1 on miss
    labels: list[str]
    points_world: np.ndarray  # (H, W, 3), hit positions (undefined on miss)

    @property
    def hit(self) -> np.ndarray:
        return np.isfinite(self.depth)


def _point_in_loop_2d(px: np.ndarray, py: np.ndarray, loop2d: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorized over pixels."""
    inside = np.zeros(px.shape, dtype=bool)
    n = loop2d.shape[0]
    for i in range(n):
        x1, y1 = loop2d[i]
        x2, y2 = loop2d[(i + 1) % n]
        if y1 == y2:
            continue
        cross = ((y1 > py) != (y2 > py)) & (px < (x2 - x1) * (py - y1) / (y2 - y1) + x1)
        inside ^= cross
    return inside


def rasterize_polygons(polygons: Sequence[BackgroundPolygon], cam: Camera,
                       near: float = 1e-4) -> RasterResult:
    """Nearest ray-polygon intersection per pixel over all polygons."""
    height, width = cam.height, cam.width
    r_wc = cam.world_to_cam()
    dirs = cam.pixel_dirs()                                   # (H, W, 3) camera space

    depth = np.full((height, width), np.inf)
    normal = np.zeros((height, width, 3))
    label_index = np.full((height, width), -1, dtype=np.int64)
    labels = [p.label for p in polygons]

    for pi, poly in enumerate(polygons):
        verts_cam = (poly.vertices - cam.position) @ r_wc.T
        n_cam = r_wc @ poly.normal
        v0 = verts_cam[0]
        dn = dirs @ n_cam
        pn = float(v0 @ n_cam)
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = np.where(np.abs(dn) > 1e-12, pn / dn, np.inf)
        candidate = (tau > near) & (tau < depth)
        if not candidate.any():
            continue
        # 2D plane coordinates for the inside test.
        e1 = verts_cam[1] - verts_cam[0]
        e1 = e1 / np.linalg.norm(e1)
        e2 = np.cross(n_cam, e1)
        with np.errstate(invalid="ignore"):  # inf tau on culled pixels is fine
            q = np.where(candidate[..., None], tau[..., None], 0.0) * dirs - v0
            qx, qy = q @ e1, q @ e2
        loop = loop_order(poly.edges)
        loop2d = np.stack([(verts_cam[loop] - v0) @ e1, (verts_cam[loop] - v0) @ e2], axis=1)
        inside = _point_in_loop_2d(qx, qy, loop2d)
        hit = candidate & inside
        if not hit.any():
            continue
        depth[hit] = tau[hit]
        flip = np.where(dn[hit] > 0, -1.0, 1.0)
        normal[hit] = n_cam * flip[:, None]
        label_index[hit] = pi

    points_world = cam.position + depth[..., None] * (dirs @ r_wc)
    points_world[~np.isfinite(depth)] = 0.0
    return RasterResult(depth=depth, normal=normal, label_index=label_index,
                        labels=labels, points_world=points_world)


def box_faces(box: SemanticBox) -> list[BackgroundPolygon]:
    """The six quads of a semantic box, labeled with the box label."""
    from ..layout_io import polygon_quad  # local import to avoid a cycle

    c = box.corners()  # ordering: index bit2 -> x sign, bit1 -> y sign, bit0 -> z sign
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # x- and x+ faces
        (0, 4, 5, 1), (2, 3, 7, 6),  # y- and y+
        (0, 2, 6, 4), (1, 5, 7, 3),  # z- and z+
    ]
    return [polygon_quad(c[list(q)], box.label) for q in quads]


def semantic_image(raster: RasterResult, palette: SemanticPalette) -> np.ndarray:
    """Palette colors of hit polygons, zero on miss; shape (H, W, 3)."""
    colors = np.zeros((len(raster.labels) + 1, 3))
    for i, label in enumerate(raster.labels):
        colors[i] = palette.rgb_float(label)
    return colors[raster.label_index]


def render_background(shell: RoomShell, field: BackgroundField | None, cam: Camera,
                      palette: SemanticPalette, near: float = 1e-4,
                      dtype=None) -> RenderBundle:
    """Background bundle: z-buffered shell + field color at the hit points.

    A is the hit mask (the shell is treated as opaque). Escaped rays keep
    the +inf depth sentinel and are logged, since a watertight shell should
    cover every pixel. With field=None the RGB map stays zero (geometry-only
    conditioning does not need it).
    """
    raster = rasterize_polygons(shell.polygons, cam, near=near)
    dtype = dtype or (field.dtype if field is not None else torch.float32)
    height, width = cam.height, cam.width

    escaped = int((~raster.hit).sum())
    if escaped:
        logger.warning("render_background: %d ray(s) escaped the shell", escaped)

    hit_flat = torch.as_tensor(raster.hit.reshape(-1))
    idx = torch.nonzero(hit_flat, as_tuple=False).squeeze(1)
    i_img = torch.zeros(height * width, 3, dtype=dtype)
    if field is not None and idx.numel():
        pts = torch.as_tensor(
            raster.points_world.reshape(-1, 3)[raster.hit.reshape(-1)], dtype=dtype
        )
        i_img = i_img.index_add(0, idx, field.rgb(pts))
    return RenderBundle(
        I=i_img.reshape(height, width, 3),
        A=torch.as_tensor(raster.hit, dtype=dtype),
        S=torch.as_tensor(semantic_image(raster, palette), dtype=dtype),
        N=torch.as_tensor(raster.normal, dtype=dtype),
        D=torch.as_tensor(raster.depth, dtype=dtype),
    )
