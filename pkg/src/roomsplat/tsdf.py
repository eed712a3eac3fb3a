"""Truncated signed distance field of the layout's free space.

Positive in free interior space (up to the truncation tau), negative inside
any semantic box or outside the room shell. Camera positions are drawn
proportionally to the positive part, which keeps them off surfaces and out
of objects.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError
from .scene import BackgroundPolygon, SemanticLayout, loop_order


def _box_sdf(points: np.ndarray, rotation: np.ndarray, translation: np.ndarray,
             size: np.ndarray) -> np.ndarray:
    """Signed distance to an oriented box surface: positive outside, negative inside."""
    local = (points - translation) @ rotation
    d = np.abs(local) - 0.5 * size
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(d.max(axis=-1), 0.0)
    return outside + inside


def _polygon_distance(points: np.ndarray, poly: BackgroundPolygon) -> np.ndarray:
    """Unsigned distance from points (M, 3) to a planar polygon."""
    n = poly.normal
    loop = loop_order(poly.edges)
    verts = poly.vertices[loop]
    v0 = verts[0]
    dplane = (points - v0) @ n
    proj = points - dplane[:, None] * n

    # 2D inside test in a plane basis.
    e1 = verts[1] - verts[0]
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    px, py = (proj - v0) @ e1, (proj - v0) @ e2
    loop2d = np.stack([(verts - v0) @ e1, (verts - v0) @ e2], axis=1)
    inside = np.zeros(points.shape[0], dtype=bool)
    m = loop2d.shape[0]
    for i in range(m):
        x1, y1 = loop2d[i]
        x2, y2 = loop2d[(i + 1) % m]
        if y1 == y2:
            continue
        inside ^= ((y1 > py) != (y2 > py)) & (px < (x2 - x1) * (py - y1) / (y2 - y1) + x1)

    dist = np.full(points.shape[0], np.inf)
    dist[inside] = np.abs(dplane[inside])
    outside = ~inside
    if outside.any():
        p_out = points[outside]
        best = np.full(p_out.shape[0], np.inf)
        for i in range(m):
            a, b = verts[i], verts[(i + 1) % m]
            ab = b - a
            tt = np.clip((p_out - a) @ ab / (ab @ ab), 0.0, 1.0)
            best = np.minimum(best, np.linalg.norm(p_out - (a + tt[:, None] * ab), axis=-1))
        dist[outside] = best
    return dist


def free_space_sdf(layout: SemanticLayout) -> Callable[[np.ndarray], np.ndarray]:
    """Exact signed distance to the free-space boundary (shell walls + box surfaces)."""
    triangles = layout.room.all_triangles()

    def sd(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        shell_dist = np.min(
            np.stack([_polygon_distance(points, p) for p in layout.room.polygons]), axis=0
        )
        from .scene import _parity_inside  # reuse the shell parity test

        sign = np.where(_parity_inside(points, triangles), 1.0, -1.0)
        value = sign * shell_dist
        for box in layout.boxes:
            value = np.minimum(value, _box_sdf(points, box.rotation, box.translation, box.size))
        return value

    return sd


@dataclass(frozen=True)
class TSDFGrid:
    origin: np.ndarray          # corner of the grid (min of the covered bbox)
    voxel: float
    dims: tuple[int, int, int]
    values: np.ndarray          # (nx, ny, nz) truncated signed distance, meters

    def centers(self) -> np.ndarray:
        """Voxel center positions, shape (nx*ny*nz, 3), C-order like values.ravel()."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.voxel

    def value_at_index(self, flat_index: int) -> float:
        return float(self.values.ravel()[flat_index])


def build_tsdf(layout: SemanticLayout, voxel: float, tau: float) -> TSDFGrid:
    """Sample the free-space SDF on a dense voxel grid covering the room bbox."""
    if voxel <= 0 or tau <= 0:
        raise ValidationError("tsdf: voxel and tau must be positive")
    lo, hi = layout.room.bounds()
    extent = hi - lo
    if np.any(extent <= 0):
        raise ValidationError("tsdf: degenerate room (zero volume)")
    dims = tuple(int(np.ceil(e / voxel)) for e in extent)
    grid = TSDFGrid(origin=lo, voxel=voxel, dims=dims,
                    values=np.zeros(dims))
    sd = free_space_sdf(layout)
    values = np.clip(sd(grid.centers()), -tau, tau).reshape(dims)
    return TSDFGrid(origin=lo, voxel=voxel, dims=dims, values=values)
