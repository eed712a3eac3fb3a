"""Synthetic scenes for benchmarks and desk-scale fixtures."""
from __future__ import annotations

import numpy as np
import torch

from .layout_io import layout_from_dict
from .renderer import GaussianBatch
from .scene import SemanticLayout


def two_box_layout_dict() -> dict:
    return {
        "scene_prompt": "a toy room",
        "room": [
            {"label": "floor", "vertices": [[0, 0, 0], [3, 0, 0], [3, 3, 0], [0, 3, 0]]},
            {"label": "ceiling", "vertices": [[0, 0, 2.2], [0, 3, 2.2], [3, 3, 2.2], [3, 0, 2.2]]},
            {"label": "wall", "vertices": [[0, 0, 0], [0, 0, 2.2], [3, 0, 2.2], [3, 0, 0]]},
            {"label": "wall", "vertices": [[0, 3, 0], [3, 3, 0], [3, 3, 2.2], [0, 3, 2.2]]},
            {"label": "wall", "vertices": [[0, 0, 0], [0, 3, 0], [0, 3, 2.2], [0, 0, 2.2]]},
            {"label": "wall", "vertices": [[3, 0, 0], [3, 0, 2.2], [3, 3, 2.2], [3, 3, 0]]},
        ],
        "boxes": [
            {"label": "bed", "euler_zyx_deg": [0, 0, 0],
             "translation": [1.1, 1.5, 0.25], "size": [1.4, 1.0, 0.5]},
            {"label": "table", "euler_zyx_deg": [0, 0, 0],
             "translation": [2.3, 1.6, 0.4], "size": [0.7, 0.7, 0.8]},
        ],
    }


def two_box_layout() -> SemanticLayout:
    return layout_from_dict(two_box_layout_dict())


def surface_disk_scene(n: int, seed: int = 0, sigma_factor: float = 0.5,
                       opacity_range: tuple[float, float] = (0.85, 1.0),
                       dtype=torch.float32) -> GaussianBatch:
    """Converged-scene stand-in: opaque disks lying on room and box surfaces.

    Disks sit flat on the walls/floor/ceiling of a 4x5x2.7 room and on the
    faces of two furniture-sized boxes, with radii around half the mean point
    spacing, which is what optimized surfel scenes look like.
    """
    rng = np.random.default_rng(seed)
    surfaces = [
        ([0, 0, 0], [4, 0, 0], [0, 5, 0], [0, 0, 1]),
        ([0, 0, 2.7], [4, 0, 0], [0, 5, 0], [0, 0, -1]),
        ([0, 0, 0], [4, 0, 0], [0, 0, 2.7], [0, 1, 0]),
        ([0, 5, 0], [4, 0, 0], [0, 0, 2.7], [0, -1, 0]),
        ([0, 0, 0], [0, 5, 0], [0, 0, 2.7], [1, 0, 0]),
        ([4, 0, 0], [0, 5, 0], [0, 0, 2.7], [-1, 0, 0]),
    ]
    for center, size in (((2.0, 1.2, 0.3), (1.6, 2.0, 0.6)),
                         ((0.45, 4.0, 1.0), (0.65, 1.8, 2.0))):
        c = np.asarray(center)
        s = np.asarray(size)
        for axis in range(3):
            for sign in (-1, 1):
                e1 = np.zeros(3)
                e2 = np.zeros(3)
                nrm = np.zeros(3)
                a2, a3 = (axis + 1) % 3, (axis + 2) % 3
                e1[a2] = s[a2]
                e2[a3] = s[a3]
                nrm[axis] = sign
                origin = c - 0.5 * (e1 + e2)
                origin[axis] = c[axis] + sign * 0.5 * s[axis]
                surfaces.append((origin.tolist(), e1.tolist(), e2.tolist(), nrm.tolist()))

    areas = np.array([np.linalg.norm(np.cross(e1, e2)) for _, e1, e2, _ in surfaces])
    counts = rng.multinomial(n, areas / areas.sum())
    points, normals = [], []
    for (origin, e1, e2, nrm), k in zip(surfaces, counts):
        uv = rng.uniform(0, 1, (k, 2))
        points.append(np.asarray(origin, float) + uv[:, :1] * np.asarray(e1, float)
                      + uv[:, 1:] * np.asarray(e2, float))
        normals.append(np.tile(np.asarray(nrm, float), (k, 1)))
    points = np.concatenate(points)
    normals = np.concatenate(normals)

    t1 = np.cross(normals, np.where(np.abs(normals[:, :1]) < 0.9, [1.0, 0, 0], [0, 1.0, 0]))
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    rotations = np.stack([t1, t2, normals], axis=-1)
    sigma = np.sqrt(areas.sum() / n) * sigma_factor
    m = points.shape[0]
    return GaussianBatch(
        positions=torch.as_tensor(points, dtype=dtype),
        rotations=torch.as_tensor(rotations, dtype=dtype),
        scales=torch.as_tensor(rng.uniform(0.8, 1.2, (m, 2)) * sigma, dtype=dtype),
        opacities=torch.as_tensor(rng.uniform(*opacity_range, m), dtype=dtype),
        colors=torch.as_tensor(rng.uniform(0, 1, (m, 3)), dtype=dtype),
        semantics=torch.as_tensor(rng.uniform(0, 1, (m, 3)), dtype=dtype),
    )
