"""Initial canonical-space gaussians per box.

The upstream point-cloud generator is pluggable: procedural shape families
for tests and offline use, or a point-cloud file produced by any external
model. Only positions come from the source; orientations are random
rotations and scales follow a nearest-neighbor density heuristic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError
from .layout_io import load_point_cloud
from .palette import SemanticPalette, default_palette
from .scene import ObjectGaussians, SemanticBox, SemanticLayout

PROCEDURAL_FAMILIES = ("box-fill", "ellipsoid", "flat-slab")
SLAB_HEIGHT = 0.2  # canonical z-extent of the flat-slab family


@dataclass(frozen=True)
class InitSource:
    """Where initial positions come from: a procedural family or a file."""

    kind: str = "procedural"        # "procedural" | "file"
    family: str = "box-fill"
    count: int = 1000
    path: str | None = None         # for kind="file"
    max_points: int | None = None   # cap applied to file points

    def __post_init__(self):
        if self.kind not in ("procedural", "file"):
            raise ValidationError(f"init source: unknown kind {self.kind!r}")
        if self.kind == "procedural" and self.family not in PROCEDURAL_FAMILIES:
            raise ValidationError(f"init source: unknown family {self.family!r}")
        if self.count < 1:
            raise ValidationError("init source: point count must be >= 1")
        if self.kind == "file" and not self.path:
            raise ValidationError("init source: file source needs a path")


@dataclass(frozen=True)
class InitConfig:
    source_by_label: dict[str, InitSource] = field(default_factory=dict)
    default_source: InitSource = InitSource()
    scale_factor: float = 1.0       # k in scale = k * mean nearest-neighbor distance
    opacity: float = 0.8
    color: float = 0.5              # mid-gray
    palette: SemanticPalette | None = None

    def source_for(self, label: str) -> InitSource:
        return self.source_by_label.get(label, self.default_source)


def _procedural_positions(family: str, count: int, rng: np.random.Generator) -> np.ndarray:
    if family == "box-fill":
        return rng.uniform(-0.5, 0.5, size=(count, 3))
    if family == "ellipsoid":
        # Uniform in the unit ball scaled to half-extent 0.5 per axis.
        d = rng.standard_normal((count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        radius = rng.uniform(0.0, 1.0, size=(count, 1)) ** (1.0 / 3.0)
        return 0.5 * d * radius
    if family == "flat-slab":
        xy = rng.uniform(-0.5, 0.5, size=(count, 2))
        z = rng.uniform(-0.5 * SLAB_HEIGHT, 0.5 * SLAB_HEIGHT, size=(count, 1))
        return np.concatenate([xy, z], axis=1)
    raise ValidationError(f"unknown procedural family {family!r}")


def _fit_to_canonical(points: np.ndarray) -> np.ndarray:
    """Center and uniformly rescale so the largest axis spans exactly [-0.5, 0.5]."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = (hi - lo).max()
    if extent <= 0:
        return np.zeros_like(points)
    return (points - center) / extent


def _random_rotations(count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrices via normalized quaternions."""
    q = rng.standard_normal((count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((count, 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def mean_nn_distance(points: np.ndarray) -> float:
    if points.shape[0] < 2:
        return 0.1
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=2)
    return float(dist[:, 1].mean())


def init_object(box: SemanticBox, source: InitSource, seed: int,
                config: InitConfig | None = None) -> ObjectGaussians:
    """Canonical-space gaussians for one box, deterministic given seed."""
    config = config or InitConfig()
    palette = config.palette or default_palette()
    rng = np.random.default_rng(seed)

    if source.kind == "procedural":
        positions = _procedural_positions(source.family, source.count, rng)
    else:
        pts = load_point_cloud(Path(source.path))
        if source.max_points is not None and pts.shape[0] > source.max_points:
            idx = rng.choice(pts.shape[0], size=source.max_points, replace=False)
            idx.sort()
            pts = pts[idx]
        positions = _fit_to_canonical(pts)

    n = positions.shape[0]
    orientations = _random_rotations(n, rng)
    radius = max(config.scale_factor * mean_nn_distance(positions), 1e-4)
    scales = np.full((n, 2), radius)
    opacities = np.full(n, config.opacity)
    colors = np.full((n, 3), config.color)
    semantic = np.tile(palette.rgb_float(box.label), (n, 1))
    obj = ObjectGaussians(positions=positions, orientations=orientations, scales=scales,
                          opacities=opacities, colors=colors, semantic_colors=semantic)
    obj.check_canonical()
    return obj


def init_scene(layout: SemanticLayout, config: InitConfig | None = None,
               seed: int = 0) -> list[tuple[int, ObjectGaussians]]:
    """One (box index, gaussians) entry per layout box, in box order.

    Per-box seeds are derived from the master seed so the result does not
    depend on how many boxes precede a given one.
    """
    config = config or InitConfig()
    out = []
    for i, box in enumerate(layout.boxes):
        source = config.source_for(box.label)
        out.append((i, init_object(box, source, seed=seed * 100003 + i, config=config)))
    return out
