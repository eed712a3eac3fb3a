"""Layout-aware camera sampling and coverage diagnostics.

Positions are drawn from the normalized positive part of the layout TSDF
(free space only, with probability growing with clearance); orientations
are drawn from normal distributions fitted to the per-box viewing angles
seen from the sampled position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .renderer.cameras import Camera
from .scene import SemanticLayout
from .tsdf import TSDFGrid, build_tsdf, free_space_sdf

ELEVATION_MARGIN = 1e-3  # keep sampled elevation strictly inside (-pi/2, pi/2)


@dataclass(frozen=True)
class CameraSamplerConfig:
    voxel: float = 0.1
    tau: float = 1.0
    fov_y_deg: float = 60.0
    width: int = 64
    height: int = 64
    sigma_min_deg: float = 5.0
    jitter_tries: int = 16


@dataclass(frozen=True)
class CameraDistribution:
    """Normalized position probabilities over free voxels."""

    grid: TSDFGrid
    flat_indices: np.ndarray   # indices into grid.values.ravel() with p > 0
    probabilities: np.ndarray  # same length, sums to 1

    def probability_grid(self) -> np.ndarray:
        p = np.zeros(self.grid.values.size)
        p[self.flat_indices] = self.probabilities
        return p.reshape(self.grid.values.shape)


def position_distribution(grid: TSDFGrid) -> CameraDistribution:
    """p(voxel) = max(0, tsdf) / sum(max(0, tsdf)); occupied voxels get zero."""
    flat = grid.values.ravel()
    positive = np.maximum(flat, 0.0)
    total = positive.sum()
    if total <= 0:
        raise ValidationError("camera sampling: no free space (all TSDF values <= 0)")
    idx = np.nonzero(positive > 0)[0]
    return CameraDistribution(grid=grid, flat_indices=idx,
                              probabilities=positive[idx] / total)


def orientation_statistics(layout: SemanticLayout, x: np.ndarray
                           ) -> tuple[float, float, float, float]:
    """(mean_elev, std_elev, circ_mean_azim, std_azim) of the box directions from x.

    Azimuth statistics are circular: the mean is the resultant angle and the
    deviation is measured on wrapped differences from it, so boxes straddling
    the +-pi seam behave correctly.
    """
    x = np.asarray(x, dtype=np.float64)
    centers = np.stack([b.translation for b in layout.boxes])
    v = centers - x
    norms = np.linalg.norm(v, axis=1)
    ok = norms > 1e-9
    if not ok.any():
        raise ValidationError("camera sampling: position coincides with every box center")
    v = v[ok] / norms[ok, None]
    elev = np.arcsin(np.clip(v[:, 2], -1.0, 1.0))
    azim = np.arctan2(v[:, 1], v[:, 0])

    mean_elev = float(elev.mean())
    std_elev = float(np.sqrt(np.mean((elev - mean_elev) ** 2)))
    mean_azim = float(math.atan2(np.sin(azim).mean(), np.cos(azim).mean()))
    wrapped = (azim - mean_azim + math.pi) % (2.0 * math.pi) - math.pi
    std_azim = float(np.sqrt(np.mean(wrapped**2)))
    return mean_elev, std_elev, mean_azim, std_azim


def sample_orientation(layout: SemanticLayout, x: np.ndarray, rng: np.random.Generator,
                       sigma_min: float = math.radians(5.0)) -> tuple[float, float]:
    """Draw (elevation, azimuth) in radians for a camera at x."""
    mean_elev, std_elev, mean_azim, std_azim = orientation_statistics(layout, x)
    elev = rng.normal(mean_elev, max(std_elev, sigma_min))
    azim = rng.normal(mean_azim, max(std_azim, sigma_min))
    limit = 0.5 * math.pi - ELEVATION_MARGIN
    return float(np.clip(elev, -limit, limit)), float(azim)


class CameraSampler:
    """Seeded sampler bundling the TSDF grid, distribution and orientation stats."""

    def __init__(self, layout: SemanticLayout, config: CameraSamplerConfig | None = None,
                 seed: int = 0, grid: TSDFGrid | None = None):
        self.layout = layout
        self.config = config or CameraSamplerConfig()
        self.grid = grid if grid is not None else build_tsdf(
            layout, self.config.voxel, self.config.tau
        )
        self.distribution = position_distribution(self.grid)
        self.sdf = free_space_sdf(layout)
        self.rng = np.random.default_rng(seed)
        self._sigma_min = math.radians(self.config.sigma_min_deg)
        self._centers = self.grid.centers()

    def sample_position(self) -> np.ndarray:
        """Voxel draw from the TSDF distribution plus in-voxel jitter.

        The jitter is rejected (bounded tries) if it lands on a non-positive
        SDF value, falling back to the voxel center, whose TSDF is positive
        by construction.
        """
        dist = self.distribution
        choice = self.rng.choice(dist.flat_indices.size, p=dist.probabilities)
        flat = dist.flat_indices[choice]
        center = self._centers[flat]
        for _ in range(self.config.jitter_tries):
            x = center + self.rng.uniform(-0.5, 0.5, 3) * self.grid.voxel
            if float(self.sdf(x)[0]) > 0:
                return x
        return center

    def sample_positions(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized batch of position draws; returns (positions, voxel choices).

        Same distribution and rejection rule as sample_position, drawn as
        batches for diagnostics that need many samples.
        """
        dist = self.distribution
        choices = self.rng.choice(dist.flat_indices.size, size=n, p=dist.probabilities)
        centers = self._centers[dist.flat_indices[choices]]
        out = centers.copy()
        pending = np.arange(n)
        for _ in range(self.config.jitter_tries):
            if pending.size == 0:
                break
            jitter = self.rng.uniform(-0.5, 0.5, (pending.size, 3)) * self.grid.voxel
            candidate = centers[pending] + jitter
            good = self.sdf(candidate) > 0
            out[pending[good]] = candidate[good]
            pending = pending[~good]
        return out, choices

    def sample(self, n: int) -> list[Camera]:
        if n < 1:
            raise ValidationError("camera sampling: n must be >= 1")
        cfg = self.config
        fov = math.radians(cfg.fov_y_deg)
        cams = []
        for _ in range(n):
            x = self.sample_position()
            elev, azim = sample_orientation(self.layout, x, self.rng, self._sigma_min)
            cams.append(Camera(position=x, elevation=elev, azimuth=azim,
                               fov_y=fov, width=cfg.width, height=cfg.height))
        return cams


def sample_cameras(layout: SemanticLayout, n: int, config: CameraSamplerConfig | None = None,
                   seed: int = 0) -> list[Camera]:
    """n layout-aware cameras, deterministic given seed."""
    return CameraSampler(layout, config, seed=seed).sample(n)


@dataclass(frozen=True)
class CoverageReport:
    n_cameras: int
    per_box_visibility: tuple[int, ...]   # cameras whose frustum contains each box center
    free_voxel_coverage: float            # fraction of free voxels in >= 1 frustum
    min_camera_clearance: float           # min SDF value over camera positions
    extras: dict = field(default_factory=dict)


def coverage_report(cameras: list[Camera], layout: SemanticLayout,
                    grid: TSDFGrid) -> CoverageReport:
    centers = np.stack([b.translation for b in layout.boxes])
    box_counts = np.zeros(len(layout.boxes), dtype=int)
    free_mask = grid.values.ravel() > 0
    free_centers = grid.centers()[free_mask]
    covered = np.zeros(free_centers.shape[0], dtype=bool)
    clearance = math.inf
    sdf = free_space_sdf(layout)
    for cam in cameras:
        box_counts += cam.contains(centers)
        if free_centers.size:
            covered |= cam.contains(free_centers)
        clearance = min(clearance, float(sdf(cam.position)[0]))
    coverage = float(covered.mean()) if covered.size else 0.0
    return CoverageReport(
        n_cameras=len(cameras),
        per_box_visibility=tuple(int(c) for c in box_counts),
        free_voxel_coverage=coverage,
        min_camera_clearance=clearance if cameras else math.inf,
    )
