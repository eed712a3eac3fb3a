"""Pinhole cameras parameterized by position, elevation and azimuth.

World frame is z-up. The camera looks along
f = (cos(el)cos(az), cos(el)sin(az), sin(el)) with zero roll; camera space
is right-handed with +x right, +y down, +z forward, so depth is the
camera-space z coordinate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ParseError, ValidationError

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    elevation: float
    azimuth: float
    fov_y: float
    width: int
    height: int

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        if p.shape != (3,):
            raise ValidationError("camera: position must be a 3-vector")
        if not (0.0 < self.fov_y < math.pi):
            raise ValidationError(f"camera: fov {self.fov_y} outside (0, pi)")
        if self.width < 1 or self.height < 1:
            raise ValidationError("camera: width and height must be >= 1")
        object.__setattr__(self, "position", p)

    @property
    def forward(self) -> np.ndarray:
        ce, se = math.cos(self.elevation), math.sin(self.elevation)
        ca, sa = math.cos(self.azimuth), math.sin(self.azimuth)
        return np.array([ce * ca, ce * sa, se])

    def world_to_cam(self) -> np.ndarray:
        """Rotation with rows (right, down, forward): q_cam = R (p - position)."""
        f = self.forward
        r = np.cross(f, WORLD_UP)
        norm = np.linalg.norm(r)
        if norm < 1e-9:  # looking straight up/down; pick a stable right axis
            r = np.cross(f, np.array([1.0, 0.0, 0.0]))
            norm = np.linalg.norm(r)
        r = r / norm
        d = np.cross(f, r)
        return np.stack([r, d, f])

    @property
    def focal_px(self) -> float:
        return 0.5 * self.height / math.tan(0.5 * self.fov_y)

    def pixel_dirs(self) -> np.ndarray:
        """Camera-space ray directions with z=1 at pixel centers, shape (H, W, 3).

        With this parameterization the ray parameter t at an intersection is
        exactly the camera-space depth of the hit point.
        """
        f = self.focal_px
        cx, cy = 0.5 * self.width, 0.5 * self.height
        xs = (np.arange(self.width) + 0.5 - cx) / f
        ys = (np.arange(self.height) + 0.5 - cy) / f
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy, np.ones_like(gx)], axis=-1)

    def contains(self, points: np.ndarray, near: float = 1e-3) -> np.ndarray:
        """Frustum containment mask for world points (no far plane, no occlusion)."""
        q = (np.atleast_2d(points) - self.position) @ self.world_to_cam().T
        z = q[:, 2]
        tan_y = math.tan(0.5 * self.fov_y)
        tan_x = tan_y * self.width / self.height
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (z > near) & (np.abs(q[:, 0]) <= tan_x * z) & (np.abs(q[:, 1]) <= tan_y * z)
        return ok


def save_cameras(cameras: list[Camera], path: str | Path) -> None:
    """Text table: ``idx px py pz elev_rad azim_rad fov_rad W H`` per line."""
    lines = []
    for i, c in enumerate(cameras):
        px, py, pz = (float(v) for v in c.position)
        lines.append(
            f"{i} {px!r} {py!r} {pz!r} {float(c.elevation)!r} {float(c.azimuth)!r} "
            f"{float(c.fov_y)!r} {c.width} {c.height}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_cameras(path: str | Path) -> list[Camera]:
    cameras = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 9:
            raise ParseError(f"{path}:{lineno}: expected 9 fields, got {len(parts)}")
        try:
            vals = [float(v) for v in parts]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-numeric field") from exc
        cameras.append(
            Camera(
                position=np.array(vals[1:4]),
                elevation=vals[4],
                azimuth=vals[5],
                fov_y=vals[6],
                width=int(vals[7]),
                height=int(vals[8]),
            )
        )
    return cameras
