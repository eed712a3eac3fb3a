"""Domain types for semantic layouts and the hybrid object/background scene.

A scene is specified by oriented semantic boxes inside a closed polygonal
room shell. Objects live as 2D-Gaussian disk sets in a canonical unit cube
and are carried into world space by their box transform.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .palette import SemanticPalette

ROTATION_TOL = 1e-6
COPLANAR_TOL = 1e-5
SHELL_WELD_TOL = 1e-6

# Fixed, slightly irrational ray direction for parity tests so axis-aligned
# shells never produce edge-grazing intersections.
_PARITY_DIR = np.array([0.2137151, 0.5611723, 0.7996391])
_PARITY_DIR = _PARITY_DIR / np.linalg.norm(_PARITY_DIR)


def check_rotation(matrix: np.ndarray, what: str) -> np.ndarray:
    """Validate a 3x3 orthonormal right-handed rotation to ROTATION_TOL."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValidationError(f"{what}: rotation must be 3x3, got {m.shape}")
    err = np.abs(m.T @ m - np.eye(3)).max()
    if err > ROTATION_TOL:
        raise ValidationError(f"{what}: rotation not orthonormal (max error {err:.2e})")
    det = np.linalg.det(m)
    if abs(det - 1.0) > ROTATION_TOL:
        raise ValidationError(f"{what}: rotation determinant {det:.6f} != +1 (reflection?)")
    return m


def euler_zyx_deg_to_matrix(angles_deg: Sequence[float]) -> np.ndarray:
    """Intrinsic z-y-x Euler angles in degrees to a rotation matrix (Rz @ Ry @ Rx)."""
    az, ay, ax = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    cz, sz = np.cos(az), np.sin(az)
    cy, sy = np.cos(ay), np.sin(ay)
    cx, sx = np.cos(ax), np.sin(ax)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rz @ ry @ rx


@dataclass(frozen=True)
class SemanticBox:
    """Oriented bounding box with a category label and optional object prompt.

    ``size`` holds full edge lengths in meters; the box maps the centered
    canonical unit cube [-0.5, 0.5]^3 through rotation @ diag(size) + translation.
    """

    rotation: np.ndarray
    translation: np.ndarray
    size: np.ndarray
    label: str
    object_prompt: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation, f"box {self.label!r}"))
        t = np.asarray(self.translation, dtype=np.float64)
        s = np.asarray(self.size, dtype=np.float64)
        if t.shape != (3,):
            raise ValidationError(f"box {self.label!r}: translation must be a 3-vector")
        if s.shape != (3,) or not np.all(s > 0):
            raise ValidationError(f"box {self.label!r}: size components must be positive, got {s}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "size", s)

    def corners(self) -> np.ndarray:
        """The 8 world-space corners, shape (8, 3)."""
        half = 0.5 * self.size
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        return (signs * half) @ self.rotation.T + self.translation

    def contains(self, points: np.ndarray, pad: float = 0.0) -> np.ndarray:
        """Boolean mask of points inside the (optionally padded) box."""
        local = (np.atleast_2d(points) - self.translation) @ self.rotation
        return np.all(np.abs(local) <= 0.5 * self.size + pad, axis=-1)


@dataclass(frozen=True)
class BackgroundPolygon:
    """Planar polygon (wall/floor/ceiling) given by a closed vertex loop."""

    vertices: np.ndarray
    edges: np.ndarray
    label: str

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        e = np.asarray(self.edges, dtype=np.int64)
        n = v.shape[0]
        if v.ndim != 2 or v.shape[1] != 3 or n < 3:
            raise ValidationError(f"polygon {self.label!r}: vertices must be Nx3 with N >= 3")
        if e.shape != (n, 2):
            raise ValidationError(f"polygon {self.label!r}: edges must be Nx2")
        # Single closed loop: every vertex has degree 2 and the walk visits all.
        counts = np.zeros(n, dtype=int)
        for a, b in e:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ValidationError(f"polygon {self.label!r}: bad edge ({a}, {b})")
            counts[a] += 1
            counts[b] += 1
        if not np.all(counts == 2):
            raise ValidationError(f"polygon {self.label!r}: edges do not form a closed loop")
        centered = v - v.mean(axis=0)
        _, sing, vt = np.linalg.svd(centered, full_matrices=False)
        normal = vt[-1]
        dist = np.abs(centered @ normal).max()
        if dist > COPLANAR_TOL:
            raise ValidationError(
                f"polygon {self.label!r}: vertices not coplanar (max deviation {dist:.2e} m)"
            )
        if sing[1] < 1e-12:
            raise ValidationError(f"polygon {self.label!r}: degenerate (collinear vertices)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "edges", e)

    @property
    def normal(self) -> np.ndarray:
        """Unit plane normal (orientation not canonicalized; renderers flip per view)."""
        centered = self.vertices - self.vertices.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        n = vt[-1]
        return n / np.linalg.norm(n)

    def triangles(self) -> np.ndarray:
        """Fan triangulation in loop order, shape (N-2, 3, 3)."""
        loop = loop_order(self.edges)
        pts = self.vertices[loop]
        return np.stack([np.stack([pts[0], pts[i], pts[i + 1]]) for i in range(1, len(pts) - 1)])


def loop_order(edges: np.ndarray) -> list[int]:
    """Vertex indices walked along the closed edge loop, starting at index 0."""
    adj: dict[int, list[int]] = {}
    for a, b in np.asarray(edges):
        adj.setdefault(int(a), []).append(int(b))
        adj.setdefault(int(b), []).append(int(a))
    order = [0]
    prev = None
    while True:
        nxt = [v for v in adj[order[-1]] if v != prev]
        if not nxt:
            raise ValidationError("edge loop is broken")
        prev = order[-1]
        order.append(nxt[0])
        if order[-1] == 0:
            return order[:-1]
        if len(order) > len(adj) + 1:
            raise ValidationError("edge loop does not close over all vertices")


def polygon_quad(vertices: Iterable[Sequence[float]], label: str) -> BackgroundPolygon:
    """Polygon from a vertex loop, edges derived as consecutive pairs."""
    v = np.asarray(list(vertices), dtype=np.float64)
    n = v.shape[0]
    edges = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    return BackgroundPolygon(vertices=v, edges=edges, label=label)


@dataclass(frozen=True)
class RoomShell:
    """Closed shell of background polygons (watertight at SHELL_WELD_TOL)."""

    polygons: tuple[BackgroundPolygon, ...]

    def __post_init__(self):
        polys = tuple(self.polygons)
        if not polys:
            raise ValidationError("room shell: no polygons")
        edge_count: dict[tuple, int] = {}
        for poly in polys:
            for a, b in poly.edges:
                ka = tuple(np.round(poly.vertices[a] / SHELL_WELD_TOL).astype(np.int64))
                kb = tuple(np.round(poly.vertices[b] / SHELL_WELD_TOL).astype(np.int64))
                key = (min(ka, kb), max(ka, kb))
                edge_count[key] = edge_count.get(key, 0) + 1
        bad = [k for k, c in edge_count.items() if c != 2]
        if bad:
            raise ValidationError(
                f"room shell: {len(bad)} edge(s) not shared by exactly two polygons (open shell)"
            )
        object.__setattr__(self, "polygons", polys)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        allv = np.concatenate([p.vertices for p in self.polygons], axis=0)
        return allv.min(axis=0), allv.max(axis=0)

    def all_triangles(self) -> np.ndarray:
        return np.concatenate([p.triangles() for p in self.polygons], axis=0)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Parity (ray-crossing) inside test for an array of points, shape (M,)."""
        return _parity_inside(np.atleast_2d(np.asarray(points, dtype=np.float64)),
                              self.all_triangles())


def _parity_inside(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Count ray/triangle crossings along a fixed direction; odd means inside."""
    orig = points[:, None, :]                      # (M,1,3)
    v0 = triangles[None, :, 0, :]                  # (1,K,3)
    e1 = (triangles[:, 1] - triangles[:, 0])[None]
    e2 = (triangles[:, 2] - triangles[:, 0])[None]
    d = _PARITY_DIR
    pvec = np.cross(d, e2)
    det = np.sum(e1 * pvec, axis=-1)
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = orig - v0
    u = np.sum(tvec * pvec, axis=-1) * inv
    qvec = np.cross(tvec, e1)
    v = np.sum(qvec * d, axis=-1) * inv
    t = np.sum(qvec * e2, axis=-1) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
    return (hit.sum(axis=1) % 2) == 1


@dataclass(frozen=True)
class SemanticLayout:
    """Input contract: semantic boxes + room shell + scene/style prompts."""

    boxes: tuple[SemanticBox, ...]
    room: RoomShell
    scene_prompt: str
    style_prompt: str | None = None

    def __post_init__(self):
        boxes = tuple(self.boxes)
        if not boxes:
            raise ValidationError("layout: needs at least one box")
        centers = np.stack([b.translation for b in boxes])
        inside = self.room.contains(centers)
        if not np.all(inside):
            offenders = [boxes[i].label for i in np.nonzero(~inside)[0]]
            raise ValidationError(f"layout: box center(s) outside room shell: {offenders}")
        object.__setattr__(self, "boxes", boxes)


@dataclass(frozen=True)
class ObjectGaussians:
    """Per-primitive disk records for one object.

    positions are canonical unit-cube coordinates until :func:`to_world`
    carries them through a box; orientation columns are the two tangent axes
    and the disk normal; scale holds the two tangent-plane radii.
    """

    positions: np.ndarray       # (N, 3)
    orientations: np.ndarray    # (N, 3, 3)
    scales: np.ndarray          # (N, 2)
    opacities: np.ndarray       # (N,)
    colors: np.ndarray          # (N, 3)
    semantic_colors: np.ndarray  # (N, 3)

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        r = np.asarray(self.orientations, dtype=np.float64)
        s = np.asarray(self.scales, dtype=np.float64)
        a = np.asarray(self.opacities, dtype=np.float64)
        c = np.asarray(self.colors, dtype=np.float64)
        t = np.asarray(self.semantic_colors, dtype=np.float64)
        n = p.shape[0]
        shapes = {
            "positions": (p, (n, 3)), "orientations": (r, (n, 3, 3)),
            "scales": (s, (n, 2)), "opacities": (a, (n,)),
            "colors": (c, (n, 3)), "semantic_colors": (t, (n, 3)),
        }
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise ValidationError(f"gaussians: {name} shape {arr.shape}, expected {want}")
        if n == 0:
            raise ValidationError("gaussians: empty primitive set")
        if not np.all(s > 0):
            raise ValidationError("gaussians: scale components must be positive")
        if np.any(a < 0) or np.any(a > 1):
            raise ValidationError("gaussians: opacity outside [0, 1]")
        err = np.abs(np.einsum("nij,nik->njk", r, r) - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise ValidationError(f"gaussians: orientations not orthonormal (max error {err:.2e})")
        for name, (arr, _) in shapes.items():
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def check_canonical(self) -> None:
        """Assert positions lie in the canonical cube (pre-to_world invariant)."""
        if np.any(np.abs(self.positions) > 0.5 + 1e-9):
            raise ValidationError("gaussians: canonical positions outside [-0.5, 0.5]^3")

    @property
    def normals(self) -> np.ndarray:
        return self.orientations[:, :, 2]


def to_world(obj: ObjectGaussians, box: SemanticBox) -> ObjectGaussians:
    """Carry canonical-space gaussians through a semantic box into world space.

    position' = R (size * position) + t and orientation' = R orientation.
    A disk cannot shear, so both tangent radii are multiplied by the geometric
    mean of the anisotropic stretch along the two tangent axes; this is exact
    whenever size is isotropic or the disk is axis-aligned with equal spans.
    """
    r, t, s = box.rotation, box.translation, box.size
    positions = (obj.positions * s) @ r.T + t
    orientations = np.einsum("ij,njk->nik", r, obj.orientations)
    f_u = np.linalg.norm(obj.orientations[:, :, 0] * s, axis=1)
    f_v = np.linalg.norm(obj.orientations[:, :, 1] * s, axis=1)
    factor = np.sqrt(f_u * f_v)
    scales = obj.scales * factor[:, None]
    return replace(obj, positions=positions, orientations=orientations, scales=scales)


def semantics_consistent(obj: ObjectGaussians, palette: SemanticPalette, label: str) -> bool:
    """True if every primitive carries exactly the palette color of ``label``."""
    want = palette.rgb_float(label)
    return bool(np.all(obj.semantic_colors == want))
