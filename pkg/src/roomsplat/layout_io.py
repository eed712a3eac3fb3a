"""Layout file I/O and simple geometry builders.

Layout files are JSON documents with ``scene_prompt``, optional
``style_prompt``, ``room`` (list of labeled vertex loops) and ``boxes``
(rotation as a row-major 9-array or ``euler_zyx_deg``, translation, size,
label, optional prompt). Point clouds are plain ``x y z`` text lines.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ParseError, ValidationError
from .scene import (
    BackgroundPolygon,
    RoomShell,
    SemanticBox,
    SemanticLayout,
    euler_zyx_deg_to_matrix,
    polygon_quad,
)


def load_layout(path: str | Path) -> SemanticLayout:
    """Parse and validate a layout file; raises ParseError or ValidationError."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return layout_from_dict(doc, where=str(path))


def layout_from_dict(doc: dict[str, Any], where: str = "<dict>") -> SemanticLayout:
    scene_prompt = doc.get("scene_prompt")
    if not isinstance(scene_prompt, str) or not scene_prompt:
        raise ParseError(f"{where}: missing or empty 'scene_prompt'")
    style_prompt = doc.get("style_prompt")
    if style_prompt is not None and not isinstance(style_prompt, str):
        raise ParseError(f"{where}: 'style_prompt' must be a string")

    room_spec = doc.get("room")
    if not isinstance(room_spec, list) or not room_spec:
        raise ParseError(f"{where}: 'room' must be a non-empty list of polygons")
    polys = []
    for i, p in enumerate(room_spec):
        label = p.get("label")
        verts = p.get("vertices")
        if not isinstance(label, str) or verts is None:
            raise ParseError(f"{where}: room polygon {i}: needs 'label' and 'vertices'")
        try:
            polys.append(polygon_quad(np.asarray(verts, dtype=np.float64), label))
        except (ValueError, TypeError) as exc:
            raise ParseError(f"{where}: room polygon {i} ({label!r}): bad vertices: {exc}") from exc
    room = RoomShell(tuple(polys))

    boxes_spec = doc.get("boxes")
    if not isinstance(boxes_spec, list) or not boxes_spec:
        raise ParseError(f"{where}: 'boxes' must be a non-empty list")
    boxes = []
    for i, b in enumerate(boxes_spec):
        label = b.get("label")
        if not isinstance(label, str):
            raise ParseError(f"{where}: box {i}: missing 'label'")
        rotation = _parse_rotation(b, f"{where}: box {i} ({label!r})")
        for key in ("translation", "size"):
            if key not in b:
                raise ParseError(f"{where}: box {i} ({label!r}): missing '{key}'")
        boxes.append(
            SemanticBox(
                rotation=rotation,
                translation=np.asarray(b["translation"], dtype=np.float64),
                size=np.asarray(b["size"], dtype=np.float64),
                label=label,
                object_prompt=b.get("prompt"),
            )
        )
    return SemanticLayout(boxes=tuple(boxes), room=room,
                          scene_prompt=scene_prompt, style_prompt=style_prompt)


def _parse_rotation(spec: dict[str, Any], what: str) -> np.ndarray:
    has_mat = "rotation" in spec
    has_euler = "euler_zyx_deg" in spec
    if has_mat == has_euler:
        raise ParseError(f"{what}: give exactly one of 'rotation' or 'euler_zyx_deg'")
    if has_mat:
        flat = np.asarray(spec["rotation"], dtype=np.float64)
        if flat.shape != (9,):
            raise ParseError(f"{what}: 'rotation' must be a row-major 9-array")
        return flat.reshape(3, 3)
    angles = np.asarray(spec["euler_zyx_deg"], dtype=np.float64)
    if angles.shape != (3,):
        raise ParseError(f"{what}: 'euler_zyx_deg' must be a 3-array")
    return euler_zyx_deg_to_matrix(angles)


def layout_to_dict(layout: SemanticLayout) -> dict[str, Any]:
    doc: dict[str, Any] = {"scene_prompt": layout.scene_prompt}
    if layout.style_prompt is not None:
        doc["style_prompt"] = layout.style_prompt
    doc["room"] = [
        {"label": p.label, "vertices": p.vertices.tolist()} for p in layout.room.polygons
    ]
    doc["boxes"] = []
    for b in layout.boxes:
        entry: dict[str, Any] = {
            "label": b.label,
            "rotation": b.rotation.reshape(-1).tolist(),
            "translation": b.translation.tolist(),
            "size": b.size.tolist(),
        }
        if b.object_prompt is not None:
            entry["prompt"] = b.object_prompt
        doc["boxes"].append(entry)
    return doc


def save_layout(layout: SemanticLayout, path: str | Path) -> None:
    Path(path).write_text(json.dumps(layout_to_dict(layout), indent=2) + "\n", encoding="utf-8")


def load_point_cloud(path: str | Path) -> np.ndarray:
    """Text point cloud, one ``x y z`` triple per line, meters; shape (N, 3)."""
    points = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"{path}:{lineno}: expected 'x y z', got {raw!r}")
        try:
            points.append([float(v) for v in parts])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-numeric coordinate in {raw!r}") from exc
    if not points:
        raise ValidationError(f"{path}: empty point cloud")
    return np.asarray(points, dtype=np.float64)


def box_room(width: float, depth: float, height: float,
             origin: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> RoomShell:
    """Axis-aligned rectangular room shell: floor, ceiling and four walls."""
    ox, oy, oz = origin
    x0, x1 = ox, ox + width
    y0, y1 = oy, oy + depth
    z0, z1 = oz, oz + height
    floor = [(x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0)]
    ceil = [(x0, y0, z1), (x0, y1, z1), (x1, y1, z1), (x1, y0, z1)]
    wall_s = [(x0, y0, z0), (x0, y0, z1), (x1, y0, z1), (x1, y0, z0)]
    wall_n = [(x0, y1, z0), (x1, y1, z0), (x1, y1, z1), (x0, y1, z1)]
    wall_w = [(x0, y0, z0), (x0, y1, z0), (x0, y1, z1), (x0, y0, z1)]
    wall_e = [(x1, y0, z0), (x1, y0, z1), (x1, y1, z1), (x1, y1, z0)]
    return RoomShell(tuple(
        polygon_quad(v, label)
        for v, label in [(floor, "floor"), (ceil, "ceiling"), (wall_s, "wall"),
                         (wall_n, "wall"), (wall_w, "wall"), (wall_e, "wall")]
    ))
