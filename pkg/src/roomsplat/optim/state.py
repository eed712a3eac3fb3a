"""Optimizable scene state and its versioned checkpoint format.

Stage 1 may touch only {position, orientation, scale, opacity}; stage 2 may
touch only {color, background field}. The split is structural: each stage
builds its optimizer from the corresponding parameter group and the other
group's digest is asserted unchanged around every run.

Checkpoints are deterministic custom binary blobs (magic ``L2S1``): numpy's
zip-based formats embed timestamps, which would break the bitwise
reproducibility contract.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import ParseError, ValidationError
from ..initializer import InitConfig, init_scene
from ..layout_io import layout_from_dict, layout_to_dict
from ..palette import SemanticPalette, default_palette
from ..renderer import BackgroundField, FieldConfig, GaussianBatch, exp_so3
from ..scene import ObjectGaussians, SemanticLayout

CHECKPOINT_MAGIC = b"L2S1"
CHECKPOINT_VERSION = 1

STAGE_INITIALIZED = 0
STAGE_GEOMETRY_DONE = 1
STAGE_APPEARANCE_DONE = 2


@dataclass
class ObjectTensors:
    """Canonical-space parameters of one object (torch leaves)."""

    box_index: int
    label: str
    positions: torch.Tensor   # (N, 3)
    rotations: torch.Tensor   # (N, 3, 3) base orientation, updated by baking
    rot_delta: torch.Tensor   # (N, 3) tangent parameter, zero between steps
    scales: torch.Tensor      # (N, 2)
    opacities: torch.Tensor   # (N,)
    colors: torch.Tensor      # (N, 3)
    semantics: torch.Tensor   # (N, 3) fixed palette colors

    def geometry_params(self) -> list[torch.Tensor]:
        return [self.positions, self.rot_delta, self.scales, self.opacities]

    def appearance_params(self) -> list[torch.Tensor]:
        return [self.colors]

    def bake_rotation(self) -> None:
        """Fold the tangent update into the base orientation and reset it."""
        with torch.no_grad():
            self.rotations = self.rotations @ exp_so3(self.rot_delta)
            self.rot_delta.zero_()

    def to_object_gaussians(self) -> ObjectGaussians:
        with torch.no_grad():
            rot = (self.rotations @ exp_so3(self.rot_delta)).double().numpy()
        # Re-orthonormalize against float drift before validation.
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        flip = np.linalg.det(rot) < 0
        if np.any(flip):
            u[flip, :, -1] *= -1
            rot = u @ vt
        return ObjectGaussians(
            positions=self.positions.detach().double().numpy(),
            orientations=rot,
            scales=self.scales.detach().double().numpy(),
            opacities=self.opacities.detach().double().numpy(),
            colors=self.colors.detach().double().numpy(),
            semantic_colors=self.semantics.detach().double().numpy(),
        )


@dataclass
class SceneState:
    layout: SemanticLayout
    palette: SemanticPalette
    objects: list[ObjectTensors]
    field: BackgroundField
    field_config: FieldConfig
    stage: int = STAGE_INITIALIZED

    @property
    def dtype(self):
        return self.objects[0].positions.dtype if self.objects else self.field.dtype

    def geometry_params(self) -> list[torch.Tensor]:
        return [p for o in self.objects for p in o.geometry_params()]

    def appearance_params(self) -> list[torch.Tensor]:
        return [p for o in self.objects for p in o.appearance_params()] + self.field.parameters()

    def world_batch(self, detach_geometry: bool = False,
                    detach_appearance: bool = False) -> GaussianBatch:
        """Concatenate all objects carried to world space, keeping the graph.

        The transform mirrors scene.to_world: positions stretch by the box
        size, orientations compose with the box rotation, and both disk radii
        scale by the geometric mean of the tangent-axis stretches.
        """
        pos_list, rot_list, scale_list, op_list, col_list, sem_list = [], [], [], [], [], []
        for obj in self.objects:
            box = self.layout.boxes[obj.box_index]
            dtype = obj.positions.dtype
            r_box = torch.as_tensor(box.rotation, dtype=dtype)
            t_box = torch.as_tensor(box.translation, dtype=dtype)
            size = torch.as_tensor(box.size, dtype=dtype)

            positions = obj.positions
            rot_delta = obj.rot_delta
            scales = obj.scales
            opacities = obj.opacities
            colors = obj.colors
            if detach_geometry:
                positions, rot_delta, scales, opacities = (
                    positions.detach(), rot_delta.detach(), scales.detach(),
                    opacities.detach(),
                )
            if detach_appearance:
                colors = colors.detach()

            r_eff = obj.rotations @ exp_so3(rot_delta)
            pos_list.append((positions * size) @ r_box.T + t_box)
            rot_list.append(torch.einsum("ij,njk->nik", r_box, r_eff))
            f_u = (r_eff[:, :, 0] * size).norm(dim=1)
            f_v = (r_eff[:, :, 1] * size).norm(dim=1)
            scale_list.append(scales * torch.sqrt(f_u * f_v)[:, None])
            op_list.append(opacities)
            col_list.append(colors)
            sem_list.append(obj.semantics)
        return GaussianBatch(
            positions=torch.cat(pos_list), rotations=torch.cat(rot_list),
            scales=torch.cat(scale_list), opacities=torch.cat(op_list),
            colors=torch.cat(col_list), semantics=torch.cat(sem_list),
        )

    def geometry_digest(self) -> str:
        h = hashlib.sha256()
        for obj in self.objects:
            for t in (obj.positions, obj.rotations, obj.rot_delta, obj.scales, obj.opacities):
                h.update(t.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def appearance_digest(self) -> str:
        h = hashlib.sha256()
        for obj in self.objects:
            h.update(obj.colors.detach().cpu().numpy().tobytes())
        for t in self.field.parameters():
            h.update(t.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def assert_finite(self) -> None:
        from ..errors import NumericalError

        for obj in self.objects:
            for name in ("positions", "rotations", "rot_delta", "scales", "opacities", "colors"):
                if not bool(torch.isfinite(getattr(obj, name)).all()):
                    raise NumericalError(f"object {obj.box_index}: non-finite {name}")
        for t in self.field.parameters():
            if not bool(torch.isfinite(t).all()):
                raise NumericalError("background field: non-finite parameters")

    def project_parameters(self) -> None:
        """Clamp parameters back into their domains after an optimizer step."""
        with torch.no_grad():
            for obj in self.objects:
                obj.positions.clamp_(-0.5, 0.5)
                obj.scales.clamp_(min=1e-5)
                obj.opacities.clamp_(0.0, 1.0)
                obj.colors.clamp_(0.0, 1.0)

    def prune_by_opacity(self, threshold: float) -> int:
        """Drop primitives below an opacity threshold; off by default everywhere.

        Keeps at least one primitive per object. Returns the number pruned.
        Not called during optimization (fixed primitive counts); offered for
        post-hoc cleanup of converged scenes.
        """
        pruned = 0
        with torch.no_grad():
            for obj in self.objects:
                keep = obj.opacities >= threshold
                if not bool(keep.any()):
                    keep[int(obj.opacities.argmax())] = True
                pruned += int((~keep).sum())
                for name in ("positions", "rotations", "rot_delta", "scales",
                             "opacities", "colors", "semantics"):
                    setattr(obj, name, getattr(obj, name)[keep].clone())
        return pruned


def initialize_state(layout: SemanticLayout, init_config: InitConfig | None = None,
                     field_config: FieldConfig | None = None, seed: int = 0,
                     palette: SemanticPalette | None = None,
                     dtype=torch.float32) -> SceneState:
    palette = palette or default_palette()
    init_config = init_config or InitConfig(palette=palette)
    field_config = field_config or FieldConfig()
    objects = []
    for box_index, gaussians in init_scene(layout, init_config, seed=seed):
        box = layout.boxes[box_index]
        objects.append(
            ObjectTensors(
                box_index=box_index,
                label=box.label,
                positions=torch.as_tensor(gaussians.positions, dtype=dtype),
                rotations=torch.as_tensor(gaussians.orientations, dtype=dtype),
                rot_delta=torch.zeros(len(gaussians), 3, dtype=dtype),
                scales=torch.as_tensor(gaussians.scales, dtype=dtype),
                opacities=torch.as_tensor(gaussians.opacities, dtype=dtype),
                colors=torch.as_tensor(gaussians.colors, dtype=dtype),
                semantics=torch.as_tensor(gaussians.semantic_colors, dtype=dtype),
            )
        )
    lo, hi = layout.room.bounds()
    margin = 1e-3 * (hi - lo)
    field = BackgroundField(field_config, lo - margin, hi + margin, dtype=dtype, seed=seed)
    return SceneState(layout=layout, palette=palette, objects=objects,
                      field=field, field_config=field_config, stage=STAGE_INITIALIZED)


_DTYPE_CODES = {"<f4": 0, "<f8": 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    dstr = arr.dtype.newbyteorder("<").str
    if dstr not in _DTYPE_CODES:
        arr = arr.astype("<f8")
        dstr = "<f8"
    name_b = name.encode("utf-8")
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<BB", _DTYPE_CODES[dstr], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(dstr).tobytes()


def _unpack_array(buf: bytes, offset: int) -> tuple[str, np.ndarray, int]:
    (nlen,) = struct.unpack_from("<H", buf, offset)
    offset += 2
    name = buf[offset:offset + nlen].decode("utf-8")
    offset += nlen
    code, ndim = struct.unpack_from("<BB", buf, offset)
    offset += 2
    shape = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    dtype = np.dtype(_CODE_DTYPES[code])
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape)
    return name, arr.copy(), offset + count * dtype.itemsize


def save_checkpoint(state: SceneState, path: str | Path) -> None:
    meta = {
        "layout": layout_to_dict(state.layout),
        "palette": [[label, list(rgb)] for label, rgb in state.palette.entries],
        "field_config": {
            "levels": state.field_config.levels,
            "features": state.field_config.features,
            "log2_table": state.field_config.log2_table,
            "base_resolution": state.field_config.base_resolution,
            "growth": state.field_config.growth,
        },
        "objects": [{"box_index": o.box_index, "label": o.label} for o in state.objects],
        "dtype": "f8" if state.dtype == torch.float64 else "f4",
    }
    blobs = []
    for i, obj in enumerate(state.objects):
        for name in ("positions", "rotations", "rot_delta", "scales",
                     "opacities", "colors", "semantics"):
            blobs.append(_pack_array(f"obj{i}.{name}",
                                     getattr(obj, name).detach().cpu().numpy()))
    for name, arr in state.field.state_arrays().items():
        blobs.append(_pack_array(f"field.{name}", np.asarray(arr)))

    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<IB", CHECKPOINT_VERSION, state.stage)
    out += struct.pack("<I", len(meta_b)) + meta_b
    out += struct.pack("<I", len(blobs))
    for b in blobs:
        out += b
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path) -> SceneState:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad checkpoint magic {buf[:4]!r}")
    version, stage = struct.unpack_from("<IB", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    offset = 9
    (meta_len,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    meta = json.loads(buf[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    (n_blobs,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_blobs):
        name, arr, offset = _unpack_array(buf, offset)
        arrays[name] = arr

    layout = layout_from_dict(meta["layout"], where=str(path))
    palette = SemanticPalette(tuple((label, tuple(rgb)) for label, rgb in meta["palette"]))
    dtype = torch.float64 if meta.get("dtype") == "f8" else torch.float32
    objects = []
    for i, spec in enumerate(meta["objects"]):
        def arr(name, i=i):
            key = f"obj{i}.{name}"
            if key not in arrays:
                raise ParseError(f"{path}: checkpoint missing array {key}")
            return torch.as_tensor(arrays[key], dtype=dtype)

        objects.append(
            ObjectTensors(
                box_index=int(spec["box_index"]), label=spec["label"],
                positions=arr("positions"), rotations=arr("rotations"),
                rot_delta=arr("rot_delta"), scales=arr("scales"),
                opacities=arr("opacities"), colors=arr("colors"),
                semantics=arr("semantics"),
            )
        )
    fc = meta["field_config"]
    field_config = FieldConfig(levels=int(fc["levels"]), features=int(fc["features"]),
                               log2_table=int(fc["log2_table"]),
                               base_resolution=int(fc["base_resolution"]),
                               growth=float(fc["growth"]))
    field = BackgroundField(field_config, arrays["field.aabb_min"], arrays["field.aabb_max"],
                            dtype=dtype)
    field.load_state_arrays({k.split(".", 1)[1]: v for k, v in arrays.items()
                             if k.startswith("field.")})
    # Stored tables may be f8 on disk; coerce to the state dtype.
    field.tables = field.tables.to(dtype)
    field.decoder_weight = field.decoder_weight.to(dtype)
    field.decoder_bias = field.decoder_bias.to(dtype)
    if stage not in (STAGE_INITIALIZED, STAGE_GEOMETRY_DONE, STAGE_APPEARANCE_DONE):
        raise ParseError(f"{path}: unknown stage marker {stage}")
    return SceneState(layout=layout, palette=palette, objects=objects, field=field,
                      field_config=field_config, stage=int(stage))
