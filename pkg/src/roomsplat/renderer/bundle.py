"""Rendered map bundle and the gradient record mirroring scene parameters."""
from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from ..errors import ValidationError


@dataclass
class RenderBundle:
    """Co-registered rendered maps.

    I: (H, W, 3) RGB in [0, 1]; A: (H, W) opacity/coverage in [0, 1];
    S: (H, W, 3) semantic colors; N: (H, W, 3) camera-space unit normals
    (zero where nothing contributes); D: (H, W) depth in meters with +inf
    where nothing is hit. Object-pass I and S are plain front-to-back
    accumulations (premultiplied by coverage); D is coverage-normalized.
    """

    I: torch.Tensor
    A: torch.Tensor
    S: torch.Tensor
    N: torch.Tensor
    D: torch.Tensor

    @property
    def hw(self) -> tuple[int, int]:
        return int(self.A.shape[0]), int(self.A.shape[1])

    def detached(self) -> "RenderBundle":
        return RenderBundle(**{f.name: getattr(self, f.name).detach() for f in fields(self)})

    def numpy(self) -> dict:
        return {f.name: getattr(self, f.name).detach().cpu().numpy() for f in fields(self)}

    def validate(self, tol: float = 1e-3) -> None:
        """Check the bundle invariants (opacity range, unit normals, positive depth)."""
        a = self.A
        if float(a.min()) < -1e-9 or float(a.max()) > 1.0 + 1e-9:
            raise ValidationError("bundle: A outside [0, 1]")
        covered = a > tol
        if bool(covered.any()):
            norms = self.N[covered].norm(dim=-1)
            if float((norms - 1.0).abs().max()) > tol:
                raise ValidationError("bundle: non-unit normals where A > tol")
        finite = torch.isfinite(self.D)
        if bool(finite.any()) and float(self.D[finite].min()) <= 0:
            raise ValidationError("bundle: non-positive finite depth")


def empty_bundle(height: int, width: int, dtype=torch.float64) -> RenderBundle:
    return RenderBundle(
        I=torch.zeros(height, width, 3, dtype=dtype),
        A=torch.zeros(height, width, dtype=dtype),
        S=torch.zeros(height, width, 3, dtype=dtype),
        N=torch.zeros(height, width, 3, dtype=dtype),
        D=torch.full((height, width), float("inf"), dtype=dtype),
    )


@dataclass
class BundleGrads:
    """Upstream gradient images, one per rendered map (None means zero).

    Gradients on D must be zero wherever D is the +inf sentinel.
    """

    I: torch.Tensor | None = None
    A: torch.Tensor | None = None
    S: torch.Tensor | None = None
    N: torch.Tensor | None = None
    D: torch.Tensor | None = None


@dataclass
class ParamGradients:
    """Gradients for every optimizable scene parameter.

    Orientation gradients use the tangent (axis-angle displacement at the
    current rotation) parameterization, one 3-vector per primitive.
    """

    position: torch.Tensor
    orientation: torch.Tensor
    scale: torch.Tensor
    opacity: torch.Tensor
    color: torch.Tensor
    field_tables: torch.Tensor | None = None
    field_decoder_weight: torch.Tensor | None = None
    field_decoder_bias: torch.Tensor | None = None
