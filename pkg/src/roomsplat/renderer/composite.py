"""Depth-aware fusion of object and background renderings.

Per pixel and per map R in {I, S, N, D}:

    R = A * R_o + (1 - A) * R_b   if D_o <= D_b
    R = R_b                       otherwise

with the composited normal re-normalized and the output opacity forced to 1
wherever the (opaque) background was hit. Depth sentinels (+inf) are
replaced by 0 inside the blend so a vacuous side contributes nothing; a
pixel with neither objects nor background keeps the +inf sentinel.
"""
from __future__ import annotations

import numpy as np
import torch

from ..errors import ValidationError
from .bundle import RenderBundle


class _ExactSqrt(torch.autograd.Function):
    """Correctly-rounded IEEE sqrt (numpy forward, analytic backward).

    torch's vectorized sqrt can be one ulp off the correctly-rounded result,
    which would break the bit-exact scalar re-evaluation of this fusion rule.
    """

    @staticmethod
    def forward(ctx, x):
        out = torch.from_numpy(np.sqrt(x.detach().cpu().numpy()))
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved_tensors
        return grad * 0.5 / out.clamp(min=1e-150)


def composite(obj: RenderBundle, bg: RenderBundle) -> RenderBundle:
    if obj.hw != bg.hw:
        raise ValidationError(f"composite: resolution mismatch {obj.hw} vs {bg.hw}")

    a = obj.A
    take_obj = obj.D <= bg.D  # inf <= inf counts as the object branch
    blend = lambda ro, rb: a[..., None] * ro + (1.0 - a)[..., None] * rb

    i_out = torch.where(take_obj[..., None], blend(obj.I, bg.I), bg.I)
    s_out = torch.where(take_obj[..., None], blend(obj.S, bg.S), bg.S)

    n_blend = torch.where(take_obj[..., None], blend(obj.N, bg.N), bg.N)
    # explicit mul/sum/sqrt keeps the arithmetic mirrorable by a scalar oracle
    norm = _ExactSqrt.apply((n_blend * n_blend).sum(dim=-1, keepdim=True))
    n_out = torch.where(norm > 1e-12, n_blend / norm.clamp(min=1e-12),
                        torch.zeros_like(n_blend))

    d_o = torch.where(torch.isfinite(obj.D), obj.D, torch.zeros_like(obj.D))
    d_b = torch.where(torch.isfinite(bg.D), bg.D, torch.zeros_like(bg.D))
    d_out = torch.where(take_obj, a * d_o + (1.0 - a) * d_b, bg.D)
    neither = (a == 0) & ~torch.isfinite(bg.D)
    d_out = torch.where(neither, torch.full_like(d_out, float("inf")), d_out)

    a_out = torch.where(torch.isfinite(bg.D), torch.ones_like(a), a)
    return RenderBundle(I=i_out, A=a_out, S=s_out, N=n_out, D=d_out)
