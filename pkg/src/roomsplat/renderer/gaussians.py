"""Differentiable 2D-Gaussian disk splatting.

Each primitive is a planar Gaussian disk: center, tangent frame (third
column = disk normal), two tangent radii, opacity, color and semantic
color. Per pixel, the perspective ray is intersected with every disk
plane; the Gaussian is evaluated at the intersection in tangent
coordinates (hard cut at 3 sigma) and contributions are alpha-composited
front to back in disk-center depth order (one global order per view).

Two backends share the same binning and math. Training runs the dense
torch path: tiles batched into buckets, composited in depth-ordered
chunks with a running transmittance, differentiable end to end. Plain
rendering (no gradients, float32) dispatches to a compiled per-pixel
kernel with per-pixel early termination, parallel over tiles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..scene import ObjectGaussians
from .bundle import RenderBundle, empty_bundle
from .cameras import Camera
from .fast_splat import HAVE_NUMBA, bin_pairs_fast, splat_forward_fast


@dataclass(frozen=True)
class SplatOptions:
    tile: int = 16
    sigma_cut: float = 3.0
    alpha_clamp: float = 0.999   # per-contribution cap, keeps transmittance alive
    alpha_min: float = 1e-4      # contributions below this are dropped
    near: float = 0.05
    chunk: int = 0               # primitives per compositing chunk; 0 = auto-size
    bucket_tiles: int = 32       # tiles batched per bucket (torch path)
    early_stop_t: float = 1e-4   # stop once transmittance falls below (0 = exact)
    fast_tile: int = 32          # tile size for the compiled forward kernel
    normal_eps: float = 1e-12
    backend: str = "auto"        # auto | torch


DEFAULT_OPTS = SplatOptions()


def exp_so3(delta: torch.Tensor) -> torch.Tensor:
    """Rodrigues exponential of axis-angle vectors, series-safe at zero. (N,3)->(N,3,3)."""
    theta2 = (delta * delta).sum(dim=-1, keepdim=True)
    small = theta2 < 1e-12
    theta = torch.sqrt(torch.clamp(theta2, min=1e-24))
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / theta2.clamp(min=1e-24))
    dx, dy, dz = delta[:, 0], delta[:, 1], delta[:, 2]
    zeros = torch.zeros_like(dx)
    k = torch.stack(
        [zeros, -dz, dy, dz, zeros, -dx, -dy, dx, zeros], dim=-1
    ).reshape(-1, 3, 3)
    eye = torch.eye(3, dtype=delta.dtype, device=delta.device).expand_as(k)
    return eye + a[..., None] * k + b[..., None] * (k @ k)


@dataclass
class GaussianBatch:
    """World-space primitive tensors, optionally with autograd leaves.

    ``rot_delta`` is the tangent-space orientation parameter: the effective
    orientation is rotations @ exp_so3(rot_delta), so gradients on a zero
    rot_delta are the tangent orientation gradients.
    """

    positions: torch.Tensor    # (N, 3)
    rotations: torch.Tensor    # (N, 3, 3)
    scales: torch.Tensor       # (N, 2)
    opacities: torch.Tensor    # (N,)
    colors: torch.Tensor       # (N, 3)
    semantics: torch.Tensor    # (N, 3)
    rot_delta: torch.Tensor | None = None

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def dtype(self):
        return self.positions.dtype

    def effective_rotations(self) -> torch.Tensor:
        if self.rot_delta is None:
            return self.rotations
        return self.rotations @ exp_so3(self.rot_delta)

    def requires_grad(self) -> bool:
        tensors = [self.positions, self.rotations, self.scales, self.opacities,
                   self.colors, self.semantics]
        if self.rot_delta is not None:
            tensors.append(self.rot_delta)
        return any(t.requires_grad for t in tensors)

    @classmethod
    def from_objects(cls, objs: ObjectGaussians | list[ObjectGaussians],
                     dtype=torch.float32) -> "GaussianBatch":
        if isinstance(objs, ObjectGaussians):
            objs = [objs]
        def cat(name):
            return torch.cat([torch.as_tensor(getattr(o, name), dtype=dtype) for o in objs])
        return cls(
            positions=cat("positions"),
            rotations=cat("orientations"),
            scales=cat("scales"),
            opacities=cat("opacities"),
            colors=cat("colors"),
            semantics=cat("semantic_colors"),
        )


def _screen_bboxes(mean, e1, e2, focal, cx, cy, near, width, height):
    """Conservative per-primitive screen bounds of the 3-sigma disk.

    Exact route: the perspective image of the disk boundary is a conic; its
    dual is C* = P (m m^T - E E^T) P^T for a camera at the origin, and the
    axis-aligned extremes solve a quadratic in the dual form. Falls back to a
    projected-ball bound whenever the disk crosses the near plane (unbounded
    image). Returns (u_lo, u_hi, v_lo, v_hi) in float64.
    """
    m = mean.double()
    e1 = e1.double()
    e2 = e2.double()
    z = m[:, 2]

    # fallback: ball of radius |E| around the center, inflated by the off-axis
    # parallax term, evaluated at the nearest possible depth
    r_world = torch.sqrt((e1 * e1).sum(1) + (e2 * e2).sum(1))
    off_axis = torch.maximum(m[:, 0].abs(), m[:, 1].abs()) / z
    ball = focal * r_world * (1.0 + off_axis) / torch.clamp(z - r_world, min=near) + 0.5
    u0 = cx + focal * m[:, 0] / z
    v0 = cy + focal * m[:, 1] / z

    a_mat = (m[:, :, None] * m[:, None, :]
             - e1[:, :, None] * e1[:, None, :]
             - e2[:, :, None] * e2[:, None, :])
    p_mat = torch.tensor([[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]],
                         dtype=torch.float64)
    c = torch.einsum("ij,njk,lk->nil", p_mat, a_mat, p_mat)
    c00, c11, c22 = c[:, 0, 0], c[:, 1, 1], c[:, 2, 2]
    c02, c12 = c[:, 0, 2], c[:, 1, 2]
    disc_u = c02 * c02 - c00 * c22
    disc_v = c12 * c12 - c11 * c22
    z_min = z - torch.sqrt(e1[:, 2] ** 2 + e2[:, 2] ** 2)
    exact = (z_min > near) & (disc_u > 0) & (disc_v > 0) & (c22.abs() > 1e-12)

    c22_safe = torch.where(c22.abs() > 1e-12, c22, torch.ones_like(c22))
    su = torch.sqrt(torch.clamp(disc_u, min=0.0))
    sv = torch.sqrt(torch.clamp(disc_v, min=0.0))
    ua = (c02 - su) / c22_safe
    ub = (c02 + su) / c22_safe
    va = (c12 - sv) / c22_safe
    vb = (c12 + sv) / c22_safe
    margin = 0.51
    u_lo = torch.where(exact, torch.minimum(ua, ub) - margin, u0 - ball)
    u_hi = torch.where(exact, torch.maximum(ua, ub) + margin, u0 + ball)
    v_lo = torch.where(exact, torch.minimum(va, vb) - margin, v0 - ball)
    v_hi = torch.where(exact, torch.maximum(va, vb) + margin, v0 + ball)
    return u_lo, u_hi, v_lo, v_hi


def _bin_pairs(u_lo, u_hi, v_lo, v_hi, width, height, tile):
    """(tile, primitive) pair lists from per-primitive pixel rectangles."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    x_lo = torch.floor(u_lo / tile).clamp(0, tiles_x - 1).long()
    x_hi = torch.floor(u_hi / tile).clamp(0, tiles_x - 1).long()
    y_lo = torch.floor(v_lo / tile).clamp(0, tiles_y - 1).long()
    y_hi = torch.floor(v_hi / tile).clamp(0, tiles_y - 1).long()
    nx = x_hi - x_lo + 1
    counts = nx * (y_hi - y_lo + 1)
    total = int(counts.sum())
    prim = torch.repeat_interleave(torch.arange(counts.numel()), counts)
    starts = torch.cumsum(counts, 0) - counts
    local = torch.arange(total) - starts[prim]
    tx = x_lo[prim] + local % nx[prim]
    ty = y_lo[prim] + torch.div(local, nx[prim], rounding_mode="floor")
    tile_id = ty * tiles_x + tx

    order = torch.argsort(tile_id, stable=True)  # stable: preserves depth order
    return prim[order], tile_id[order], tiles_x, tiles_y


def _finalize(img_a, img_dnum, img_i, img_s, img_n, height, width, opts):
    a_img = img_a.reshape(height, width)
    covered = a_img > 0
    denom = torch.where(covered, a_img, torch.ones_like(a_img))
    # I and S stay premultiplied (plain front-to-back accumulation); D is the
    # coverage-normalized expected depth; N is unit-normalized below.
    i_img = img_i.reshape(height, width, 3)
    s_img = img_s.reshape(height, width, 3)
    d_img = torch.where(
        covered, img_dnum.reshape(height, width) / denom,
        torch.full_like(a_img, float("inf")),
    )
    n_raw = img_n.reshape(height, width, 3)
    n_norm = n_raw.norm(dim=-1, keepdim=True)
    n_img = torch.where(n_norm > opts.normal_eps, n_raw / n_norm.clamp(min=opts.normal_eps),
                        torch.zeros_like(n_raw))
    return RenderBundle(I=i_img, A=a_img, S=s_img, N=n_img, D=d_img)


def splat_gaussians(batch: GaussianBatch, cam: Camera,
                    opts: SplatOptions = DEFAULT_OPTS) -> RenderBundle:
    """Render world-space primitives into an objects-only bundle."""
    height, width = cam.height, cam.width
    dtype = batch.dtype
    if len(batch) == 0:
        return empty_bundle(height, width, dtype)

    r_wc = torch.as_tensor(cam.world_to_cam(), dtype=dtype)
    campos = torch.as_tensor(cam.position, dtype=dtype)
    focal = cam.focal_px
    cx, cy = 0.5 * width, 0.5 * height

    p_cam = (batch.positions - campos) @ r_wc.T            # (N, 3)
    r_cam = torch.einsum("ij,njk->nik", r_wc, batch.effective_rotations())

    z = p_cam[:, 2]
    front = z > opts.near
    if not bool(front.any()):
        return empty_bundle(height, width, dtype)

    with torch.no_grad():
        frames_front = r_cam[front]
        scales_front = batch.scales[front]
        u_lo, u_hi, v_lo, v_hi = _screen_bboxes(
            p_cam[front],
            opts.sigma_cut * scales_front[:, 0:1] * frames_front[:, :, 0],
            opts.sigma_cut * scales_front[:, 1:2] * frames_front[:, :, 1],
            focal, cx, cy, opts.near, width, height,
        )
        on_screen = (u_hi > 0) & (u_lo < width) & (v_hi > 0) & (v_lo < height)

    front_idx = torch.nonzero(front, as_tuple=False).squeeze(1)
    keep = front_idx[on_screen]
    if keep.numel() == 0:
        return empty_bundle(height, width, dtype)

    # One global blend order per view: stable sort by disk-center depth.
    order = torch.argsort(z[keep], stable=True)
    keep = keep[order]

    # Per-primitive camera-space data in blend order.
    mean = p_cam[keep]                      # (M, 3)
    frame = r_cam[keep]                     # (M, 3, 3)
    t_u, t_v, nrm = frame[:, :, 0], frame[:, :, 1], frame[:, :, 2]
    flip = torch.where((nrm * mean).sum(dim=1) > 0, -1.0, 1.0).to(dtype).detach()
    nrm = nrm * flip[:, None]
    alpha = batch.opacities[keep]
    color = batch.colors[keep]
    semantic = batch.semantics[keep]

    # Precombine plane quantities: with a_u = (p.n t_u - p.t_u n)/s_u the ray
    # intersection's tangent coordinate is (d.a_u)/(d.n), so per pixel only
    # three dot products with the ray direction are needed.
    pn = (mean * nrm).sum(-1, keepdim=True)                # (M, 1)
    a_u = (pn * t_u - (mean * t_u).sum(-1, keepdim=True) * nrm) / batch.scales[keep, 0:1]
    a_v = (pn * t_v - (mean * t_v).sum(-1, keepdim=True) * nrm) / batch.scales[keep, 1:2]

    needs_grad = torch.is_grad_enabled() and batch.requires_grad()
    sig2 = opts.sigma_cut * opts.sigma_cut
    use_fast = (HAVE_NUMBA and opts.backend == "auto" and not needs_grad
                and dtype == torch.float32)
    with torch.no_grad():
        rect = [t[on_screen][order] for t in (u_lo, u_hi, v_lo, v_hi)]

    if use_fast:
        prim_arrays = {
            "pn": pn.squeeze(1).detach().numpy().astype(np.float32),
            "nrm": nrm.detach().numpy().astype(np.float32),
            "a_u": a_u.detach().numpy().astype(np.float32),
            "a_v": a_v.detach().numpy().astype(np.float32),
            "u_lo": rect[0].numpy().astype(np.float32),
            "u_hi": rect[1].numpy().astype(np.float32),
            "v_lo": rect[2].numpy().astype(np.float32),
            "v_hi": rect[3].numpy().astype(np.float32),
            "alpha": alpha.detach().numpy().astype(np.float32),
            "color": color.detach().numpy().astype(np.float32),
            "semantic": semantic.detach().numpy().astype(np.float32),
        }
        np_prim, np_starts, np_counts, tiles_x, _ = bin_pairs_fast(
            prim_arrays["u_lo"], prim_arrays["u_hi"], prim_arrays["v_lo"],
            prim_arrays["v_hi"], width, height, opts.fast_tile,
        )
        if np_prim.size == 0:
            return empty_bundle(height, width, dtype)
        flat = splat_forward_fast(
            np_prim, np_starts, np_counts, tiles_x,
            opts.fast_tile, width, height, focal, cx, cy, prim_arrays,
            opts.near, opts.alpha_min, opts.alpha_clamp, sig2, opts.early_stop_t,
        )
        img_a, img_dnum, img_i, img_s, img_n = (torch.from_numpy(x) for x in flat)
        return _finalize(img_a, img_dnum, img_i, img_s, img_n, height, width, opts)

    with torch.no_grad():
        pair_prim, pair_tile, tiles_x, tiles_y = _bin_pairs(
            rect[0], rect[1], rect[2], rect[3], width, height, opts.tile
        )
        if pair_prim.numel() == 0:
            return empty_bundle(height, width, dtype)
        tile_counts = torch.bincount(pair_tile, minlength=tiles_x * tiles_y)
        tile_starts = torch.cumsum(tile_counts, 0) - tile_counts

    nonempty = torch.nonzero(tile_counts, as_tuple=False).squeeze(1)
    by_count = nonempty[torch.argsort(-tile_counts[nonempty], stable=True)]
    t_ix = torch.arange(opts.tile)
    gy, gx = torch.meshgrid(t_ix, t_ix, indexing="ij")
    gx = gx.reshape(-1)
    gy = gy.reshape(-1)

    img_i = torch.zeros(height * width, 3, dtype=dtype)
    img_s = torch.zeros(height * width, 3, dtype=dtype)
    img_n = torch.zeros(height * width, 3, dtype=dtype)
    img_a = torch.zeros(height * width, dtype=dtype)
    img_dnum = torch.zeros(height * width, dtype=dtype)

    total_pairs = int(pair_prim.numel())
    tile_px = opts.tile * opts.tile
    chunk = opts.chunk if opts.chunk > 0 else int(
        np.clip((2_000_000 // (opts.bucket_tiles * tile_px) + 31) // 32 * 32, 32, 512)
    )
    for b0 in range(0, int(by_count.numel()), opts.bucket_tiles):
        tiles = by_count[b0:b0 + opts.bucket_tiles]
        b = int(tiles.numel())
        m = int(tile_counts[tiles].max())
        with torch.no_grad():
            slot = torch.arange(m)
            gathered = (tile_starts[tiles, None] + slot[None, :]).clamp(max=total_pairs - 1)
            valid = slot[None, :] < tile_counts[tiles, None]
            prim_mat = pair_prim[gathered]                 # (B, M)

            ty = torch.div(tiles, tiles_x, rounding_mode="floor")
            tx = tiles - ty * tiles_x
            px = tx[:, None] * opts.tile + gx[None, :]     # (B, P)
            py = ty[:, None] * opts.tile + gy[None, :]
            in_img = (px < width) & (py < height)
            pix_flat = (torch.minimum(py, torch.tensor(height - 1)) * width
                        + torch.minimum(px, torch.tensor(width - 1)))
            dirs = torch.stack(
                [
                    (torch.minimum(px, torch.tensor(width - 1)).to(dtype) + 0.5 - cx) / focal,
                    (torch.minimum(py, torch.tensor(height - 1)).to(dtype) + 0.5 - cy) / focal,
                    torch.ones(b, px.shape[1], dtype=dtype),
                ],
                dim=-1,
            )                                              # (B, P, 3)
        dirs_t = dirs.transpose(1, 2)                      # (B, 3, P)

        p = px.shape[1]
        # Out-of-image pixels start saturated so they never hold a tile open.
        t_run = in_img.to(dtype)
        a_acc = torch.zeros(b, p, dtype=dtype)
        d_acc = torch.zeros(b, p, dtype=dtype)
        i_acc = torch.zeros(b, p, 3, dtype=dtype)
        s_acc = torch.zeros(b, p, 3, dtype=dtype)
        n_acc = torch.zeros(b, p, 3, dtype=dtype)
        in_img_rows = in_img
        prim_rows, valid_rows, counts_rows = prim_mat, valid, tile_counts[tiles]
        pix_rows = pix_flat

        def flush(rows_idx, a, d, i_t, s_t, n_t, img_mask):
            nonlocal img_a, img_dnum, img_i, img_s, img_n
            keep_px = img_mask.reshape(-1)
            flat = pix_rows[rows_idx].reshape(-1)[keep_px]
            img_a = img_a.index_add(0, flat, a.reshape(-1)[keep_px])
            img_dnum = img_dnum.index_add(0, flat, d.reshape(-1)[keep_px])
            img_i = img_i.index_add(0, flat, i_t.reshape(-1, 3)[keep_px])
            img_s = img_s.index_add(0, flat, s_t.reshape(-1, 3)[keep_px])
            img_n = img_n.index_add(0, flat, n_t.reshape(-1, 3)[keep_px])

        rows = torch.arange(b)                             # original row ids, for pixels
        for m0 in range(0, m, chunk):
            with torch.no_grad():
                still = counts_rows > m0                   # rows with pairs left
                if opts.early_stop_t > 0:
                    still &= t_run.detach().max(dim=1).values >= opts.early_stop_t
            if not bool(still.all()):
                done = ~still
                flush(rows[done], a_acc[done], d_acc[done], i_acc[done], s_acc[done],
                      n_acc[done], in_img_rows[done])
                rows = rows[still]
                if rows.numel() == 0:
                    break
                t_run, a_acc, d_acc = t_run[still], a_acc[still], d_acc[still]
                i_acc, s_acc, n_acc = i_acc[still], s_acc[still], n_acc[still]
                in_img_rows = in_img_rows[still]
                prim_rows, valid_rows = prim_rows[still], valid_rows[still]
                counts_rows = counts_rows[still]
                dirs_t = dirs_t[still]

            prim = prim_rows[:, m0:m0 + chunk]             # (R, K)
            mask = valid_rows[:, m0:m0 + chunk]
            dn = torch.bmm(nrm[prim], dirs_t)              # (R, K, P)
            dau = torch.bmm(a_u[prim], dirs_t)
            dav = torch.bmm(a_v[prim], dirs_t)
            dn_ok = dn.abs() > 1e-12
            dn_safe = torch.where(dn_ok, dn, torch.ones_like(dn))
            inv_dn = 1.0 / dn_safe
            tau = pn[prim] * inv_dn
            lu = dau * inv_dn
            lv = dav * inv_dn
            r2 = lu * lu + lv * lv

            live = dn_ok & (tau > opts.near) & (r2 <= sig2) & mask[..., None]
            if not bool(in_img_rows.all()):
                live = live & in_img_rows[:, None, :]
            w = torch.clamp(alpha[prim][..., None] * torch.exp(-0.5 * r2),
                            max=opts.alpha_clamp)
            w = torch.where(live & (w >= opts.alpha_min), w, torch.zeros_like(w))

            t_incl = torch.cumprod(1.0 - w, dim=1)
            t_excl = torch.cat([torch.ones_like(t_incl[:, :1]), t_incl[:, :-1]], dim=1)
            contrib = (t_run[:, None, :] * t_excl) * w     # (R, K, P)

            a_acc = a_acc + contrib.sum(dim=1)
            d_acc = d_acc + (contrib * torch.where(live, tau, torch.zeros_like(tau))).sum(dim=1)
            contrib_t = contrib.transpose(1, 2)
            i_acc = i_acc + torch.bmm(contrib_t, color[prim])
            s_acc = s_acc + torch.bmm(contrib_t, semantic[prim])
            n_acc = n_acc + torch.bmm(contrib_t, nrm[prim])
            t_run = t_run * t_incl[:, -1, :]

        if rows.numel():
            flush(rows, a_acc, d_acc, i_acc, s_acc, n_acc, in_img_rows)

    return _finalize(img_a, img_dnum, img_i, img_s, img_n, height, width, opts)
