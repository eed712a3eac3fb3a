"""Compiled forward splatting kernel (no gradients).

Same math as the torch path: per pixel, depth-ordered front-to-back
compositing of ray-disk Gaussian contributions. Tiles run in parallel and
each pixel is owned by exactly one tile, so the result is deterministic
regardless of thread scheduling. Pairs are walked in depth order over a
tile-local transmittance buffer, touching only the pixels inside each
disk's screen rectangle; the tile stops as soon as every pixel saturates.
"""
from __future__ import annotations

import math

import numpy as np

try:
    from numba import get_num_threads, njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore
        def deco(f):
            return f
        return deco

    prange = range  # type: ignore

    def get_num_threads():  # type: ignore
        return 1


@njit(parallel=True, fastmath=True, cache=True)
def _splat_kernel(pair_prim, tile_starts, tile_counts, tile_order, tiles_x, tile,
                  width, height, focal, cx, cy, pn, nrm, a_u, a_v,
                  u_lo, u_hi, v_lo, v_hi, alpha, color, semantic,
                  near, alpha_min, alpha_clamp, sig2, stop_t,
                  img_a, img_d, img_i, img_s, img_n):
    n_tiles = tile_order.shape[0]
    dead_t = stop_t if stop_t > 0.0 else np.float32(-1.0)
    for oi in prange(n_tiles):
        t = tile_order[oi]
        cnt = tile_counts[t]
        if cnt == 0:
            continue
        start = tile_starts[t]
        ty = t // tiles_x
        tx = t - ty * tiles_x
        px0 = tx * tile
        py0 = ty * tile
        w_lim = min(tile, width - px0)
        h_lim = min(tile, height - py0)
        if w_lim <= 0 or h_lim <= 0:
            continue

        trans = np.ones((h_lim, w_lim), dtype=np.float32)
        acc = np.zeros((h_lim, w_lim, 11), dtype=np.float32)
        alive = h_lim * w_lim
        xs = np.empty(w_lim, dtype=np.float32)   # per-tile ray coordinates
        for lx in range(w_lim):
            xs[lx] = (px0 + lx + 0.5 - cx) / focal
        ys = np.empty(h_lim, dtype=np.float32)
        for ly in range(h_lim):
            ys[ly] = (py0 + ly + 0.5 - cy) / focal

        for k in range(start, start + cnt):
            p = pair_prim[k]
            # pixel centers at px+0.5 inside [u_lo, u_hi] x [v_lo, v_hi]
            y_a = max(py0, int(math.ceil(v_lo[p] - 0.5)))
            y_b = min(py0 + h_lim - 1, int(math.floor(v_hi[p] - 0.5)))
            if y_b < y_a:
                continue
            x_a = max(px0, int(math.ceil(u_lo[p] - 0.5)))
            x_b = min(px0 + w_lim - 1, int(math.floor(u_hi[p] - 0.5)))
            if x_b < x_a:
                continue
            npx = nrm[p, 0]; npy = nrm[p, 1]; npz = nrm[p, 2]
            aux = a_u[p, 0]; auy = a_u[p, 1]; auz = a_u[p, 2]
            avx = a_v[p, 0]; avy = a_v[p, 1]; avz = a_v[p, 2]
            pnp = pn[p]
            al = alpha[p]
            for py in range(y_a, y_b + 1):
                ly = py - py0
                dy = ys[ly]
                for px in range(x_a, x_b + 1):
                    lx = px - px0
                    trans_here = trans[ly, lx]
                    if trans_here < dead_t:
                        continue
                    dx = xs[lx]
                    dn = dx * npx + dy * npy + npz
                    if abs(dn) <= 1e-12:
                        continue
                    inv = 1.0 / dn
                    tau = pnp * inv
                    if tau <= near:
                        continue
                    lu = (dx * aux + dy * auy + auz) * inv
                    lv = (dx * avx + dy * avy + avz) * inv
                    r2 = lu * lu + lv * lv
                    if r2 > sig2:
                        continue
                    w = al * math.exp(-0.5 * r2)
                    if w > alpha_clamp:
                        w = alpha_clamp
                    if w < alpha_min:
                        continue
                    c = trans_here * w
                    acc[ly, lx, 0] += c
                    acc[ly, lx, 1] += c * tau
                    acc[ly, lx, 2] += c * color[p, 0]
                    acc[ly, lx, 3] += c * color[p, 1]
                    acc[ly, lx, 4] += c * color[p, 2]
                    acc[ly, lx, 5] += c * semantic[p, 0]
                    acc[ly, lx, 6] += c * semantic[p, 1]
                    acc[ly, lx, 7] += c * semantic[p, 2]
                    acc[ly, lx, 8] += c * npx
                    acc[ly, lx, 9] += c * npy
                    acc[ly, lx, 10] += c * npz
                    new_t = trans_here * (1.0 - w)
                    trans[ly, lx] = new_t
                    if new_t < dead_t:
                        alive -= 1
                if alive <= 0:
                    break
            if alive <= 0:
                break

        for ly in range(h_lim):
            row = (py0 + ly) * width
            for lx in range(w_lim):
                idx = row + px0 + lx
                img_a[idx] = acc[ly, lx, 0]
                img_d[idx] = acc[ly, lx, 1]
                img_i[idx, 0] = acc[ly, lx, 2]
                img_i[idx, 1] = acc[ly, lx, 3]
                img_i[idx, 2] = acc[ly, lx, 4]
                img_s[idx, 0] = acc[ly, lx, 5]
                img_s[idx, 1] = acc[ly, lx, 6]
                img_s[idx, 2] = acc[ly, lx, 7]
                img_n[idx, 0] = acc[ly, lx, 8]
                img_n[idx, 1] = acc[ly, lx, 9]
                img_n[idx, 2] = acc[ly, lx, 10]


@njit(cache=True)
def _bin_kernel(u_lo, u_hi, v_lo, v_hi, tiles_x, tiles_y, tile):
    """Depth-ordered (tile, prim) pair lists; prims must already be depth-sorted.

    Two passes: count pairs per tile, then fill segments walking primitives in
    order, which preserves the global depth order inside every tile segment.
    """
    n = u_lo.shape[0]
    counts = np.zeros(tiles_x * tiles_y, dtype=np.int64)
    for p in range(n):
        x_a = max(int(np.floor(u_lo[p] / tile)), 0)
        x_b = min(int(np.floor(u_hi[p] / tile)), tiles_x - 1)
        y_a = max(int(np.floor(v_lo[p] / tile)), 0)
        y_b = min(int(np.floor(v_hi[p] / tile)), tiles_y - 1)
        for ty in range(y_a, y_b + 1):
            for tx in range(x_a, x_b + 1):
                counts[ty * tiles_x + tx] += 1
    starts = np.zeros(tiles_x * tiles_y, dtype=np.int64)
    total = 0
    for t in range(counts.shape[0]):
        starts[t] = total
        total += counts[t]
    pair_prim = np.empty(total, dtype=np.int64)
    cursor = starts.copy()
    for p in range(n):
        x_a = max(int(np.floor(u_lo[p] / tile)), 0)
        x_b = min(int(np.floor(u_hi[p] / tile)), tiles_x - 1)
        y_a = max(int(np.floor(v_lo[p] / tile)), 0)
        y_b = min(int(np.floor(v_hi[p] / tile)), tiles_y - 1)
        for ty in range(y_a, y_b + 1):
            for tx in range(x_a, x_b + 1):
                t = ty * tiles_x + tx
                pair_prim[cursor[t]] = p
                cursor[t] += 1
    return pair_prim, starts, counts


def bin_pairs_fast(u_lo: np.ndarray, u_hi: np.ndarray, v_lo: np.ndarray,
                   v_hi: np.ndarray, width: int, height: int, tile: int):
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    pair_prim, starts, counts = _bin_kernel(
        u_lo.astype(np.float32), u_hi.astype(np.float32),
        v_lo.astype(np.float32), v_hi.astype(np.float32), tiles_x, tiles_y, tile,
    )
    return pair_prim, starts, counts, tiles_x, tiles_y


def _balanced_order(tile_counts: np.ndarray, threads: int) -> np.ndarray:
    """Tile order that spreads heavy tiles evenly across static thread chunks."""
    nonempty = np.nonzero(tile_counts)[0]
    by_count = nonempty[np.argsort(-tile_counts[nonempty], kind="stable")]
    threads = max(threads, 1)
    lanes: list[list[int]] = [[] for _ in range(threads)]
    loads = np.zeros(threads, dtype=np.int64)
    for t in by_count:
        lane = int(loads.argmin())
        lanes[lane].append(int(t))
        loads[lane] += int(tile_counts[t])
    out = [t for lane in lanes for t in lane]
    return np.asarray(out, dtype=np.int64)


def splat_forward_fast(pair_prim: np.ndarray, tile_starts: np.ndarray,
                       tile_counts: np.ndarray, tiles_x: int, tile: int,
                       width: int, height: int, focal: float, cx: float, cy: float,
                       prim_arrays: dict, near: float, alpha_min: float,
                       alpha_clamp: float, sig2: float, stop_t: float):
    """Run the compiled kernel; returns flat accumulation images (numpy f32)."""
    img_a = np.zeros(height * width, dtype=np.float32)
    img_d = np.zeros(height * width, dtype=np.float32)
    img_i = np.zeros((height * width, 3), dtype=np.float32)
    img_s = np.zeros((height * width, 3), dtype=np.float32)
    img_n = np.zeros((height * width, 3), dtype=np.float32)
    order = _balanced_order(tile_counts, get_num_threads())
    if order.size:
        _splat_kernel(
            pair_prim, tile_starts, tile_counts, order, tiles_x, tile, width, height,
            np.float32(focal), np.float32(cx), np.float32(cy),
            prim_arrays["pn"], prim_arrays["nrm"], prim_arrays["a_u"], prim_arrays["a_v"],
            prim_arrays["u_lo"], prim_arrays["u_hi"], prim_arrays["v_lo"],
            prim_arrays["v_hi"],
            prim_arrays["alpha"], prim_arrays["color"], prim_arrays["semantic"],
            np.float32(near), np.float32(alpha_min), np.float32(alpha_clamp),
            np.float32(sig2), np.float32(stop_t),
            img_a, img_d, img_i, img_s, img_n,
        )
    return img_a, img_d, img_i, img_s, img_n
