#!/usr/bin/env python3
"""Render-throughput benchmark: 10k surface disks at 256x256.

Reports per-frame times for the compiled fast path and the differentiable
torch path. The soft performance gate is a < 100 ms median for the fast
path on a desktop CPU.
"""
import argparse
import time

import numpy as np
import torch

from roomsplat.renderer import Camera, SplatOptions, splat_gaussians
from roomsplat.synthetic import surface_disk_scene


def bench(batch, cam, opts, frames=9):
    with torch.no_grad():
        splat_gaussians(batch, cam, opts)  # warmup / jit compile
        times = []
        for _ in range(frames):
            t0 = time.perf_counter()
            splat_gaussians(batch, cam, opts)
            times.append((time.perf_counter() - t0) * 1000)
    times.sort()
    return times


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--primitives", type=int, default=10_000)
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--frames", type=int, default=9)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    batch = surface_disk_scene(args.primitives, seed=args.seed)
    cam = Camera(position=np.array([2.0, 4.5, 1.4]), elevation=-0.15, azimuth=-1.57,
                 fov_y=1.05, width=args.size, height=args.size)
    for label, opts in (("fast (compiled, parallel tiles)", SplatOptions()),
                        ("torch (differentiable path)", SplatOptions(backend="torch"))):
        times = bench(batch, cam, opts, args.frames)
        median = times[len(times) // 2]
        print(f"{label}: median {median:.1f} ms  "
              f"min {times[0]:.1f}  max {times[-1]:.1f}  "
              f"({1000.0 / median:.1f} frames/s)")


if __name__ == "__main__":
    main()
