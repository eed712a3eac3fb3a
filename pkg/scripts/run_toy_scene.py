#!/usr/bin/env python3
"""End-to-end toy run: two-box layout, analytic providers, both stages.

Writes checkpoints, preview renders and a metrics report under --out.
This is the same setup the acceptance suite uses, exposed as a script so
the convergence behavior is easy to poke at interactively.
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from roomsplat.diffusion import (AffineTarget, AnalyticScoreProvider, Stage,
                                 make_schedule)
from roomsplat.initializer import InitConfig, InitSource
from roomsplat.layout_io import save_layout
from roomsplat.metrics import compute_metrics, render_state_bundle
from roomsplat.imgio import save_depth_preview, save_normal_png, save_rgb_png
from roomsplat.optim import (LayoutOracleConditionSource, StageConfig, initialize_state,
                             run_stage1, run_stage2, save_checkpoint)
from roomsplat.renderer import FieldConfig
from roomsplat.synthetic import two_box_layout
from roomsplat.view_sampling import CameraSampler, CameraSamplerConfig


def previews(state, cam_cfg, out_dir: Path, tag: str, n=4, seed=777) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cams = CameraSampler(state.layout, cam_cfg, seed=seed).sample(n)
    for i, cam in enumerate(cams):
        bundle = render_state_bundle(state, cam).numpy()
        save_rgb_png(bundle["I"], out_dir / f"{tag}_{i}_rgb.png")
        save_rgb_png(bundle["S"], out_dir / f"{tag}_{i}_semantic.png")
        save_normal_png(bundle["N"], out_dir / f"{tag}_{i}_normal.png")
        save_depth_preview(bundle["D"], out_dir / f"{tag}_{i}_depth.png")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/toy"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--stage1-steps", type=int, default=200)
    parser.add_argument("--stage2-steps", type=int, default=400)
    parser.add_argument("--points", type=int, default=2000)
    args = parser.parse_args()

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    layout = two_box_layout()
    save_layout(layout, out / "layout.json")
    schedule = make_schedule(1000, "cosine")
    cam_cfg = CameraSamplerConfig(width=64, height=64, voxel=0.2, tau=0.8)

    state = initialize_state(
        layout, InitConfig(default_source=InitSource(count=args.points),
                           scale_factor=0.8),
        FieldConfig(levels=3, log2_table=11), seed=args.seed)
    previews(state, cam_cfg, out / "previews", "init")
    save_checkpoint(state, out / "scene_init.ckpt")

    eye3 = np.eye(3)
    geometry = AnalyticScoreProvider(
        Stage.GEOMETRY, schedule,
        AffineTarget(0.0, {"normal": np.concatenate([eye3, np.zeros((3, 3))]),
                           "depth": np.concatenate([np.zeros((3, 1)), np.ones((3, 1))])}),
        AffineTarget(0.5))
    appearance = AnalyticScoreProvider(Stage.APPEARANCE, schedule,
                                       AffineTarget(0.0, {"semantic": 1.0}),
                                       AffineTarget(0.5))

    t0 = time.time()
    run_stage1(state, geometry, schedule,
               StageConfig(steps=args.stage1_steps, seed=args.seed, cameras_per_step=2),
               cam_cfg, condition_source=LayoutOracleConditionSource(layout, state.palette))
    print(f"stage 1 done in {time.time() - t0:.0f}s")
    previews(state, cam_cfg, out / "previews", "geometry")
    save_checkpoint(state, out / "scene_geometry.ckpt")

    t0 = time.time()
    run_stage2(state, appearance, schedule,
               StageConfig(steps=args.stage2_steps, seed=args.seed + 1, ddim_c=10,
                           cfg_scale=0.2), cam_cfg)
    print(f"stage 2 done in {time.time() - t0:.0f}s")
    previews(state, cam_cfg, out / "previews", "final")
    save_checkpoint(state, out / "scene_final.ckpt")

    report = compute_metrics(state, n_views=8, seed=args.seed, camera_config=cam_cfg)
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2))
    print(json.dumps(report.to_dict(), indent=2))


if __name__ == "__main__":
    main()
