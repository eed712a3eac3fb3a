"""Operator command line.

Subcommands: init, refine-geometry, generate-appearance, render, metrics.
Every command is deterministic given --seed, never mutates its inputs, and
exits 0 on success, 2 on validation problems, 3 on provider/transport
problems, 4 on numerical failures.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, build_condition_source, build_provider, load_run_config
from .diffusion import Stage
from .errors import (ContractError, NumericalError, ParseError, TransportError,
                     ValidationError)
from .imgio import save_depth_preview, save_depth_raster, save_normal_png, save_rgb_png
from .layout_io import load_layout
from .metrics import compute_metrics, render_state_bundle
from .optim import (AppearanceStage, GeometryStage, initialize_state, load_checkpoint,
                    save_checkpoint)
from .renderer import Camera, load_cameras
from .view_sampling import CameraSampler

PREVIEW_EVERY = 100


def _write_view(bundle, stem: Path) -> list[Path]:
    maps = bundle.numpy()
    out = []
    for suffix, saver, data in (
        ("rgb.png", save_rgb_png, maps["I"]),
        ("semantic.png", save_rgb_png, maps["S"]),
        ("normal.png", save_normal_png, maps["N"]),
        ("depth.bin", save_depth_raster, maps["D"]),
    ):
        path = stem.parent / f"{stem.name}_{suffix}"
        saver(data, path)
        out.append(path)
    return out


def _preview(state, config: RunConfig, out_dir: Path, tag: str, n: int = 4) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    sampler = CameraSampler(state.layout, config.camera_config(), seed=config.seed + 99)
    for i, cam in enumerate(sampler.sample(n)):
        bundle = render_state_bundle(state, cam)
        _write_view(bundle, out_dir / f"{tag}_view{i}")
        save_depth_preview(bundle.numpy()["D"], out_dir / f"{tag}_view{i}_depth.png")


def cmd_init(args) -> int:
    config = load_run_config(args.config, vars(args))
    layout = load_layout(config.layout_path)
    palette = config.palette()
    state = initialize_state(layout, config.init, config.field_config,
                             seed=config.seed, palette=palette)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = config.out_dir / "scene_init.ckpt"
    save_checkpoint(state, ckpt)
    _preview(state, config, config.out_dir / "previews", "init")
    print(f"initialized {len(state.objects)} objects -> {ckpt}")
    return 0


def _run_stage(args, stage: Stage) -> int:
    config = load_run_config(args.config, vars(args))
    state = load_checkpoint(args.checkpoint)
    schedule = config.schedule()
    codec = config.codec()
    if stage == Stage.GEOMETRY:
        provider = build_provider(config.stage1_provider, stage, schedule,
                                  config.stage1_provider_params, config.toy_train)
        source = build_condition_source(config.stage1_condition_source,
                                        state.layout, state.palette)
        runner = GeometryStage(state, provider, schedule, config.stage1,
                               config.camera_config(), source, codec)
        out_name, tag = "scene_geometry.ckpt", "geometry"
    else:
        provider = build_provider(config.stage2_provider, stage, schedule,
                                  config.stage2_provider_params, config.toy_train)
        runner = AppearanceStage(state, provider, schedule, config.stage2,
                                 config.camera_config(), None, codec)
        out_name, tag = "scene_final.ckpt", "appearance"

    config.out_dir.mkdir(parents=True, exist_ok=True)
    previews = config.out_dir / "previews"
    steps = runner.config.steps
    for step in range(steps):
        report = runner.step()
        if PREVIEW_EVERY and (step + 1) % PREVIEW_EVERY == 0:
            _preview(state, config, previews, f"{tag}_{step + 1:05d}", n=1)
            print(f"step {step + 1}/{steps} residual {report.residual_norm:.4f}")
    runner.finish()
    ckpt = config.out_dir / out_name
    save_checkpoint(state, ckpt)
    _preview(state, config, previews, f"{tag}_final")
    print(f"{tag} stage complete ({steps} steps) -> {ckpt}")
    return 0


def cmd_refine_geometry(args) -> int:
    return _run_stage(args, Stage.GEOMETRY)


def cmd_generate_appearance(args) -> int:
    return _run_stage(args, Stage.APPEARANCE)


def _trajectory_cameras(spec: str, state, config: RunConfig) -> list[Camera]:
    kind, _, count_s = spec.partition(":")
    n = int(count_s) if count_s else 24
    lo, hi = state.layout.room.bounds()
    center = 0.5 * (lo + hi)
    fov = math.radians(config.fov_deg)
    cams = []
    if kind == "circle":
        radius = 0.35 * float(min(hi[0] - lo[0], hi[1] - lo[1]))
        for i in range(n):
            phi = 2.0 * math.pi * i / n
            pos = center + np.array([radius * math.cos(phi), radius * math.sin(phi), 0.15])
            look = center - pos
            azim = math.atan2(look[1], look[0])
            elev = math.asin(look[2] / np.linalg.norm(look))
            cams.append(Camera(position=pos, elevation=elev, azimuth=azim, fov_y=fov,
                               width=config.width, height=config.height))
    elif kind == "line":
        a = center + np.array([-(hi[0] - lo[0]) * 0.3, 0.0, 0.1])
        b = center + np.array([(hi[0] - lo[0]) * 0.3, 0.0, 0.1])
        for i in range(n):
            frac = i / max(n - 1, 1)
            pos = a * (1 - frac) + b * frac
            cams.append(Camera(position=pos, elevation=0.0, azimuth=math.pi / 2, fov_y=fov,
                               width=config.width, height=config.height))
    else:
        raise ValidationError(f"unknown trajectory {spec!r} (circle:<n> or line:<n>)")
    return cams


def cmd_render(args) -> int:
    config = load_run_config(args.config, vars(args))
    state = load_checkpoint(args.checkpoint)
    if args.cameras:
        cams = load_cameras(args.cameras)
    elif args.trajectory:
        cams = _trajectory_cameras(args.trajectory, state, config)
    else:
        raise ValidationError("render: give --cameras <file> or --trajectory <spec>")
    out_dir = Path(args.out or config.out_dir / "renders")
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    start = time.perf_counter()
    for i, cam in enumerate(cams):
        bundle = render_state_bundle(state, cam)
        written += len(_write_view(bundle, out_dir / f"view{i:04d}"))
    elapsed = time.perf_counter() - start
    fps = len(cams) / elapsed if elapsed > 0 else float("inf")
    print(f"rendered {len(cams)} view(s), {written} files -> {out_dir} "
          f"({fps:.2f} frames/s)")
    return 0


def cmd_metrics(args) -> int:
    config = load_run_config(args.config, vars(args))
    state = load_checkpoint(args.checkpoint)
    report = compute_metrics(state, n_views=args.views, seed=config.seed,
                             camera_config=config.camera_config())
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roomsplat",
        description="Layout-guided hybrid scene synthesis (init / refine / render).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", type=Path, default=None, help="INI config file")
        p.add_argument("--layout", type=Path, default=None, help="layout JSON (overrides config)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master RNG seed")
        p.add_argument("--steps", type=int, default=None, help="stage step count override")
        p.add_argument("--provider", type=str, default=None,
                       help="provider spec: analytic | toy:<dataset.npz> | remote:<url>")
        if checkpoint:
            p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("init", help="initialize a scene from a layout")
    common(p)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("refine-geometry", help="stage 1: geometry distillation")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_refine_geometry)

    p = sub.add_parser("generate-appearance", help="stage 2: appearance distillation")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_generate_appearance)

    p = sub.add_parser("render", help="render a checkpoint along cameras or a trajectory")
    common(p, checkpoint=True)
    p.add_argument("--cameras", type=Path, default=None, help="camera table file")
    p.add_argument("--trajectory", type=str, default=None, help="circle:<n> or line:<n>")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("metrics", help="layout-adherence metrics for a checkpoint")
    common(p, checkpoint=True)
    p.add_argument("--views", type=int, default=16)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    torch.set_num_threads(max(torch.get_num_threads(), 2))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TransportError, ContractError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
