"""Run configuration: INI file schema plus CLI overrides.

Sections and keys (all optional unless noted; flags override file values):

    [run]      layout (required), palette, out, seed
    [render]   width, height, fov_deg
    [sampler]  voxel, tau, sigma_min_deg
    [init]     points, family, scale_factor, label_sources (label:family:count,...)
    [field]    levels, features, log2_table, base_resolution, growth
    [schedule] T, kind (cosine|linear)
    [codec]    kind (identity|pool<k>)
    [stage1]   steps, cameras_per_step, lr_*, provider, provider_params,
               condition_source (state|layout-oracle)
    [stage2]   steps, cameras_per_step, lr_*, cfg_scale, ddim_c, gamma,
               provider, provider_params
    [toy]      steps, lr, batch_size (training of toy:<dataset.npz> providers)

Provider specs: ``analytic`` (params from provider_params or built-in
defaults), ``toy:<dataset.npz>``, ``remote:<url>``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .diffusion import (ConditionSet, RemoteScoreProvider, Stage,
                        analytic_provider_from_params, default_analytic_params,
                        get_codec, load_analytic_params, make_schedule,
                        ToyTrainConfig, train_toy_denoiser)
from .errors import ParseError, ValidationError
from .initializer import InitConfig, InitSource
from .optim import LayoutOracleConditionSource, StageConfig
from .palette import SemanticPalette, default_palette, load_palette
from .renderer import FieldConfig
from .view_sampling import CameraSamplerConfig


@dataclass(frozen=True)
class ProviderSpec:
    kind: str                 # analytic | toy | remote
    arg: str | None = None    # params path / dataset path / endpoint

    @classmethod
    def parse(cls, text: str) -> "ProviderSpec":
        text = text.strip()
        if text == "analytic":
            return cls("analytic")
        for prefix in ("toy:", "remote:"):
            if text.startswith(prefix):
                arg = text[len(prefix):]
                if not arg:
                    raise ParseError(f"provider spec {text!r}: missing argument")
                return cls(prefix[:-1], arg)
        raise ParseError(f"unknown provider spec {text!r} "
                         "(expected analytic | toy:<path> | remote:<url>)")


@dataclass
class RunConfig:
    layout_path: Path
    out_dir: Path
    seed: int = 0
    palette_path: Path | None = None
    width: int = 64
    height: int = 64
    fov_deg: float = 60.0
    sampler_voxel: float = 0.1
    sampler_tau: float = 1.0
    sigma_min_deg: float = 5.0
    init: InitConfig = dc_field(default_factory=InitConfig)
    field_config: FieldConfig = dc_field(default_factory=FieldConfig)
    schedule_T: int = 1000
    schedule_kind: str = "cosine"
    codec_kind: str = "identity"
    # production-faithful step defaults; desk-scale configs override to 200/400
    stage1: StageConfig = dc_field(default_factory=lambda: StageConfig(steps=5000))
    stage2: StageConfig = dc_field(default_factory=lambda: StageConfig(steps=10000))
    stage1_provider: ProviderSpec = ProviderSpec("analytic")
    stage2_provider: ProviderSpec = ProviderSpec("analytic")
    stage1_provider_params: Path | None = None
    stage2_provider_params: Path | None = None
    stage1_condition_source: str = "state"
    toy_train: ToyTrainConfig = dc_field(default_factory=ToyTrainConfig)

    def camera_config(self) -> CameraSamplerConfig:
        return CameraSamplerConfig(
            voxel=self.sampler_voxel, tau=self.sampler_tau, fov_y_deg=self.fov_deg,
            width=self.width, height=self.height, sigma_min_deg=self.sigma_min_deg,
        )

    def palette(self) -> SemanticPalette:
        return load_palette(self.palette_path) if self.palette_path else default_palette()

    def schedule(self):
        return make_schedule(self.schedule_T, self.schedule_kind)

    def codec(self):
        return get_codec(self.codec_kind)


def _stage_config(sec, seed: int, defaults: StageConfig) -> StageConfig:
    return StageConfig(
        steps=sec.getint("steps", defaults.steps),
        cameras_per_step=sec.getint("cameras_per_step", defaults.cameras_per_step),
        lr_position=sec.getfloat("lr_position", defaults.lr_position),
        lr_position_final=sec.getfloat("lr_position_final", defaults.lr_position_final),
        lr_rotation=sec.getfloat("lr_rotation", defaults.lr_rotation),
        lr_scale=sec.getfloat("lr_scale", defaults.lr_scale),
        lr_opacity=sec.getfloat("lr_opacity", defaults.lr_opacity),
        lr_color=sec.getfloat("lr_color", defaults.lr_color),
        lr_background=sec.getfloat("lr_background", defaults.lr_background),
        cfg_scale=sec.getfloat("cfg_scale", defaults.cfg_scale),
        ddim_c=sec.getint("ddim_c", defaults.ddim_c),
        recon_weight=sec.getfloat("gamma", defaults.recon_weight),
        seed=seed,
        t_min_frac=sec.getfloat("t_min_frac", defaults.t_min_frac),
        t_max_frac=sec.getfloat("t_max_frac", defaults.t_max_frac),
    )


def _parse_label_sources(text: str) -> dict[str, InitSource]:
    out: dict[str, InitSource] = {}
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 3:
            raise ParseError(f"init label_sources entry {chunk!r}: expected label:family:count")
        out[parts[0]] = InitSource(kind="procedural", family=parts[1], count=int(parts[2]))
    return out


def load_run_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Parse the INI file (if any) and apply CLI overrides on top."""
    overrides = overrides or {}
    parser = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ParseError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ParseError(f"{path}: {exc}") from exc

    def sec(name):
        return parser[name] if parser.has_section(name) else parser["DEFAULT"]

    run = sec("run")
    layout_path = overrides.get("layout") or run.get("layout")
    if layout_path is None:
        raise ParseError("no layout given (config [run] layout or --layout)")
    out_dir = overrides.get("out") or run.get("out", "runs/out")
    seed = overrides.get("seed")
    seed = int(seed) if seed is not None else run.getint("seed", 0)
    palette = run.get("palette")

    render = sec("render")
    sampler = sec("sampler")
    init_sec = sec("init")
    field_sec = sec("field")
    sched = sec("schedule")
    codec = sec("codec")

    init = InitConfig(
        default_source=InitSource(
            kind="procedural",
            family=init_sec.get("family", "box-fill"),
            count=init_sec.getint("points", 1000),
        ),
        source_by_label=_parse_label_sources(init_sec.get("label_sources", "")),
        scale_factor=init_sec.getfloat("scale_factor", 1.0),
    )
    field_config = FieldConfig(
        levels=field_sec.getint("levels", 4),
        features=field_sec.getint("features", 2),
        log2_table=field_sec.getint("log2_table", 12),
        base_resolution=field_sec.getint("base_resolution", 8),
        growth=field_sec.getfloat("growth", 2.0),
    )

    s1 = _stage_config(sec("stage1"), seed, StageConfig(steps=5000))
    s2 = _stage_config(sec("stage2"), seed, StageConfig(steps=10000))
    if "steps" in overrides and overrides["steps"] is not None:
        from dataclasses import replace
        s1 = replace(s1, steps=int(overrides["steps"]))
        s2 = replace(s2, steps=int(overrides["steps"]))

    p1 = overrides.get("provider") or sec("stage1").get("provider", "analytic")
    p2 = overrides.get("provider") or sec("stage2").get("provider", "analytic")
    toy_sec = sec("toy")
    toy = ToyTrainConfig(
        steps=toy_sec.getint("steps", 2000),
        lr=toy_sec.getfloat("lr", 2e-3),
        batch_size=toy_sec.getint("batch_size", 2),
        seed=seed,
    )

    def maybe_path(v):
        return Path(v) if v else None

    return RunConfig(
        layout_path=Path(layout_path),
        out_dir=Path(out_dir),
        seed=seed,
        palette_path=maybe_path(palette),
        width=render.getint("width", 64),
        height=render.getint("height", 64),
        fov_deg=render.getfloat("fov_deg", 60.0),
        sampler_voxel=sampler.getfloat("voxel", 0.1),
        sampler_tau=sampler.getfloat("tau", 1.0),
        sigma_min_deg=sampler.getfloat("sigma_min_deg", 5.0),
        init=init,
        field_config=field_config,
        schedule_T=sched.getint("T", 1000),
        schedule_kind=sched.get("kind", "cosine"),
        codec_kind=codec.get("kind", "identity"),
        stage1=s1,
        stage2=s2,
        stage1_provider=ProviderSpec.parse(p1),
        stage2_provider=ProviderSpec.parse(p2),
        stage1_provider_params=maybe_path(sec("stage1").get("provider_params")),
        stage2_provider_params=maybe_path(sec("stage2").get("provider_params")),
        stage1_condition_source=sec("stage1").get("condition_source", "state"),
        toy_train=toy,
    )


def load_toy_dataset(path: str | Path) -> list[tuple[np.ndarray, ConditionSet]]:
    """Toy-denoiser training pairs from an .npz archive.

    Arrays per pair index i: ``latent_i`` (C, h, w), ``semantic_i`` (3, h, w),
    optional ``normal_i`` (3, h, w), ``depth_i`` (1, h, w), ``prompt_i`` scalar.
    """
    archive = np.load(Path(path))
    pairs = []
    i = 0
    while f"latent_{i}" in archive:
        cond = ConditionSet(
            semantic=archive[f"semantic_{i}"],
            normal=archive[f"normal_{i}"] if f"normal_{i}" in archive else None,
            depth=archive[f"depth_{i}"] if f"depth_{i}" in archive else None,
            prompt_present=bool(archive[f"prompt_{i}"]) if f"prompt_{i}" in archive else True,
        )
        pairs.append((archive[f"latent_{i}"], cond))
        i += 1
    if not pairs:
        raise ValidationError(f"{path}: no pairs found (expected latent_0, semantic_0, ...)")
    return pairs


def build_provider(spec: ProviderSpec, stage: Stage, schedule,
                   params_path: Path | None = None,
                   toy_config: ToyTrainConfig | None = None):
    stage_name = "geometry" if stage == Stage.GEOMETRY else "appearance"
    if spec.kind == "analytic":
        src = params_path or (Path(spec.arg) if spec.arg else None)
        params = load_analytic_params(src) if src else default_analytic_params()
        if stage_name not in params:
            raise ValidationError(f"analytic params missing stage {stage_name!r}")
        return analytic_provider_from_params(stage, schedule, params[stage_name])
    if spec.kind == "toy":
        pairs = load_toy_dataset(spec.arg)
        return train_toy_denoiser(pairs, stage, schedule, toy_config or ToyTrainConfig())
    if spec.kind == "remote":
        return RemoteScoreProvider(spec.arg, stage, T=schedule.T)
    raise ValidationError(f"unknown provider kind {spec.kind!r}")


def build_condition_source(name: str, layout, palette):
    if name == "state":
        return None
    if name == "layout-oracle":
        return LayoutOracleConditionSource(layout, palette)
    raise ValidationError(f"unknown condition source {name!r}")
