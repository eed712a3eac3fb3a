"""Two-stage scene optimization: geometry distillation, then appearance.

Stage 1 renders the scene's semantic/normal/depth maps at sampled views,
noises the normal+inverse-depth latent and backpropagates the weighted
noise-prediction residual through the renderer into the geometry
parameters only. Stage 2 does the same for RGB with the DDIM-consistency
plus classifier-free residual combination and an added reconstruction term
against the decoded denoised estimate, updating colors and the background
field only.

The residual helpers are pure functions of (latent, t, noise, provider), so
tests can check their closed forms with the renderer Jacobian replaced by
identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..diffusion import ConditionSet, NoiseSchedule, Stage, ddim_estimate, get_codec
from ..errors import ContractError, ValidationError
from ..renderer import Camera, SplatOptions, render_background, splat_gaussians
from ..renderer.composite import composite
from ..view_sampling import CameraSampler, CameraSamplerConfig
from .state import STAGE_GEOMETRY_DONE, STAGE_APPEARANCE_DONE, SceneState
from .targets import (ConditionSource, StateConditionSource, appearance_latent_image,
                      geometry_latent_image)


@dataclass(frozen=True)
class StageConfig:
    steps: int
    cameras_per_step: int = 1
    # Adam rates; position decays exponentially from lr_position to lr_position_final.
    lr_position: float = 4e-3
    lr_position_final: float = 8e-5
    lr_rotation: float = 5e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 5e-3
    lr_background: float = 1e-2
    cfg_scale: float = 7.5
    ddim_c: int = 50
    recon_weight: float = 1.0
    seed: int = 0
    t_min_frac: float = 0.02
    t_max_frac: float = 0.98

    def __post_init__(self):
        if self.steps < 0 or self.cameras_per_step < 1:
            raise ValidationError("stage config: bad steps/cameras_per_step")
        rates = (self.lr_position, self.lr_position_final, self.lr_rotation, self.lr_scale,
                 self.lr_opacity, self.lr_color, self.lr_background)
        if any(r <= 0 for r in rates):
            raise ValidationError("stage config: learning rates must be positive")
        if not 0 <= self.t_min_frac < self.t_max_frac <= 1:
            raise ValidationError("stage config: bad timestep range")


@dataclass
class StepReport:
    step: int
    t_draws: list[int]
    residual_norm: float
    recon_loss: float = 0.0


def gsds_residual(x0: np.ndarray, t: int, eps: np.ndarray, provider,
                  schedule: NoiseSchedule, cond: ConditionSet) -> np.ndarray:
    """omega(t) * (eps_hat(z_t) - eps): the geometry-distillation residual."""
    z_t = schedule.add_noise(np.asarray(x0, dtype=np.float64), t, eps)
    eps_hat = provider.predict(z_t, t, cond)
    if np.shape(eps_hat) != np.shape(x0):
        raise ContractError(
            f"provider returned shape {np.shape(eps_hat)}, latent is {np.shape(x0)}"
        )
    return float(schedule.omega[t]) * (eps_hat - eps)


def isd_residual(x0: np.ndarray, t: int, eps: np.ndarray, provider,
                 schedule: NoiseSchedule, cond: ConditionSet, c: int,
                 cfg_scale: float) -> tuple[np.ndarray, dict]:
    """Appearance residual omega(t) (lam(t) delta_inv + cfg delta_cls) + extras.

    delta_inv compares noise predictions along one DDIM trajectory (exactly
    zero at c = 0); delta_cls is the classifier-free conditional/unconditional
    difference. The returned info carries the x0 estimate at z_{t-c}, which
    the reconstruction term decodes into the generated image.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    z_t = schedule.add_noise(x0, t, eps)
    eps_cond = provider.predict(z_t, t, cond)
    if np.shape(eps_cond) != np.shape(x0):
        raise ContractError(
            f"provider returned shape {np.shape(eps_cond)}, latent is {np.shape(x0)}"
        )
    eps_uncond = provider.predict(z_t, t, cond.without_prompt())
    delta_cls = eps_cond - eps_uncond

    if c == 0:
        delta_inv = np.zeros_like(eps_cond)
        z_tc, t_c, eps_tc = z_t, t, eps_cond
    else:
        if t - c < 1:
            raise ValidationError(f"isd: need t - c >= 1, got t={t}, c={c}")
        z_tc = ddim_estimate(z_t, t, c, provider, cond, schedule)
        t_c = t - c
        eps_tc = provider.predict(z_tc, t_c, cond)
        delta_inv = eps_tc - eps_cond

    residual = float(schedule.omega[t]) * (
        float(schedule.lam[t]) * delta_inv + cfg_scale * delta_cls
    )
    ab_tc = float(schedule.alpha_bar[t_c])
    x0_pred = (z_tc - math.sqrt(1.0 - ab_tc) * eps_tc) / math.sqrt(ab_tc)
    return residual, {"delta_inv": delta_inv, "delta_cls": delta_cls,
                      "z_tc": z_tc, "t_c": t_c, "x0_pred": x0_pred}


class _StageRunner:
    stage: Stage

    def __init__(self, state: SceneState, provider, schedule: NoiseSchedule,
                 config: StageConfig, camera_config: CameraSamplerConfig | None = None,
                 condition_source: ConditionSource | None = None, codec=None,
                 sampler: CameraSampler | None = None,
                 splat_opts: SplatOptions = SplatOptions()):
        if Stage(provider.stage) != self.stage:
            raise ValidationError(
                f"provider stage mismatch: provider serves {Stage(provider.stage).name}, "
                f"runner needs {self.stage.name}"
            )
        self.state = state
        self.provider = provider
        self.schedule = schedule
        self.config = config
        self.codec = codec or get_codec("identity")
        self.condition_source = condition_source or StateConditionSource()
        self.sampler = sampler or CameraSampler(
            state.layout, camera_config or CameraSamplerConfig(), seed=config.seed
        )
        self.splat_opts = splat_opts
        self.rng = np.random.default_rng(config.seed + 7919)
        self.t_lo = max(1, int(config.t_min_frac * schedule.T))
        self.t_hi = max(self.t_lo, int(config.t_max_frac * schedule.T))
        self.step_count = 0
        self.optimizer = self._build_optimizer()

    def _build_optimizer(self) -> torch.optim.Adam:
        raise NotImplementedError

    def _draw_t(self) -> int:
        return int(self.rng.integers(self.t_lo, self.t_hi + 1))

    def step(self, cams: Sequence[Camera] | Camera | None = None) -> StepReport:
        if isinstance(cams, Camera):
            cams = [cams]
        if cams is None:
            cams = self.sampler.sample(self.config.cameras_per_step)
        self._before_step()
        self.optimizer.zero_grad()
        t_draws: list[int] = []
        residual_norm = 0.0
        recon_total = 0.0
        for cam in cams:
            loss, t, rnorm, recon = self._camera_loss(cam)
            if loss.requires_grad:  # views seeing no differentiable content skip
                (loss / len(cams)).backward()
            t_draws.append(t)
            residual_norm += rnorm / len(cams)
            recon_total += recon / len(cams)
        self.optimizer.step()
        self._after_step()
        self.state.project_parameters()
        self.state.assert_finite()
        report = StepReport(step=self.step_count, t_draws=t_draws,
                            residual_norm=residual_norm, recon_loss=recon_total)
        self.step_count += 1
        return report

    def run(self) -> SceneState:
        for _ in range(self.config.steps):
            self.step()
        self.finish()
        return self.state

    def _before_step(self) -> None:
        pass

    def _after_step(self) -> None:
        pass

    def finish(self) -> None:
        pass

    def _camera_loss(self, cam: Camera) -> tuple[torch.Tensor, int, float, float]:
        raise NotImplementedError


class GeometryStage(_StageRunner):
    """Distills normal+inverse-depth renders against the geometry provider."""

    stage = Stage.GEOMETRY

    def _build_optimizer(self) -> torch.optim.Adam:
        for p in self.state.geometry_params():
            p.requires_grad_(True)
        groups = []
        for obj in self.state.objects:
            groups.extend([
                {"params": [obj.positions], "lr": self.config.lr_position},
                {"params": [obj.rot_delta], "lr": self.config.lr_rotation},
                {"params": [obj.scales], "lr": self.config.lr_scale},
                {"params": [obj.opacities], "lr": self.config.lr_opacity},
            ])
        self._position_group_idx = [i for i, g in enumerate(groups) if i % 4 == 0]
        return torch.optim.Adam(groups)

    def _before_step(self) -> None:
        # Exponential position decay over the configured step budget.
        steps = max(self.config.steps, 1)
        frac = min(self.step_count / max(steps - 1, 1), 1.0)
        lr = self.config.lr_position * (self.config.lr_position_final /
                                        self.config.lr_position) ** frac
        for i in self._position_group_idx:
            self.optimizer.param_groups[i]["lr"] = lr

    def _after_step(self) -> None:
        for obj in self.state.objects:
            obj.bake_rotation()

    def finish(self) -> None:
        for p in self.state.geometry_params():
            p.requires_grad_(False)
        self.state.stage = max(self.state.stage, STAGE_GEOMETRY_DONE)

    def _camera_loss(self, cam: Camera) -> tuple[torch.Tensor, int, float, float]:
        batch = self.state.world_batch(detach_appearance=True)
        obj_bundle = splat_gaussians(batch, cam, self.splat_opts)
        bg = render_background(self.state.layout.room, None, cam, self.state.palette,
                               dtype=batch.dtype)
        bundle = composite(obj_bundle, bg)

        x_img = geometry_latent_image(bundle)
        x_lat = self.codec.encode_array(x_img)
        x0 = x_lat.detach().double().numpy()
        t = self._draw_t()
        eps = self.rng.standard_normal(x0.shape)
        cond = self.condition_source.conditions_for(cam, bundle, Stage.GEOMETRY)
        residual = gsds_residual(x0, t, eps, self.provider, self.schedule, cond)
        loss = (x_lat * torch.as_tensor(residual, dtype=x_lat.dtype)).sum()
        return loss, t, float(np.linalg.norm(residual)), 0.0


class AppearanceStage(_StageRunner):
    """Distills RGB renders with the DDIM-consistency + classifier-free residual."""

    stage = Stage.APPEARANCE

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        if self.config.ddim_c < 1:
            raise ValidationError("stage config: ddim_c must be >= 1 in stage 2")
        if self.config.ddim_c + 1 > self.t_hi:
            raise ValidationError(
                f"stage config: ddim_c={self.config.ddim_c} leaves no valid t in "
                f"[{self.t_lo}, {self.t_hi}]"
            )

    def _build_optimizer(self) -> torch.optim.Adam:
        for p in self.state.appearance_params():
            p.requires_grad_(True)
        groups = [{"params": [obj.colors], "lr": self.config.lr_color}
                  for obj in self.state.objects]
        groups.append({"params": self.state.field.parameters(),
                       "lr": self.config.lr_background})
        return torch.optim.Adam(groups)

    def finish(self) -> None:
        for p in self.state.appearance_params():
            p.requires_grad_(False)
        self.state.stage = max(self.state.stage, STAGE_APPEARANCE_DONE)

    def _draw_t_for_ddim(self, c: int) -> int:
        t = self._draw_t()
        while t - c < 1:  # resample rather than clamping, keeps t marginal uniform
            t = self._draw_t()
        return t

    def _camera_loss(self, cam: Camera) -> tuple[torch.Tensor, int, float, float]:
        batch = self.state.world_batch(detach_geometry=True)
        obj_bundle = splat_gaussians(batch, cam, self.splat_opts)
        bg = render_background(self.state.layout.room, self.state.field, cam,
                               self.state.palette)
        bundle = composite(obj_bundle, bg)

        x_img = appearance_latent_image(bundle)
        x_lat = self.codec.encode_array(x_img)
        x0 = x_lat.detach().double().numpy()
        c = self.config.ddim_c
        t = self._draw_t_for_ddim(c)
        eps = self.rng.standard_normal(x0.shape)
        cond = self.condition_source.conditions_for(cam, bundle, Stage.APPEARANCE)
        residual, info = isd_residual(x0, t, eps, self.provider, self.schedule, cond,
                                      c, self.config.cfg_scale)
        loss = (x_lat * torch.as_tensor(residual, dtype=x_lat.dtype)).sum()

        recon_value = 0.0
        if self.config.recon_weight != 0.0:
            generated = self.codec.decode_array(info["x0_pred"])
            gen_t = torch.as_tensor(generated, dtype=x_img.dtype)
            recon = ((x_img - gen_t) ** 2).sum()
            loss = loss + self.config.recon_weight * recon
            recon_value = float(recon.detach())
        return loss, t, float(np.linalg.norm(residual)), recon_value


def gsds_step(stage: GeometryStage, cam: Camera | Sequence[Camera]) -> StepReport:
    """One geometry-distillation update at the given camera(s)."""
    return stage.step(cam)


def isd_step(stage: AppearanceStage, cam: Camera | Sequence[Camera]) -> StepReport:
    """One appearance-distillation update at the given camera(s)."""
    return stage.step(cam)


def run_stage1(state: SceneState, provider, schedule: NoiseSchedule, config: StageConfig,
               camera_config: CameraSamplerConfig | None = None,
               condition_source: ConditionSource | None = None, codec=None,
               splat_opts: SplatOptions = SplatOptions()) -> SceneState:
    """Geometry refinement; appearance parameters are untouched (digest-checked)."""
    before = state.appearance_digest()
    runner = GeometryStage(state, provider, schedule, config, camera_config,
                           condition_source, codec, splat_opts=splat_opts)
    runner.run()
    if state.appearance_digest() != before:
        raise ValidationError("stage 1 mutated appearance parameters")
    return state


def run_stage2(state: SceneState, provider, schedule: NoiseSchedule, config: StageConfig,
               camera_config: CameraSamplerConfig | None = None,
               condition_source: ConditionSource | None = None, codec=None,
               splat_opts: SplatOptions = SplatOptions()) -> SceneState:
    """Appearance generation; geometry parameters are untouched (digest-checked)."""
    if state.stage < STAGE_GEOMETRY_DONE:
        raise ValidationError("stage 2 requires a stage-1-completed state")
    before = state.geometry_digest()
    runner = AppearanceStage(state, provider, schedule, config, camera_config,
                             condition_source, codec, splat_opts=splat_opts)
    runner.run()
    if state.geometry_digest() != before:
        raise ValidationError("stage 2 mutated geometry parameters")
    return state
