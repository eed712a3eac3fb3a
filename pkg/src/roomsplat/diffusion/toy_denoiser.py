"""Tiny trainable conditional denoiser for desk-scale experiments.

Structure mirrors the conditioned backbones the full system would use:
a small U-Net noise predictor plus one encoder per condition role whose
per-scale features are ADDED to the decoder block inputs. The injection
convolutions are zero-initialized, so an untrained condition branch leaves
the unconditional backbone prediction bit-exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..errors import ValidationError
from .conditions import CONDITION_ROLES, ConditionSet, Stage
from .schedule import NoiseSchedule

_ROLE_CHANNELS = {"semantic": 3, "normal": 3, "depth": 1}


def _sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class _ResBlock(nn.Module):
    """Conv residual block with scale-shift timestep conditioning.

    Multiplicative conditioning matters here: the optimal noise prediction
    carries a 1/sqrt(1-alpha_bar_t) gain, which additive embeddings cannot
    express.
    """

    def __init__(self, channels: int, emb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.emb = nn.Linear(emb_dim, 2 * channels)
        self.act = nn.SiLU()

    def forward(self, x, emb):
        h = self.conv1(self.act(x))
        scale, shift = self.emb(emb)[:, :, None, None].chunk(2, dim=1)
        h = h * (1.0 + scale) + shift
        h = self.conv2(self.act(h))
        return x + h


class _CondEncoder(nn.Module):
    """Condition image -> per-scale features; output convs start at zero."""

    def __init__(self, in_channels: int, base: int):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, base, 3, padding=1), nn.SiLU(),
            nn.Conv2d(base, base, 3, padding=1),
        )
        self.down = nn.Sequential(
            nn.SiLU(), nn.Conv2d(base, 2 * base, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * base, 2 * base, 3, padding=1),
        )
        self.proj_full = nn.Conv2d(base, base, 1)
        self.proj_half = nn.Conv2d(2 * base, 2 * base, 1)
        nn.init.zeros_(self.proj_full.weight)
        nn.init.zeros_(self.proj_full.bias)
        nn.init.zeros_(self.proj_half.weight)
        nn.init.zeros_(self.proj_half.bias)

    def forward(self, img):
        full = self.stem(img)
        half = self.down(full)
        return self.proj_full(full), self.proj_half(half)


class ToyDenoiser(nn.Module):
    """Noise predictor with additive per-scale condition injection."""

    def __init__(self, in_channels: int, roles: tuple[str, ...] = ("semantic",),
                 base: int = 16, emb_dim: int = 64):
        super().__init__()
        for role in roles:
            if role not in CONDITION_ROLES:
                raise ValidationError(f"toy denoiser: unknown condition role {role!r}")
        self.in_channels = in_channels
        self.roles = tuple(roles)
        self.emb_mlp = nn.Sequential(nn.Linear(32, emb_dim), nn.SiLU(),
                                     nn.Linear(emb_dim, emb_dim))
        self.prompt_emb = nn.Embedding(2, emb_dim)
        self.enc_in = nn.Conv2d(in_channels, base, 3, padding=1)
        self.enc_full = _ResBlock(base, emb_dim)
        self.down = nn.Conv2d(base, 2 * base, 3, stride=2, padding=1)
        self.enc_half = _ResBlock(2 * base, emb_dim)
        self.mid = _ResBlock(2 * base, emb_dim)
        self.dec_half = _ResBlock(2 * base, emb_dim)
        self.up = nn.ConvTranspose2d(2 * base, base, 2, stride=2)
        self.dec_full = _ResBlock(base, emb_dim)
        self.head = nn.Conv2d(base, in_channels, 3, padding=1)
        self.cond_encoders = nn.ModuleDict(
            {role: _CondEncoder(_ROLE_CHANNELS[role], base) for role in roles}
        )

    def forward(self, z: torch.Tensor, t: torch.Tensor, prompt_present: torch.Tensor,
                conds: dict[str, torch.Tensor] | None = None) -> torch.Tensor:
        if z.shape[-1] % 2 or z.shape[-2] % 2:
            raise ValidationError("toy denoiser: resolution must be even")
        emb = self.emb_mlp(_sinusoidal_embedding(t, 32)) + self.prompt_emb(prompt_present.long())

        add_full = add_half = None
        if conds:
            for role, img in conds.items():
                f_full, f_half = self.cond_encoders[role](img)
                add_full = f_full if add_full is None else add_full + f_full
                add_half = f_half if add_half is None else add_half + f_half

        h_full = self.enc_full(self.enc_in(z), emb)
        h_half = self.enc_half(self.down(h_full), emb)
        h = self.mid(h_half, emb)
        if add_half is not None:
            h = h + add_half
        h = self.dec_half(h, emb)
        h = self.up(h) + h_full
        if add_full is not None:
            h = h + add_full
        h = self.dec_full(h, emb)
        return self.head(h)


@dataclass(frozen=True)
class ToyTrainConfig:
    steps: int = 2000
    lr: float = 2e-3
    batch_size: int = 2
    seed: int = 0
    t_min_frac: float = 0.02  # avoid degenerate schedule endpoints
    t_max_frac: float = 0.98
    eval_draws: int = 16


@dataclass
class ToyTrainReport:
    initial_loss: float
    final_loss: float
    steps: int


class ToyDenoiserProvider:
    """ScoreProvider facade over a trained ToyDenoiser."""

    def __init__(self, model: ToyDenoiser, stage: Stage, schedule: NoiseSchedule,
                 report: ToyTrainReport | None = None):
        self.model = model.eval()
        self.stage = Stage(stage)
        self.schedule = schedule
        self.report = report

    @property
    def latent_channels(self) -> int:
        return self.model.in_channels

    def _cond_tensors(self, cond: ConditionSet) -> dict[str, torch.Tensor]:
        out = {}
        for role in self.model.roles:
            img = getattr(cond, role)
            if img is not None:
                out[role] = torch.as_tensor(img, dtype=torch.float32)[None]
        return out

    def predict(self, z_t: np.ndarray, t: int, cond: ConditionSet) -> np.ndarray:
        t = self.schedule.check_t(t)
        with torch.no_grad():
            z = torch.as_tensor(np.asarray(z_t), dtype=torch.float32)[None]
            pred = self.model(
                z, torch.tensor([t]), torch.tensor([int(cond.prompt_present)]),
                self._cond_tensors(cond),
            )
        return pred[0].double().numpy()


def _eval_loss(model: ToyDenoiser, pairs, schedule: NoiseSchedule,
               config: ToyTrainConfig) -> float:
    """Denoising loss over a fixed (t, eps) evaluation set; deterministic."""
    gen = torch.Generator().manual_seed(1234)
    t_lo = max(1, int(config.t_min_frac * schedule.T))
    t_hi = max(t_lo, int(config.t_max_frac * schedule.T))
    losses = []
    with torch.no_grad():
        for x, cond in pairs:
            x_t = torch.as_tensor(np.asarray(x), dtype=torch.float32)[None]
            conds = {r: torch.as_tensor(getattr(cond, r), dtype=torch.float32)[None]
                     for r in model.roles if getattr(cond, r) is not None}
            for _ in range(config.eval_draws):
                t = int(torch.randint(t_lo, t_hi + 1, (1,), generator=gen))
                eps = torch.randn(x_t.shape, generator=gen)
                z_t = schedule.add_noise(x_t, t, eps)
                pred = model(z_t, torch.tensor([t]),
                             torch.tensor([int(cond.prompt_present)]), conds)
                losses.append(float(((pred - eps) ** 2).mean()))
    return float(np.mean(losses))


def train_toy_denoiser(pairs: list[tuple[np.ndarray, ConditionSet]], stage: Stage,
                       schedule: NoiseSchedule,
                       config: ToyTrainConfig | None = None) -> ToyDenoiserProvider:
    """Train the denoising objective || eps - eps_hat(z_t; t, conditions) ||^2."""
    config = config or ToyTrainConfig()
    if not pairs:
        raise ValidationError("toy denoiser: empty dataset")
    x0, cond0 = pairs[0]
    x0 = np.asarray(x0)
    if x0.shape[1] > 32 or x0.shape[2] > 32:
        raise ValidationError("toy denoiser: resolutions above 32x32 are out of scope")
    roles = tuple(r for r in CONDITION_ROLES if getattr(cond0, r) is not None)

    torch.manual_seed(config.seed)
    model = ToyDenoiser(in_channels=x0.shape[0], roles=roles)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed + 1)

    xs = [torch.as_tensor(np.asarray(x), dtype=torch.float32) for x, _ in pairs]
    conds = [
        {r: torch.as_tensor(getattr(c, r), dtype=torch.float32) for r in roles}
        for _, c in pairs
    ]
    prompts = [int(c.prompt_present) for _, c in pairs]

    initial = _eval_loss(model, pairs, schedule, config)
    t_lo = max(1, int(config.t_min_frac * schedule.T))
    t_hi = max(t_lo, int(config.t_max_frac * schedule.T))
    for _ in range(config.steps):
        idx = torch.randint(0, len(pairs), (config.batch_size,), generator=gen)
        x = torch.stack([xs[i] for i in idx])
        batch_conds = {r: torch.stack([conds[i][r] for i in idx]) for r in roles}
        prompt = torch.tensor([prompts[i] for i in idx])
        t = int(torch.randint(t_lo, t_hi + 1, (1,), generator=gen))
        eps = torch.randn(x.shape, generator=gen)
        z_t = schedule.add_noise(x, t, eps)
        pred = model(z_t, torch.full((x.shape[0],), t), prompt, batch_conds)
        loss = ((pred - eps) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()

    final = _eval_loss(model, pairs, schedule, config)
    report = ToyTrainReport(initial_loss=initial, final_loss=final, steps=config.steps)
    return ToyDenoiserProvider(model, stage, schedule, report)
