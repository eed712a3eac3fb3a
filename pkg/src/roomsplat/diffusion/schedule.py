"""Noise schedule: cumulative signal coefficients, weightings and DDIM stepping.

``alpha_bar[t]`` is the signal retention at timestep t (index 0 is the
clean-data convention alpha_bar[0] = 1), so

    z_t = sqrt(alpha_bar[t]) * z_0 + sqrt(1 - alpha_bar[t]) * eps.

omega(t) weights distillation residuals (default 1 - alpha_bar) and lam(t)
weights the DDIM-consistency term (default 1); both are injected, not
hard-coded, since different backends prefer different weightings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray  # (T+1,), alpha_bar[0] = 1, strictly decreasing
    omega: np.ndarray      # (T+1,), >= 0
    lam: np.ndarray        # (T+1,), >= 0

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 3:
            raise ValidationError("schedule: need alpha_bar for t = 0..T with T >= 2")
        if abs(ab[0] - 1.0) > 1e-12:
            raise ValidationError("schedule: alpha_bar[0] must be 1")
        if np.any(np.diff(ab) >= 0):
            raise ValidationError("schedule: alpha_bar must be strictly decreasing")
        if ab[-1] <= 0 or ab[1] >= 1:
            raise ValidationError("schedule: alpha_bar must stay in (0, 1) for t >= 1")
        for name in ("omega", "lam"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != ab.shape:
                raise ValidationError(f"schedule: {name} must match alpha_bar shape")
            if np.any(arr < 0):
                raise ValidationError(f"schedule: {name} must be non-negative")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValidationError(f"schedule: t={t} outside [1, {self.T}]")
        return t

    def add_noise(self, z0, t: int, eps):
        """z_t = sqrt(ab_t) z0 + sqrt(1-ab_t) eps; works on numpy or torch arrays."""
        t = self.check_t(t) if t != 0 else 0
        ab = float(self.alpha_bar[t])
        return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps

    def noise_to_sample(self, z_t, t: int, eps_hat):
        """Invert the noising: the x0 estimate implied by a noise prediction."""
        t = self.check_t(t)
        ab = float(self.alpha_bar[t])
        return (z_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def make_schedule(T: int, kind: str = "cosine", omega_kind: str = "one-minus-alpha-bar",
                  lam_kind: str = "ones") -> NoiseSchedule:
    """Cosine or linear-beta alpha_bar over T steps with pluggable weightings.

    The linear-beta range [1e-4, 2e-2] is the T=1000 convention; betas are
    rescaled by 1000/T so total noise stays comparable for other T.
    """
    if T < 2:
        raise ValidationError("schedule: T must be >= 2")
    t = np.arange(T + 1, dtype=np.float64)
    if kind == "cosine":
        s = 0.008
        f = np.cos((t / T + s) / (1.0 + s) * math.pi / 2.0) ** 2
        alpha_bar = np.clip(f / f[0], 1e-9, 1.0)
        alpha_bar[0] = 1.0
    elif kind == "linear":
        scale = 1000.0 / T
        betas = np.clip(np.linspace(1e-4, 2e-2, T) * scale, 0.0, 0.999)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    else:
        raise ValidationError(f"schedule: unknown kind {kind!r}")

    if omega_kind == "one-minus-alpha-bar":
        omega = 1.0 - alpha_bar
    elif omega_kind == "ones":
        omega = np.ones_like(alpha_bar)
        omega[0] = 0.0
    else:
        raise ValidationError(f"schedule: unknown omega kind {omega_kind!r}")

    if lam_kind == "ones":
        lam = np.ones_like(alpha_bar)
    elif lam_kind == "zeros":  # disables the DDIM-consistency term entirely
        lam = np.zeros_like(alpha_bar)
    else:
        raise ValidationError(f"schedule: unknown lambda kind {lam_kind!r}")
    return NoiseSchedule(alpha_bar=alpha_bar, omega=omega, lam=lam)


def ddim_estimate(z_t: np.ndarray, t: int, c: int, provider, cond,
                  schedule: NoiseSchedule) -> np.ndarray:
    """Estimate z_{t-c} from z_t with c deterministic (eta=0) DDIM updates.

    Each update predicts noise at the current step, forms the x0 estimate and
    re-noises it at the previous alpha_bar; with alpha_bar[0] = 1 a full
    reverse (c = t) lands on the x0 prediction itself.
    """
    t = int(t)
    c = int(c)
    if c < 0 or c > t:
        raise ValidationError(f"ddim: need 0 <= c <= t, got c={c}, t={t}")
    z = np.array(z_t, copy=True)
    for step in range(c):
        tc = t - step
        eps_hat = provider.predict(z, tc, cond)
        ab_t = float(schedule.alpha_bar[tc])
        ab_prev = float(schedule.alpha_bar[tc - 1])
        x0 = (z - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
        z = math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_hat
    return z
