"""Noise schedule and the forward (noising) process.

Videos are plain tensors of shape (F, C, H, W) in [-1, 1]; noised samples are
unbounded. The schedule keeps float64 tables so downstream coefficient math
does not accumulate float32 error.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise levels: betas and their running signal products."""

    T: int
    betas: np.ndarray       # (T,) float64, each in (0, 1)
    alpha_bars: np.ndarray  # (T,) float64, cumprod of (1 - beta)

    def config(self) -> dict:
        return {
            "T": self.T,
            "beta_min": float(self.betas[0]),
            "beta_max": float(self.betas[-1]),
        }

    def signal_level(self, t: int) -> float:
        """sqrt of the retained signal fraction at step t."""
        return float(np.sqrt(self.alpha_bars[t]))

    def noise_level(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bars[t]))


def build_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 2e-2) -> NoiseSchedule:
    """Linear beta schedule with cumulative signal products."""
    if T < 2:
        raise ConfigurationError(f"schedule needs T >= 2, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigurationError(
            f"betas must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )
    betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(T=T, betas=betas, alpha_bars=alpha_bars)


def forward_diffuse(x0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Noise a clean video to step t: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps."""
    if eps.shape != x0.shape:
        raise DimensionError(f"noise shape {tuple(eps.shape)} != video shape {tuple(x0.shape)}")
    if not (0 <= t < schedule.T):
        raise ConfigurationError(f"t={t} outside [0, {schedule.T})")
    abar = schedule.alpha_bars[t]
    a = torch.tensor(np.sqrt(abar), dtype=x0.dtype, device=x0.device)
    b = torch.tensor(np.sqrt(1.0 - abar), dtype=x0.dtype, device=x0.device)
    return a * x0 + b * eps
