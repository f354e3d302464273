"""Timestep sampling for customization: a cosine-skewed distribution that
up-weights high-noise steps, which carry the global motion structure."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class TimestepDistribution:
    T: int
    alpha: float
    pmf: np.ndarray  # (T,) float64, sums to 1

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return rng.choice(self.T, size=n, p=self.pmf)


def build_timestep_distribution(T: int, alpha: float) -> TimestepDistribution:
    """pmf(t) proportional to 1 - alpha*cos(pi*t/T), normalized over t in [0, T)."""
    if not (0.0 <= alpha < 1.0):
        raise ConfigurationError(f"alpha must be in [0, 1), got {alpha}")
    if T < 1:
        raise ConfigurationError(f"T must be positive, got {T}")
    t = np.arange(T, dtype=np.float64)
    weights = 1.0 - alpha * np.cos(np.pi * t / T)
    pmf = weights / weights.sum()
    return TimestepDistribution(T=T, alpha=alpha, pmf=pmf)
