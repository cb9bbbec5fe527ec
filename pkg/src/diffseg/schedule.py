"""Forward-noising schedule: cumulative signal-retention coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative products alpha_bar[0..T], alpha_bar[0] = 1, strictly decreasing."""

    T: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if len(ab) != self.T + 1:
            raise ValueError("alpha_bar must have T+1 entries")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be 1")
        if not np.all(np.diff(ab) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if ab[-1] <= 0.0 or np.any(ab > 1.0):
            raise ValueError("alpha_bar entries must lie in (0, 1]")
        object.__setattr__(self, "alpha_bar", ab)


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear-beta schedule; alpha_bar[t] = prod_{s<=t} (1 - beta_s)."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(T=T, alpha_bar=alpha_bar)


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward noising: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t must be in [1, {schedule.T}], got {t}")
    if np.shape(x0) != np.shape(eps):
        raise ValueError("x0 and eps must have the same shape")
    ab = float(schedule.alpha_bar[t])
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
