"""Deterministic DDIM update, strided sampling, and inversion.

The update from step t to t_prev (alpha_bar abbreviated ab):

    x_prev = sqrt(ab_prev)/sqrt(ab_t) * (x_t - sqrt(1 - ab_t) * eps_hat)
             + sqrt(1 - ab_prev) * eps_hat

with eps_hat the noise prediction at (x_t, t).  The functions here take an
``eps_fn(x, t) -> eps_hat`` callable so the same code drives the trained
decoder, a zero stub, or an oracle that returns the true noise.  Arrays pass
through untouched apart from scalar arithmetic, so numpy arrays and torch
tensors both work.
"""

from __future__ import annotations

import math

import numpy as np

from .schedule import NoiseSchedule


def _step(x_t, eps_hat, ab_t: float, ab_prev: float):
    a = math.sqrt(ab_prev) / math.sqrt(ab_t)
    return a * (x_t - math.sqrt(1.0 - ab_t) * eps_hat) + math.sqrt(1.0 - ab_prev) * eps_hat


def ddim_step(x_t, t: int, t_prev: int, eps_fn, schedule: NoiseSchedule):
    """One deterministic denoising step; evaluates eps_fn exactly once."""
    if not 0 <= t_prev < t <= schedule.T:
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    eps_hat = eps_fn(x_t, t)
    return _step(x_t, eps_hat, float(schedule.alpha_bar[t]), float(schedule.alpha_bar[t_prev]))


def timestep_sequence(T: int, substeps: int) -> np.ndarray:
    """Increasing timesteps 0 = t_0 < ... < t_k = T with at most `substeps` steps."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if substeps > T:
        raise ValueError(f"substeps ({substeps}) must not exceed T ({T})")
    ts = np.unique(np.round(np.linspace(0, T, substeps + 1)).astype(int))
    assert ts[0] == 0 and ts[-1] == T
    return ts


def ddim_sample(x_T, eps_fn, schedule: NoiseSchedule, substeps: int):
    """Iterate the update from T down to 0 along a strided timestep sequence."""
    ts = timestep_sequence(schedule.T, substeps)
    x = x_T
    for i in range(len(ts) - 1, 0, -1):
        x = ddim_step(x, int(ts[i]), int(ts[i - 1]), eps_fn, schedule)
    return x


def ddim_invert(x0, eps_fn, schedule: NoiseSchedule, substeps: int):
    """Run the update in reverse order: map a clean image to its noise endpoint.

    The step from t_prev up to t inverts `_step` exactly, with eps_hat
    evaluated at the current image and the destination timestep t (the same
    pairing a subsequent sampling pass will use, up to the usual first-order
    inversion approximation; exact for eps-predictions independent of x).
    """
    ts = timestep_sequence(schedule.T, substeps)
    x = x0
    for i in range(len(ts) - 1):
        t_prev, t = int(ts[i]), int(ts[i + 1])
        eps_hat = eps_fn(x, t)
        ab_t = float(schedule.alpha_bar[t])
        ab_prev = float(schedule.alpha_bar[t_prev])
        a = math.sqrt(ab_t) / math.sqrt(ab_prev)
        x = a * (x - math.sqrt(1.0 - ab_prev) * eps_hat) + math.sqrt(1.0 - ab_t) * eps_hat
    return x


def zero_eps(x, t):
    """Stub decoder predicting zero noise; used by algebra tests and oracles."""
    return x * 0
