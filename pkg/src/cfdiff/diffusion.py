"""Forward corruption and ancestral reverse steps for a DDPM.

All functions are generic over the denoiser: anything callable as
``denoiser(DenoiserInput) -> eps_hat`` works.
"""

from __future__ import annotations

import numpy as np

from .conditioning import DenoiserInput
from .rng import SeededRng
from .schedule import NoiseSchedule


def forward_step(x_prev: np.ndarray, t: int, schedule: NoiseSchedule, rng: SeededRng) -> np.ndarray:
    """One step of q(x_t | x_{t-1})."""
    t = schedule.check_t(t)
    beta = schedule.beta[t]
    return np.sqrt(1.0 - beta) * x_prev + np.sqrt(beta) * rng.normal(np.shape(x_prev))


def forward_marginal(x0: np.ndarray, t: int, schedule: NoiseSchedule, rng: SeededRng):
    """Sample x_t ~ q(x_t | x_0) in one shot.

    Returns ``(x_t, eps)`` where ``eps`` is the exact noise used. At t = 0
    no noise is drawn and ``(x0, 0)`` is returned.
    """
    t = schedule.check_t(t, low=0)
    if t == 0:
        return np.array(x0, dtype=float, copy=True), np.zeros(np.shape(x0))
    ab = schedule.alpha_bar[t]
    eps = rng.normal(np.shape(x0))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, eps


def posterior_mean(x_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    t = schedule.check_t(t)
    if np.shape(x_t) != np.shape(eps_hat):
        raise ValueError(f"eps_hat shape {np.shape(eps_hat)} != x_t shape {np.shape(x_t)}")
    coef = schedule.beta[t] / np.sqrt(1.0 - schedule.alpha_bar[t])
    return (x_t - coef * eps_hat) / np.sqrt(schedule.alpha[t])


def reverse_step(x_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule,
                 rng: SeededRng) -> np.ndarray:
    """x_{t-1} = mean + sigma_t z. No noise is drawn when sigma_t = 0 or t = 1."""
    mean = posterior_mean(x_t, eps_hat, t, schedule)
    s = schedule.sigma(t)
    if t == 1 or s == 0.0:
        return mean
    return mean + s * rng.normal(np.shape(x_t))


def sample(denoiser, cond, schedule: NoiseSchedule, rng: SeededRng, x_T: np.ndarray | None = None,
           extra: tuple[np.ndarray, ...] = ()) -> np.ndarray:
    """Ancestral sampling from x_T ~ N(0, I) down to x_0 under conditioning ``cond``.

    ``cond`` is a MaskSet (brain and pathology masks are used).
    """
    x = rng.normal(np.shape(cond.brain)) if x_T is None else np.array(x_T, dtype=float)
    for t in range(schedule.T, 0, -1):
        eps = denoiser(DenoiserInput(x, cond.brain, cond.pathology, t, extra))
        x = reverse_step(x, eps, t, schedule, rng)
    return x
