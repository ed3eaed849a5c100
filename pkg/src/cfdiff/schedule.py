"""Linear beta schedules and the derived DDPM coefficients.

Arrays are indexed by timestep: position 0 is the clean-data convention
(beta = 0, alpha = 1, alpha_bar = 1) and positions 1..T hold the schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

DDPM = "ddpm"
DDIM = "ddim"


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    sigma_mode: str = DDPM

    def check_t(self, t: int, low: int = 1) -> int:
        if not low <= t <= self.T:
            raise IndexError(f"timestep {t} outside [{low}, {self.T}]")
        return int(t)

    def sigma(self, t: int) -> float:
        return sigma(self, t)


def build_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                   sigma_mode: str = DDPM) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T!r}")
    if not 0.0 < beta_start:
        raise ConfigError(f"beta_start must be > 0, got {beta_start}")
    if not beta_start <= beta_end:
        raise ConfigError(f"beta_end must be >= beta_start, got beta_end={beta_end} < beta_start={beta_start}")
    if not beta_end < 1.0:
        raise ConfigError(f"beta_end must be < 1, got {beta_end}")
    if sigma_mode not in (DDPM, DDIM):
        raise ConfigError(f"sigma_mode must be '{DDPM}' or '{DDIM}', got {sigma_mode!r}")
    T = int(T)
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_start, beta_end, T) if T > 1 else beta_start
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for a in (beta, alpha, alpha_bar):
        a.setflags(write=False)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma_mode=sigma_mode)


def sigma(schedule: NoiseSchedule, t: int) -> float:
    """Reverse-step noise scale; zero in DDIM mode and at t = 1."""
    t = schedule.check_t(t)
    if schedule.sigma_mode == DDIM:
        return 0.0
    ab = schedule.alpha_bar
    return float(np.sqrt((1.0 - ab[t - 1]) / (1.0 - ab[t]) * schedule.beta[t]))
