"""Counterfactual editing: MedEdit, naive RePaint, SDEdit and Palette.

Inpaint masks use m = 1 for the region the model regenerates. The known
region is re-drawn each step from q(x_{t-1} | x_0) and blended as
(1 - m) * known + m * unknown.

RNG draw order inside the RePaint loop (fixed, so traces are comparable):
x_T first; then per (t, u): known-region noise (t > 1 only), reverse-step
noise (t > 1 and sigma_t > 0), re-diffusion noise (u < U and t > 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditioning import DenoiserInput
from .diffusion import forward_marginal, reverse_step
from .errors import ConfigError, MaskError
from .morphology import SQUARE, MaskSet, dilate
from .rng import SeededRng
from .schedule import NoiseSchedule

MEDEDIT = "mededit"
NAIVE_REPAINT = "naive_repaint"
SDEDIT = "sdedit"
PALETTE = "palette"
METHODS = (MEDEDIT, NAIVE_REPAINT, SDEDIT, PALETTE)


@dataclass
class EditResult:
    counterfactual: np.ndarray
    inpaint_mask: np.ndarray
    trace: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class EditConfig:
    method: str
    k: int = 7
    U: int = 1
    encoding_ratio: float = 0.2
    element: str = SQUARE
    palette_mask: str = "dilated"  # or "pathology"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if int(self.k) != self.k or self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"{self.method}.k must be an odd integer >= 1, got {self.k}")
        if int(self.U) != self.U or self.U < 1:
            raise ConfigError(f"{self.method}.U must be an integer >= 1, got {self.U}")
        if not 0.0 < self.encoding_ratio <= 1.0:
            raise ConfigError(f"{self.method}.encoding_ratio must be in (0, 1], got {self.encoding_ratio}")
        if self.palette_mask not in ("dilated", "pathology"):
            raise ConfigError(f"palette_mask must be 'dilated' or 'pathology', got {self.palette_mask!r}")


def _check_inputs(x0, b, p) -> MaskSet:
    masks = MaskSet(b, p)
    if np.shape(x0) != masks.brain.shape:
        raise MaskError(f"image shape {np.shape(x0)} does not match mask shape {masks.brain.shape}")
    masks.check_pathology_in_brain()
    return masks


def _check_channels(denoiser, expected):
    got = getattr(denoiser, "in_channels", expected)
    if got != expected:
        raise ValueError(f"denoiser expects {got} input channels, this method supplies {expected}")


def repaint(x0, masks: MaskSet, m: np.ndarray, denoiser, schedule: NoiseSchedule, U: int,
            rng: SeededRng, trace: bool = False) -> EditResult:
    """Mask-conditioned RePaint with U resampling passes per timestep."""
    x0 = np.asarray(x0, dtype=float)
    b, p = masks.brain, masks.pathology
    ab, beta = schedule.alpha_bar, schedule.beta
    snaps = []
    x_t = rng.normal(x0.shape)
    x_prev = x_t
    for t in range(schedule.T, 0, -1):
        for u in range(1, U + 1):
            if t > 1:
                x_known = np.sqrt(ab[t - 1]) * x0 + np.sqrt(1.0 - ab[t - 1]) * rng.normal(x0.shape)
            else:
                x_known = x0
            eps = denoiser(DenoiserInput(x_t, b, p, t))
            x_unknown = reverse_step(x_t, eps, t, schedule, rng)
            x_prev = np.where(m, x_unknown, x_known)
            if trace:
                snaps.append((t, u, x_prev.copy()))
            if u < U and t > 1:
                bj = beta[max(t - 1, 1)]
                x_t = np.sqrt(1.0 - bj) * x_prev + np.sqrt(bj) * rng.normal(x0.shape)
        x_t = x_prev
    return EditResult(x_prev, m.copy(), snaps)


def mededit(x0, b, p, denoiser, schedule: NoiseSchedule, k: int, U: int, rng: SeededRng,
            element: str = SQUARE, trace: bool = False) -> EditResult:
    """Regenerate m = dilate(p, k) and keep the rest; pixels with m = 0 return bit-equal to x0."""
    masks = _check_inputs(x0, b, p)
    _check_channels(denoiser, 3)
    if int(U) != U or U < 1:
        raise ValueError(f"U must be >= 1, got {U}")
    m = dilate(masks.pathology, k, element)
    return repaint(x0, masks, m, denoiser, schedule, U, rng, trace)


def naive_repaint(x0, b, p, denoiser, schedule: NoiseSchedule, U: int, rng: SeededRng,
                  trace: bool = False) -> EditResult:
    masks = _check_inputs(x0, b, p)
    _check_channels(denoiser, 3)
    if int(U) != U or U < 1:
        raise ValueError(f"U must be >= 1, got {U}")
    return repaint(x0, masks, masks.pathology, denoiser, schedule, U, rng, trace)


def encoding_step(schedule: NoiseSchedule, encoding_ratio: float) -> int:
    if not 0.0 < encoding_ratio <= 1.0:
        raise ValueError(f"encoding_ratio must be in (0, 1], got {encoding_ratio}")
    return int(np.floor(encoding_ratio * schedule.T + 0.5))


def sdedit(x0, b, p, denoiser, schedule: NoiseSchedule, encoding_ratio: float, rng: SeededRng,
           trace: bool = False) -> EditResult:
    """Noise x0 up to t* = round(ratio * T), then denoise under the mask condition.

    Every pixel is regenerated; the reported inpaint mask is the brain mask.
    """
    masks = _check_inputs(x0, b, p)
    _check_channels(denoiser, 3)
    t_star = encoding_step(schedule, encoding_ratio)
    x, _ = forward_marginal(np.asarray(x0, dtype=float), t_star, schedule, rng)
    snaps = []
    for t in range(t_star, 0, -1):
        eps = denoiser(DenoiserInput(x, masks.brain, masks.pathology, t))
        x = reverse_step(x, eps, t, schedule, rng)
        if trace:
            snaps.append((t, 1, x.copy()))
    return EditResult(x, masks.brain.copy(), snaps)


def palette_inpaint(x0, b, p, palette_denoiser, schedule: NoiseSchedule, k: int, rng: SeededRng,
                    element: str = SQUARE, ablate_condition: bool = False,
                    trace: bool = False) -> EditResult:
    """Inpaint m = dilate(p, k) with a denoiser that sees ((1 - m) * x0, m).

    One reverse pass, no resampling; the final image keeps x0 outside m.
    ``ablate_condition`` zeroes both known-region channels.
    """
    masks = _check_inputs(x0, b, p)
    _check_channels(palette_denoiser, 5)
    x0 = np.asarray(x0, dtype=float)
    m = dilate(masks.pathology, k, element)
    if ablate_condition:
        cond = (np.zeros_like(x0), np.zeros_like(x0))
    else:
        cond = (np.where(m, 0.0, x0), m.astype(float))
    x = rng.normal(x0.shape)
    snaps = []
    for t in range(schedule.T, 0, -1):
        eps = palette_denoiser(DenoiserInput(x, masks.brain, masks.pathology, t, cond))
        x = reverse_step(x, eps, t, schedule, rng)
        if trace:
            snaps.append((t, 1, x.copy()))
    return EditResult(np.where(m, x, x0), m, snaps)


def run_edit(cfg: EditConfig, x0, b, p, denoiser, palette_denoiser, schedule: NoiseSchedule,
             rng: SeededRng) -> EditResult:
    if cfg.method == MEDEDIT:
        return mededit(x0, b, p, denoiser, schedule, cfg.k, cfg.U, rng, cfg.element)
    if cfg.method == NAIVE_REPAINT:
        return naive_repaint(x0, b, p, denoiser, schedule, cfg.U, rng)
    if cfg.method == SDEDIT:
        return sdedit(x0, b, p, denoiser, schedule, cfg.encoding_ratio, rng)
    k = cfg.k if cfg.palette_mask == "dilated" else 1
    return palette_inpaint(x0, b, p, palette_denoiser, schedule, k, rng, cfg.element)

