"""Synthetic brain phantoms with a built-in indirect lesion effect.

Each phantom is an elliptical brain with two disk-shaped ventricles placed
symmetrically about the vertical midline. A lesion is a union of 1-3 disks
hugging the lateral wall of one ventricle. The ventricle on the lesion side
grows by ``gain`` pixels of radius per 100 lesion pixels, so the healthy
counterpart of a lesioned scan differs outside the lesion too.

Given (brain mask, lesion mask) the pixel distribution is known exactly,
which is what :func:`conditional_prior` returns.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, MaskError, PhantomGenerationError
from .morphology import MaskSet, area, is_subset
from .rng import SeededRng

LEFT, RIGHT, NONE = "left", "right", "none"


@dataclass(frozen=True)
class PhantomParams:
    size: int = 32
    brain_axes: tuple[float, float] = (14.0, 13.0)  # (vertical, horizontal) semi-axes
    brain_axis_jitter: float = 1.0
    ventricle_offset: float = 4.5  # horizontal distance of each ventricle centre from the midline
    ventricle_radius: float = 2.0
    ventricle_jitter: float = 0.0  # base radius ~ U[r - j, r + j]
    gain: float = 4.0  # radius px per 100 lesion px
    background: float = 0.0
    ventricle: float = 0.25
    lesion: float = 0.45
    tissue: float = 0.65
    noise_std: float = 0.02
    background_noise_std: float = 0.0
    lesion_area_range: tuple[int, int] = (8, 60)
    lesion_disks: tuple[int, int] = (1, 3)
    lesion_disk_radius: tuple[float, float] = (1.5, 3.0)
    max_retries: int = 200

    def __post_init__(self):
        levels = {"background": self.background, "ventricle": self.ventricle,
                  "lesion": self.lesion, "tissue": self.tissue}
        for name, v in levels.items():
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"intensity {name}={v} outside [0, 1]")
        for (n1, v1), (n2, v2) in itertools.combinations(levels.items(), 2):
            if abs(v1 - v2) < 0.15 - 1e-12:
                raise ConfigError(f"intensities {n1}={v1} and {n2}={v2} closer than 0.15")
        if self.gain < 0:
            raise ConfigError(f"gain must be >= 0, got {self.gain}")
        if self.noise_std < 0 or self.background_noise_std < 0:
            raise ConfigError("noise std must be >= 0")
        lo, hi = self.lesion_area_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad lesion_area_range {self.lesion_area_range}")
        if self.size < 8:
            raise ConfigError(f"size must be >= 8, got {self.size}")

    @property
    def center(self) -> tuple[float, float]:
        c = (self.size - 1) / 2.0
        return c, c

    def ventricle_center(self, side: str) -> tuple[float, float]:
        cy, cx = self.center
        return (cy, cx - self.ventricle_offset) if side == LEFT else (cy, cx + self.ventricle_offset)

    @property
    def max_ventricle_radius(self) -> float:
        return self.ventricle_radius + self.ventricle_jitter + self.gain * self.lesion_area_range[1] / 100.0

    def half_gap(self, level: str) -> float:
        """Half the distance from ``level`` to the nearest other intensity level."""
        levels = {"background": self.background, "ventricle": self.ventricle,
                  "lesion": self.lesion, "tissue": self.tissue}
        v = levels[level]
        return min(abs(v - w) for k, w in levels.items() if k != level) / 2.0


@dataclass
class PhantomSample:
    image: np.ndarray
    masks: MaskSet
    ventricle_mask: np.ndarray
    lesion_side: str
    ventricle_areas: dict[str, int]
    clean: np.ndarray = field(repr=False)
    brain_axes: tuple[float, float] = (0.0, 0.0)
    ventricle_radii: dict[str, float] = field(default_factory=dict)

    @property
    def true_ventricle_area(self) -> int:
        """Area of the ventricle on the lesion side (both ventricles if healthy)."""
        if self.lesion_side == NONE:
            return sum(self.ventricle_areas.values())
        return self.ventricle_areas[self.lesion_side]

    @property
    def lesion_area(self) -> int:
        return area(self.masks.pathology)


def _grid(size):
    return np.mgrid[0:size, 0:size].astype(float)


def disk_mask(size: int, center, radius: float) -> np.ndarray:
    yy, xx = _grid(size)
    return (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius * radius


def ellipse_mask(size: int, center, axes) -> np.ndarray:
    yy, xx = _grid(size)
    return ((yy - center[0]) / axes[0]) ** 2 + ((xx - center[1]) / axes[1]) ** 2 <= 1.0


def side_mask(size: int, side: str, params: PhantomParams) -> np.ndarray:
    _, xx = _grid(size)
    cx = params.center[1]
    return xx < cx if side == LEFT else xx > cx


def ventricle_radius(params: PhantomParams, lesion_area: int, base: float | None = None) -> float:
    """Ipsilateral ventricle radius after enlargement by a lesion of ``lesion_area`` px."""
    base = params.ventricle_radius if base is None else base
    return base + params.gain * lesion_area / 100.0


def lesion_side_of(p: np.ndarray, params: PhantomParams) -> str:
    if not np.any(p):
        return NONE
    _, xs = np.nonzero(p)
    return LEFT if xs.mean() < params.center[1] else RIGHT


def _other(side):
    return RIGHT if side == LEFT else LEFT


def render(brain, pathology, ventricles, params: PhantomParams) -> np.ndarray:
    img = np.full(brain.shape, params.background)
    img[brain] = params.tissue
    img[ventricles & brain] = params.ventricle
    img[pathology] = params.lesion
    return img


def _draw_lesion(params, brain, side, rng):
    n = params.size
    vc = params.ventricle_center(side)
    oc = params.ventricle_center(_other(side))
    r_max = params.max_ventricle_radius
    allowed = (brain & side_mask(n, side, params)
               & ~disk_mask(n, vc, r_max) & ~disk_mask(n, oc, params.ventricle_radius + params.ventricle_jitter))
    lateral = -1.0 if side == LEFT else 1.0
    lo, hi = params.lesion_area_range
    for _ in range(params.max_retries):
        lesion = np.zeros((n, n), dtype=bool)
        for _ in range(int(rng.integers(params.lesion_disks[0], params.lesion_disks[1] + 1))):
            theta = rng.uniform(-0.45 * np.pi, 0.45 * np.pi)
            rad = rng.uniform(*params.lesion_disk_radius)
            d = r_max + rng.uniform(0.5, rad)
            c = (vc[0] + d * np.sin(theta), vc[1] + lateral * d * np.cos(theta))
            lesion |= disk_mask(n, c, rad)
        lesion &= allowed
        if lo <= area(lesion) <= hi:
            return lesion
    raise PhantomGenerationError(
        f"could not place a lesion with area in [{lo}, {hi}] after {params.max_retries} tries")


def generate(params: PhantomParams, with_lesion: bool, rng: SeededRng) -> PhantomSample:
    """Draw one phantom. The rng call sequence is fixed, so seeds are reproducible."""
    n = params.size
    j = params.brain_axis_jitter
    axes = (params.brain_axes[0] + rng.uniform(-j, j), params.brain_axes[1] + rng.uniform(-j, j))
    brain = ellipse_mask(n, params.center, axes)
    vj = params.ventricle_jitter
    radii = {s: params.ventricle_radius + (rng.uniform(-vj, vj) if vj > 0 else 0.0) for s in (LEFT, RIGHT)}
    side = NONE
    lesion = np.zeros((n, n), dtype=bool)
    if with_lesion:
        side = LEFT if rng.uniform() < 0.5 else RIGHT
        lesion = _draw_lesion(params, brain, side, rng)
        radii[side] = ventricle_radius(params, area(lesion), base=radii[side])
    vents = {s: disk_mask(n, params.ventricle_center(s), radii[s]) & brain for s in (LEFT, RIGHT)}
    ventricles = vents[LEFT] | vents[RIGHT]
    if np.any(ventricles & lesion):
        raise PhantomGenerationError("lesion overlaps a ventricle")
    clean = render(brain, lesion, ventricles, params)
    std = np.where(brain, params.noise_std, params.background_noise_std)
    image = np.clip(clean + std * rng.normal((n, n)), 0.0, 1.0)
    return PhantomSample(
        image=image, masks=MaskSet(brain, lesion), ventricle_mask=ventricles, lesion_side=side,
        ventricle_areas={s: area(v) for s, v in vents.items()}, clean=clean,
        brain_axes=axes, ventricle_radii=radii,
    )


@dataclass(frozen=True)
class PixelwiseGaussianPrior:
    """Independent per-pixel Gaussian mixtures; arrays have shape (K, H, W)."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        if not (self.weights.shape == self.means.shape == self.stds.shape):
            raise ValueError("weights, means and stds must share a shape")
        if np.any(self.weights < 0) or not np.allclose(self.weights.sum(axis=0), 1.0, atol=1e-12):
            raise ValueError("mixture weights must be nonnegative and sum to 1 per pixel")
        if np.any(self.stds < 0):
            raise ValueError("component stds must be >= 0")

    @property
    def shape(self):
        return self.means.shape[1:]

    @cached_property
    def collapsed(self):
        """(means, stds) of a single-component equivalent, or None if any pixel is a true mixture."""
        if not np.all((self.weights == 0) | (self.weights == 1)):
            return None
        k = np.argmax(self.weights, axis=0)[None]
        return (np.take_along_axis(self.means, k, axis=0)[0],
                np.take_along_axis(self.stds, k, axis=0)[0])

    def mean_image(self) -> np.ndarray:
        return np.sum(self.weights * self.means, axis=0)

    def mode_image(self) -> np.ndarray:
        """Mean of the heaviest component per pixel (ties go to the first)."""
        k = np.argmax(self.weights, axis=0)
        return np.take_along_axis(self.means, k[None], axis=0)[0]

    @classmethod
    def single(cls, mean, std):
        mean = np.asarray(mean, dtype=float)[None]
        std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape[1:])[None].copy()
        return cls(np.ones_like(mean), mean, std)


def ventricle_probability(params: PhantomParams, center, radius: float, shape) -> np.ndarray:
    """P(pixel inside a ventricle of radius ~ U[radius - j, radius + j])."""
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    d = np.sqrt((yy - center[0]) ** 2 + (xx - center[1]) ** 2)
    j = params.ventricle_jitter
    if j == 0:
        return (d * d <= radius * radius).astype(float)
    return np.clip((radius + j - d) / (2 * j), 0.0, 1.0)


def _two_component_prior(brain, pathology, p_vent, params: PhantomParams) -> PixelwiseGaussianPrior:
    shape = brain.shape
    inside = brain & ~pathology
    w_v = np.where(inside, p_vent, 0.0)
    means = np.stack([np.full(shape, params.ventricle), np.full(shape, params.tissue)])
    means[1][~brain] = params.background
    means[1][pathology] = params.lesion
    stds = np.stack([np.full(shape, params.noise_std)] * 2)
    stds[1][~brain] = params.background_noise_std
    weights = np.stack([w_v, 1.0 - w_v])
    return PixelwiseGaussianPrior(weights, means, stds)


def conditional_prior(brain, pathology, params: PhantomParams) -> PixelwiseGaussianPrior:
    """Exact per-pixel distribution of a phantom given its brain and lesion masks.

    Component 0 is "ventricle", component 1 is whatever else the pixel is
    (tissue, lesion or background). Without radius jitter every weight is 0
    or 1; with jitter, pixels near a ventricle wall get a genuine mixture.
    """
    brain = np.asarray(brain, dtype=bool)
    pathology = np.asarray(pathology, dtype=bool)
    if not is_subset(pathology, brain):
        raise MaskError("pathology mask is not contained in the brain mask")
    side = lesion_side_of(pathology, params)
    p_vent = np.zeros(brain.shape)
    for s in (LEFT, RIGHT):
        r = ventricle_radius(params, area(pathology)) if s == side else params.ventricle_radius
        p_vent = np.maximum(p_vent, ventricle_probability(params, params.ventricle_center(s), r, brain.shape))
    return _two_component_prior(brain, pathology, p_vent, params)


def expected_ventricle_mask(brain, pathology, params: PhantomParams, side: str | None = None) -> np.ndarray:
    """Nominal ventricle on ``side`` (default: the lesion side) implied by the lesion area."""
    side = lesion_side_of(pathology, params) if side is None else side
    lesion_side = lesion_side_of(pathology, params)
    r = ventricle_radius(params, area(pathology)) if side == lesion_side else params.ventricle_radius
    return disk_mask(params.size, params.ventricle_center(side), r) & np.asarray(brain, dtype=bool)


def stratify(samples) -> dict:
    """Split lesioned samples into small / medium / large by area rank (25/50/25).

    Accepts PhantomSamples or plain areas. Ties are broken by input order.
    Returns index lists plus the realized area thresholds.
    """
    areas = [s.lesion_area if isinstance(s, PhantomSample) else int(s) for s in samples]
    if not areas:
        raise ValueError("cannot stratify an empty set")
    n = len(areas)
    order = sorted(range(n), key=lambda i: (areas[i], i))
    q = int(np.floor(n / 4 + 0.5))
    small, medium, large = order[:q], order[q:n - q], order[n - q:]
    return {
        "small": sorted(small), "medium": sorted(medium), "large": sorted(large),
        "small_max_area": max((areas[i] for i in small), default=None),
        "large_min_area": min((areas[i] for i in large), default=None),
    }
