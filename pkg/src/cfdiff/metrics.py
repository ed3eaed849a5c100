"""Evaluation metrics: Dice, Frechet distance over fixed random features,
a threshold lesion segmenter and the indirect-effect (ventricle area) error.

The feature extractor is a seeded Gaussian random projection standing in
for an Inception embedding, so Frechet values are only comparable between
methods evaluated with the same projection seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .errors import MetricError
from .morphology import area
from .phantom import (LEFT, RIGHT, NONE, PhantomParams, expected_ventricle_mask, lesion_side_of,
                      side_mask)
from .rng import SeededRng

FEATURE_DIM = 64
_PROJECTION_STREAM = 0x46454154  # separates projection draws from every other stream


def dice(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"dice shape mismatch: {a.shape} vs {b.shape}")
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / denom)


@dataclass(frozen=True)
class FeatureSet:
    n: int
    d: int
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "FeatureSet":
        feats = np.asarray(feats, dtype=float)
        if feats.ndim != 2 or len(feats) == 0:
            raise ValueError("features must be a nonempty (n, d) array")
        n, d = feats.shape
        if n < d:
            warnings.warn(f"only {n} samples for {d} feature dimensions; covariance is rank deficient",
                          stacklevel=2)
        cov = np.cov(feats, rowvar=False, ddof=1) if n > 1 else np.zeros((d, d))
        cov = np.atleast_2d(cov)
        return cls(n, d, feats.mean(axis=0), 0.5 * (cov + cov.T))


@lru_cache(maxsize=8)
def _projection(seed: int, n_in: int, d: int) -> np.ndarray:
    proj = SeededRng(seed, (_PROJECTION_STREAM,)).normal((n_in, d)) / np.sqrt(n_in)
    proj.setflags(write=False)
    return proj


def projection_matrix(seed: int, n_in: int, d: int = FEATURE_DIM) -> np.ndarray:
    return _projection(int(seed), int(n_in), int(d))


def extract_features(images, projection_seed: int, d: int = FEATURE_DIM,
                     projection: np.ndarray | None = None) -> FeatureSet:
    imgs = [np.asarray(im, dtype=float) for im in images]
    if not imgs:
        raise ValueError("no images given")
    shape = imgs[0].shape
    for im in imgs:
        if im.shape != shape:
            raise ValueError(f"inconsistent image shapes {im.shape} vs {shape}")
    flat = np.stack([im.ravel() for im in imgs])
    proj = projection_matrix(projection_seed, flat.shape[1], d) if projection is None else projection
    return FeatureSet.from_features(flat @ proj)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: FeatureSet, b: FeatureSet) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The trace of (S_a S_b)^{1/2} is taken from the symmetric PSD matrix
    S_a^{1/2} S_b S_a^{1/2}, which has the same eigenvalues.
    """
    if a.d != b.d:
        raise ValueError(f"feature dimension mismatch: {a.d} vs {b.d}")
    for fs in (a, b):
        if not (np.all(np.isfinite(fs.mean)) and np.all(np.isfinite(fs.cov))):
            raise ValueError("feature moments must be finite")
    diff = a.mean - b.mean
    ra = _psd_sqrt(a.cov)
    inner = ra @ b.cov @ ra
    ev = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_sqrt = np.sum(np.sqrt(np.clip(ev, 0.0, None)))
    val = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_sqrt)
    return max(val, 0.0)


def frechet_null_threshold(images, projection_seed: int, rng: SeededRng, n_splits: int = 20,
                           quantile: float = 0.95) -> float:
    """Quantile of the Frechet distance between random half-splits of one image set."""
    imgs = list(images)
    n = len(imgs)
    vals = []
    for _ in range(n_splits):
        perm = rng.permutation(n)
        half = n // 2
        a = extract_features([imgs[i] for i in perm[:half]], projection_seed)
        b = extract_features([imgs[i] for i in perm[half:2 * half]], projection_seed)
        vals.append(frechet_distance(a, b))
    return float(np.quantile(vals, quantile))


def segment_lesion(image, params: PhantomParams, brain=None, min_size: int = 3) -> np.ndarray:
    """Threshold segmenter: lesion-level pixels inside the brain, small blobs dropped.

    Without an explicit brain mask, every pixel brighter than halfway between
    background and the nearest tissue level counts as brain.
    """
    image = np.asarray(image, dtype=float)
    if brain is None:
        brain = image > params.background + params.half_gap("background")
    seg = (np.abs(image - params.lesion) < params.half_gap("lesion")) & np.asarray(brain, dtype=bool)
    labels, n = ndimage.label(seg, structure=np.ones((3, 3)))
    if n:
        sizes = np.bincount(labels.ravel())
        keep = sizes >= min_size
        keep[0] = False
        seg = keep[labels]
    return seg


def ventricle_area(image, brain, side: str, params: PhantomParams) -> int:
    image = np.asarray(image, dtype=float)
    band = np.abs(image - params.ventricle) < params.half_gap("ventricle")
    return area(band & np.asarray(brain, dtype=bool) & side_mask(params.size, side, params))


def indirect_effect_error(counterfactual, brain, pathology, params: PhantomParams) -> float:
    """|measured - expected| ipsilateral ventricle area, in pixels."""
    side = lesion_side_of(pathology, params)
    if side == NONE:
        raise MetricError("pathology mask is empty; lesion side is undefined")
    expected = area(expected_ventricle_mask(brain, pathology, params, side))
    return float(abs(ventricle_area(counterfactual, brain, side, params) - expected))


def healthy_mask(brain, pathology, prior_ventricles, params: PhantomParams) -> np.ndarray:
    """Brain tissue that should be unchanged by the edit: not lesion, not ventricle before or after."""
    b = np.asarray(brain, dtype=bool)
    p = np.asarray(pathology, dtype=bool)
    vent = np.asarray(prior_ventricles, dtype=bool)
    for s in (LEFT, RIGHT):
        vent = vent | expected_ventricle_mask(b, p, params, s)
    return b & ~p & ~vent


def masked_mae(a, b, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    return float(np.mean(np.abs(np.asarray(a) - np.asarray(b))[mask]))


def combined_score(dice_value: float, frechet: float) -> float:
    return (1.0 - dice_value) * frechet
