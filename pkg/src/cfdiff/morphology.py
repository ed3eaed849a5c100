"""Binary mask algebra and dilation.

Masks are boolean arrays of identical shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MaskError

SQUARE = "square"
DISK = "disk"


def _check_shapes(*masks):
    shape = np.shape(masks[0])
    for m in masks[1:]:
        if np.shape(m) != shape:
            raise MaskError(f"mask shape mismatch: {np.shape(m)} vs {shape}")


def as_mask(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype != bool:
        if not np.all((a == 0) | (a == 1)):
            raise MaskError("mask values must be exactly 0 or 1")
        a = a.astype(bool)
    return a


def intersect(a, b):
    _check_shapes(a, b)
    return np.logical_and(a, b)


def union(a, b):
    _check_shapes(a, b)
    return np.logical_or(a, b)


def complement(a):
    return np.logical_not(a)


def area(a) -> int:
    return int(np.count_nonzero(a))


def is_subset(a, b) -> bool:
    _check_shapes(a, b)
    return not np.any(np.logical_and(a, np.logical_not(b)))


def _shift_or(src: np.ndarray, out: np.ndarray, dy: int, dx: int):
    """out |= src shifted by (dy, dx), with zero fill at the borders."""
    H, W = src.shape
    if abs(dy) >= H or abs(dx) >= W:
        return
    ys, yd = (slice(0, H - dy), slice(dy, H)) if dy >= 0 else (slice(-dy, H), slice(0, H + dy))
    xs, xd = (slice(0, W - dx), slice(dx, W)) if dx >= 0 else (slice(-dx, W), slice(0, W + dx))
    out[yd, xd] |= src[ys, xs]


def dilate(p, k: int, element: str = SQUARE) -> np.ndarray:
    """Dilate ``p`` with a k-by-k structuring element (k odd, full side length).

    The square element is applied separably (rows, then columns); ``"disk"``
    uses the Euclidean ball of radius (k - 1) / 2.
    """
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {k!r}")
    p = as_mask(p)
    if p.ndim != 2:
        raise MaskError(f"dilate expects a 2-D mask, got shape {p.shape}")
    r = (int(k) - 1) // 2
    if r == 0:
        return p.copy()
    if element == SQUARE:
        rows = p.copy()
        for d in range(1, r + 1):
            _shift_or(p, rows, 0, d)
            _shift_or(p, rows, 0, -d)
        out = rows.copy()
        for d in range(1, r + 1):
            _shift_or(rows, out, d, 0)
            _shift_or(rows, out, -d, 0)
        return out
    if element == DISK:
        out = p.copy()
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if (dy or dx) and dy * dy + dx * dx <= r * r:
                    _shift_or(p, out, dy, dx)
        return out
    raise ValueError(f"unknown structuring element {element!r}")


@dataclass
class MaskSet:
    """Brain mask b, pathology mask p and (optionally) the inpaint mask m."""

    brain: np.ndarray
    pathology: np.ndarray
    inpaint: np.ndarray | None = None

    def __post_init__(self):
        self.brain = as_mask(self.brain)
        self.pathology = as_mask(self.pathology)
        if self.inpaint is not None:
            self.inpaint = as_mask(self.inpaint)
            _check_shapes(self.brain, self.pathology, self.inpaint)
        else:
            _check_shapes(self.brain, self.pathology)

    def check_pathology_in_brain(self):
        if not is_subset(self.pathology, self.brain):
            raise MaskError("pathology mask is not contained in the brain mask")
