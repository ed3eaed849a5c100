"""The conditioning signal handed to every denoiser.

Masks travel alongside x_t as extra input channels; the Palette variant adds
the masked prior image and the inpaint mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def is_binary(a: np.ndarray) -> bool:
    return bool(np.all((a == 0) | (a == 1)))


@dataclass(frozen=True)
class DenoiserInput:
    """``x_t`` may carry a leading batch axis; ``t`` is then an int or (N,) array."""

    x_t: np.ndarray
    brain: np.ndarray
    pathology: np.ndarray
    t: int | np.ndarray
    extra: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        shape = np.shape(self.x_t)
        for name, a in [("brain", self.brain), ("pathology", self.pathology),
                        *[(f"extra[{i}]", e) for i, e in enumerate(self.extra)]]:
            if np.shape(a) != shape:
                raise ValueError(f"{name} has shape {np.shape(a)}, expected {shape}")
        if not (is_binary(self.brain) and is_binary(self.pathology)):
            raise ValueError("brain and pathology masks must be {0,1}-valued")

    @property
    def channels(self) -> int:
        return 3 + len(self.extra)

    def stacked(self) -> np.ndarray:
        """Channel-concatenated input, shape (N, C, H, W)."""
        chans = [self.x_t, self.brain, self.pathology, *self.extra]
        arr = np.stack([np.asarray(c, dtype=float) for c in chans], axis=-3)
        return arr if arr.ndim == 4 else arr[None]
