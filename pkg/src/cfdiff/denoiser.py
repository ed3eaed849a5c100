"""Noise predictors eps(x_t, c, t).

``AnalyticDenoiser`` is Bayes-optimal for the phantom distribution: it
computes E[x_0 | x_t] under the exact per-pixel conditional prior and
converts it to a noise estimate. ``AnalyticPaletteDenoiser`` additionally
reads the known region (masked prior image + inpaint mask) and infers the
visible ventricle size from it, which is how a known-region-conditioned
inpainter behaves. The trainable network lives in :mod:`cfdiff.tiny`.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .conditioning import DenoiserInput
from .diffusion import forward_marginal
from .phantom import (LEFT, NONE, RIGHT, PhantomParams, PixelwiseGaussianPrior, _two_component_prior,
                      conditional_prior, lesion_side_of, ventricle_probability)
from .rng import SeededRng
from .schedule import NoiseSchedule


def analytic_epsilon(inp: DenoiserInput, prior: PixelwiseGaussianPrior, schedule: NoiseSchedule) -> np.ndarray:
    """Noise estimate implied by the exact posterior mean under ``prior``.

    Mixture responsibilities use the marginal of x_t for each component,
    N(sqrt(ab) mu_k, ab s_k^2 + 1 - ab), and are normalised in log space.
    """
    t = np.asarray(inp.t)
    if np.any(t < 1):
        raise ValueError("analytic_epsilon is undefined at t = 0 (1 - alpha_bar_0 = 0)")
    x = np.asarray(inp.x_t, dtype=float)
    ab = schedule.alpha_bar[t]
    if x.ndim == 3 and ab.ndim == 1:
        ab = ab[:, None, None]
    sab = np.sqrt(ab)
    v = 1.0 - ab
    single = prior.collapsed
    if single is not None:
        mu, s = single
        s2 = s * s
        m = (mu * v + sab * x * s2) / (v + ab * s2)
        return (x - sab * m) / np.sqrt(v)
    mu, s2, w = prior.means, prior.stds ** 2, prior.weights
    if x.ndim == 3:
        mu, s2, w = mu[:, None], s2[:, None], w[:, None]
    var = ab * s2 + v
    with np.errstate(divide="ignore"):
        logr = np.log(w) - 0.5 * np.log(var) - (x - sab * mu) ** 2 / (2.0 * var)
    logr -= np.max(logr, axis=0, keepdims=True)
    r = np.exp(logr)
    r /= r.sum(axis=0, keepdims=True)
    m_k = (mu * v + sab * x * s2) / (v + ab * s2)
    m = np.sum(r * m_k, axis=0)
    return (x - sab * m) / np.sqrt(v)


class _PriorCache:
    def __init__(self, size=16):
        self.size = size
        self._d: OrderedDict = OrderedDict()

    def get(self, key, build):
        if key in self._d:
            self._d.move_to_end(key)
            return self._d[key]
        val = build()
        self._d[key] = val
        if len(self._d) > self.size:
            self._d.popitem(last=False)
        return val


def _key(*arrays):
    return tuple(np.ascontiguousarray(a).tobytes() for a in arrays)


class AnalyticDenoiser:
    """Bayes-optimal eps for phantoms conditioned on (brain, pathology)."""

    in_channels = 3

    def __init__(self, params: PhantomParams, schedule: NoiseSchedule):
        self.params = params
        self.schedule = schedule
        self._cache = _PriorCache()

    def __getstate__(self):
        return {"params": self.params, "schedule": self.schedule}

    def __setstate__(self, state):
        self.__init__(state["params"], state["schedule"])

    def prior(self, inp_brain, inp_path, extra=()) -> PixelwiseGaussianPrior:
        b = np.asarray(inp_brain, dtype=bool)
        p = np.asarray(inp_path, dtype=bool)
        return self._cache.get(_key(b, p), lambda: conditional_prior(b, p, self.params))

    def __call__(self, inp: DenoiserInput) -> np.ndarray:
        if np.ndim(inp.x_t) == 2:
            return analytic_epsilon(inp, self.prior(inp.brain, inp.pathology, inp.extra), self.schedule)
        t = np.broadcast_to(np.asarray(inp.t), (len(inp.x_t),))
        out = np.empty(np.shape(inp.x_t))
        for i in range(len(out)):
            extra = tuple(e[i] for e in inp.extra)
            item = DenoiserInput(inp.x_t[i], inp.brain[i], inp.pathology[i], int(t[i]), extra)
            out[i] = analytic_epsilon(item, self.prior(item.brain, item.pathology, extra), self.schedule)
        return out


class AnalyticPaletteDenoiser(AnalyticDenoiser):
    """Known-region-conditioned variant; extra channels are ((1 - m) * x0, m).

    Known pixels (m = 0) are treated as observed exactly. Inside m the
    ipsilateral ventricle radius is not taken from the lesion size but
    inferred from the known pixels: a flat prior over a radius grid is
    updated with the Gaussian likelihood of the visible anatomy. The
    inpainter therefore continues whatever ventricle the prior scan shows.
    """

    in_channels = 5

    def __init__(self, params: PhantomParams, schedule: NoiseSchedule, radius_step: float = 0.05):
        super().__init__(params, schedule)
        self.radius_step = radius_step

    def __getstate__(self):
        return {"params": self.params, "schedule": self.schedule, "radius_step": self.radius_step}

    def __setstate__(self, state):
        self.__init__(state["params"], state["schedule"], state["radius_step"])

    def radius_posterior(self, brain, pathology, masked, known, side):
        P = self.params
        grid = np.arange(0.5, P.max_ventricle_radius + 1.0 + 1e-9, self.radius_step)
        cy, cx = P.ventricle_center(side)
        yy, xx = np.mgrid[0:P.size, 0:P.size].astype(float)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        use = known & brain & ~pathology & (d2 <= (grid[-1] + 1.0) ** 2)
        obs = masked[use]
        sd = max(P.noise_std, 1e-3)
        loglik = np.empty(len(grid))
        for i, r in enumerate(grid):
            pred = np.where(d2[use] <= r * r, P.ventricle, P.tissue)
            loglik[i] = -np.sum((obs - pred) ** 2) / (2 * sd * sd)
        w = np.exp(loglik - loglik.max())
        return grid, w / w.sum()

    def prior(self, brain, pathology, extra=()) -> PixelwiseGaussianPrior:
        if len(extra) != 2:
            raise ValueError(f"palette denoiser needs 2 extra channels, got {len(extra)}")
        b = np.asarray(brain, dtype=bool)
        p = np.asarray(pathology, dtype=bool)
        masked = np.asarray(extra[0], dtype=float)
        m = np.asarray(extra[1]) > 0.5
        return self._cache.get(_key(b, p, masked, m), lambda: self._build(b, p, masked, m))

    def _build(self, b, p, masked, m):
        P = self.params
        base = conditional_prior(b, p, P)
        side = lesion_side_of(p, P)
        if side != NONE and np.any(m):
            grid, w = self.radius_posterior(b, p, masked, ~m, side)
            p_vent = np.zeros(b.shape)
            for r, wi in zip(grid, w):
                if wi > 1e-12:
                    p_vent += wi * ventricle_probability(P, P.ventricle_center(side), r, b.shape)
            other = RIGHT if side == LEFT else LEFT
            p_vent = np.maximum(np.clip(p_vent, 0, 1),
                                ventricle_probability(P, P.ventricle_center(other), P.ventricle_radius, b.shape))
            base = _two_component_prior(b, p, p_vent, P)
        known = ~m
        weights = base.weights.copy()
        means = base.means.copy()
        stds = base.stds.copy()
        weights[0][known], weights[1][known] = 0.0, 1.0
        means[1][known] = masked[known]
        stds[1][known] = 0.0
        return PixelwiseGaussianPrior(weights, means, stds)


def denoising_loss(denoiser, x0, brain, pathology, schedule: NoiseSchedule, rng: SeededRng,
                   extra=(), per_sample: bool = False):
    """Monte-Carlo estimate of E||eps - eps_hat(x_t, c, t)||^2 per pixel.

    ``x0``, masks and every extra channel carry a leading batch axis. One
    timestep t ~ U{1..T} and one noise draw are used per item.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 3 or len(x0) == 0:
        raise ValueError("denoising_loss needs a nonempty (N, H, W) batch")
    n = len(x0)
    t = rng.integers(1, schedule.T + 1, size=n)
    x_t = np.empty_like(x0)
    eps = np.empty_like(x0)
    for i in range(n):
        x_t[i], eps[i] = forward_marginal(x0[i], int(t[i]), schedule, rng)
    eps_hat = denoiser(DenoiserInput(x_t, brain, pathology, t, tuple(extra)))
    err = np.mean((eps - eps_hat) ** 2, axis=(1, 2))
    return err if per_sample else float(err.mean())
