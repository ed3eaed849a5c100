import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from cfdiff.conditioning import DenoiserInput
from cfdiff.denoiser import AnalyticDenoiser, AnalyticPaletteDenoiser, analytic_epsilon, denoising_loss
from cfdiff.diffusion import forward_marginal
from cfdiff.morphology import dilate
from cfdiff.phantom import LEFT, PhantomParams, PixelwiseGaussianPrior, generate
from cfdiff.rng import SeededRng

ONE = np.ones((1, 1))


def quadrature_posterior_mean(x, ab, w, mu, s):
    """E[x0 | x_t = x] by numerical integration over x0."""
    def prior(u):
        return sum(wk * np.exp(-(u - mk) ** 2 / (2 * sk * sk)) / sk for wk, mk, sk in zip(w, mu, s))

    def lik(u):
        return np.exp(-(x - np.sqrt(ab) * u) ** 2 / (2 * (1 - ab)))

    peak = x / np.sqrt(ab)
    lo, hi = min(min(mu) - 10 * max(s), peak - 1), max(max(mu) + 10 * max(s), peak + 1)
    pts = sorted(list(mu) + [peak])
    num = integrate.quad(lambda u: u * prior(u) * lik(u), lo, hi, points=pts, epsabs=0, epsrel=1e-12, limit=400)[0]
    den = integrate.quad(lambda u: prior(u) * lik(u), lo, hi, points=pts, epsabs=0, epsrel=1e-12, limit=400)[0]
    return num / den


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-2, 2), t=st.integers(1, 200), w0=st.floats(0.05, 0.95),
       s0=st.floats(0.02, 0.3), s1=st.floats(0.02, 0.3))
def test_mixture_matches_quadrature(sched200, x, t, w0, s0, s1):
    w, mu, s = [w0, 1 - w0], [0.25, 0.65], [s0, s1]
    prior = PixelwiseGaussianPrior(np.array(w)[:, None, None], np.array(mu)[:, None, None],
                                   np.array(s)[:, None, None])
    eps = analytic_epsilon(DenoiserInput(x * ONE, ONE, 0 * ONE, t), prior, sched200)[0, 0]
    ab = sched200.alpha_bar[t]
    m = quadrature_posterior_mean(x, ab, w, mu, s)
    assert eps == pytest.approx((x - np.sqrt(ab) * m) / np.sqrt(1 - ab), abs=1e-6)


def test_point_mass_recovers_noise(sched200):
    mu = np.array([[0.1, 0.4], [0.7, 0.0]])
    prior = PixelwiseGaussianPrior.single(mu, 0.0)
    for t in (1, 57, 200):
        x, eps = forward_marginal(mu, t, sched200, SeededRng(t))
        got = analytic_epsilon(DenoiserInput(x, np.ones((2, 2)), np.zeros((2, 2)), t), prior, sched200)
        np.testing.assert_allclose(got, eps, atol=1e-9)


def test_symmetric_mixture_at_midpoint(sched200):
    """Equal-weight, equal-width components symmetric about c: posterior mean at sqrt(ab) c is c."""
    c, t = 0.45, 80
    prior = PixelwiseGaussianPrior(np.full((2, 1, 1), 0.5), np.array([0.25, 0.65])[:, None, None],
                                   np.full((2, 1, 1), 0.05))
    ab = sched200.alpha_bar[t]
    x = np.sqrt(ab) * c
    eps = analytic_epsilon(DenoiserInput(x * ONE, ONE, 0 * ONE, t), prior, sched200)[0, 0]
    assert eps == pytest.approx((x - np.sqrt(ab) * c) / np.sqrt(1 - ab), abs=1e-12)


def test_mixture_agrees_with_collapsed_path(sched200):
    """A mixture with one zero-weight component equals the single-component fast path."""
    mix = PixelwiseGaussianPrior(np.array([0.0, 1.0])[:, None, None], np.array([0.25, 0.65])[:, None, None],
                                 np.array([0.02, 0.02])[:, None, None])
    object.__setattr__(mix, "__dict__", {**mix.__dict__, "collapsed": None})
    single = PixelwiseGaussianPrior.single(0.65 * ONE, 0.02)
    for x in (-1.0, 0.3, 1.2):
        inp = DenoiserInput(x * ONE, ONE, 0 * ONE, 30)
        assert analytic_epsilon(inp, mix, sched200)[0, 0] == pytest.approx(
            analytic_epsilon(inp, single, sched200)[0, 0], abs=1e-12)


def test_t0_rejected(params, sched200, lesioned):
    den = AnalyticDenoiser(params, sched200)
    with pytest.raises(ValueError):
        den(DenoiserInput(lesioned.image, lesioned.masks.brain, lesioned.masks.pathology, 0))


def test_loss_zero_for_noiseless_phantoms(sched200):
    params = PhantomParams(noise_std=0.0)
    samples = [generate(params, True, SeededRng(i)) for i in range(4)]
    x0 = np.stack([s.image for s in samples])
    b = np.stack([s.masks.brain for s in samples])
    p = np.stack([s.masks.pathology for s in samples])
    loss = denoising_loss(AnalyticDenoiser(params, sched200), x0, b, p, sched200, SeededRng(0))
    assert loss < 1e-18


def test_loss_of_zero_predictor_is_one(params, sched200):
    samples = [generate(params, True, SeededRng(i)) for i in range(50)]
    x0 = np.stack([s.image for s in samples])
    b = np.stack([s.masks.brain for s in samples])
    per = denoising_loss(lambda inp: np.zeros(np.shape(inp.x_t)), x0, b, b & False, sched200, SeededRng(1),
                         per_sample=True)
    assert abs(per.mean() - 1.0) < 3 * per.std(ddof=1) / np.sqrt(per.size)


def test_bayes_optimality(params, sched200):
    """Scaling or shifting the optimal prediction can only increase the expected loss."""
    samples = [generate(params, True, SeededRng(i)) for i in range(40)]
    x0 = np.stack([s.image for s in samples])
    b = np.stack([s.masks.brain for s in samples])
    p = np.stack([s.masks.pathology for s in samples])
    den = AnalyticDenoiser(params, sched200)
    base = denoising_loss(den, x0, b, p, sched200, SeededRng(2), per_sample=True)
    for f in (lambda e: 1.1 * e, lambda e: 0.9 * e, lambda e: e + 0.05):
        other = denoising_loss(lambda inp: f(den(inp)), x0, b, p, sched200, SeededRng(2), per_sample=True)
        assert np.all(other >= base - 1e-15)


def test_batched_matches_single(params, sched200, lesioned, healthy):
    den = AnalyticDenoiser(params, sched200)
    xs = np.stack([lesioned.image, healthy.image])
    b = np.stack([lesioned.masks.brain, healthy.masks.brain])
    p = np.stack([lesioned.masks.pathology, healthy.masks.pathology])
    out = den(DenoiserInput(xs, b, p, np.array([5, 90])))
    for i, t in enumerate((5, 90)):
        np.testing.assert_array_equal(out[i], den(DenoiserInput(xs[i], b[i], p[i], t)))


def test_pickle_roundtrip(params, sched200, lesioned):
    den = AnalyticPaletteDenoiser(params, sched200)
    den2 = pickle.loads(pickle.dumps(den))
    assert den2.radius_step == den.radius_step
    inp = DenoiserInput(lesioned.image, lesioned.masks.brain, lesioned.masks.pathology, 3,
                        (lesioned.image, np.zeros_like(lesioned.image)))
    np.testing.assert_array_equal(den(inp), den2(inp))


def test_palette_known_region_is_exact(params, sched200, triplet):
    x0, b, p = triplet
    m = dilate(p, 7) & b
    den = AnalyticPaletteDenoiser(params, sched200)
    prior = den.prior(b, p, ((~m) * x0, m.astype(float)))
    np.testing.assert_array_equal(prior.mean_image()[~m], x0[~m])
    assert np.all(prior.stds[1][~m] == 0)


def test_palette_radius_posterior_tracks_visible_ventricle(params, sched200):
    """Given a healthy scan, the inferred radius is the base radius, not the lesion-implied one."""
    h = generate(params, False, SeededRng(21))
    les = generate(params, True, SeededRng(22))
    b = h.masks.brain
    p = les.masks.pathology & b
    side = les.lesion_side
    m = dilate(p, 3) & b
    den = AnalyticPaletteDenoiser(params, sched200)
    grid, w = den.radius_posterior(b, p, (~m) * h.image, ~m, side)
    assert w.sum() == pytest.approx(1.0)
    mean_r = float(np.sum(grid * w))
    assert mean_r < params.ventricle_radius + 1.0
    assert mean_r < params.ventricle_radius + params.gain * p.sum() / 100


def test_palette_needs_extra_channels(params, sched200, lesioned):
    den = AnalyticPaletteDenoiser(params, sched200)
    with pytest.raises(ValueError):
        den.prior(lesioned.masks.brain, lesioned.masks.pathology)


def test_loss_validates_batch(params, sched200):
    with pytest.raises(ValueError):
        denoising_loss(AnalyticDenoiser(params, sched200), np.zeros((4, 4)), None, None, sched200, SeededRng(0))
