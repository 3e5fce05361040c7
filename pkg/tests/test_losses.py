import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_scene, small_view
from fnfsplat.composite import gamma, render_composite
from fnfsplat.losses import (LossWeights, ShapeMismatchError, depth_smoothness_grad,
                             depth_smoothness_loss, dssim_grad, dssim_loss, l1_grad, l1_loss,
                             pearson_grad, pearson_linearity_loss, ssim, total_loss)


def _ssim_reference(a, b, size=11, sigma=1.5):
    """Direct windowed SSIM: loops over every valid window, no separable filtering."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i:i + size, j:j + size], b[i:i + size, j:j + size]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2)
                        / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def _fd(f, x, h=1e-6):
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        p = f(x)
        x[idx] = old - h
        m = f(x)
        x[idx] = old
        out[idx] = (p - m) / (2 * h)
    return out


# --- L1 -------------------------------------------------------------------------

def test_l1_examples(rng):
    a = rng.uniform(size=(5, 5, 3))
    assert l1_loss(a, a) == 0
    assert l1_loss(np.full((4, 4), 0.2), np.full((4, 4), 0.5)) == pytest.approx(0.3)
    eps = 0.05
    v = l1_loss(a, a + rng.uniform(-eps, eps, a.shape))
    assert 0 <= v <= eps
    b = rng.uniform(size=a.shape)
    assert l1_loss(a, b) == l1_loss(b, a)
    with pytest.raises(ShapeMismatchError):
        l1_loss(a, a[:4])


def test_l1_gradient(rng):
    a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
    np.testing.assert_allclose(l1_grad(a, b), _fd(lambda x: l1_loss(a, x), b), rtol=1e-5)


# --- SSIM -----------------------------------------------------------------------

def test_ssim_matches_direct_reference(rng):
    a = rng.uniform(size=(20, 17))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(_ssim_reference(a, b), rel=1e-10)


def test_dssim_examples(rng):
    a = rng.uniform(size=(16, 16, 3))
    assert dssim_loss(a, a) == pytest.approx(0.0, abs=1e-12)
    board = (np.indices((16, 16)).sum(axis=0) % 2).astype(float)
    assert dssim_loss(board, 1 - board) > 0.4
    assert (1 - _ssim_reference(board, 1 - board)) / 2 > 0.4
    b = rng.uniform(size=a.shape)
    assert dssim_loss(a, b) == pytest.approx(dssim_loss(b, a), rel=1e-12)
    assert 0 <= dssim_loss(a, b) <= 1


def test_dssim_small_image_fallback(rng):
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    assert 0 < dssim_loss(a, b) <= 1


@pytest.mark.parametrize("shape", [(8, 8, 3), (14, 12, 3)])
def test_dssim_gradient(rng, shape):
    a, b = rng.uniform(size=shape), rng.uniform(size=shape)
    np.testing.assert_allclose(dssim_grad(a, b), _fd(lambda x: dssim_loss(a, x), b),
                               rtol=1e-4, atol=1e-9)


# --- Pearson --------------------------------------------------------------------

def test_pearson_examples(rng):
    x = rng.uniform(size=(6, 6, 3))
    assert pearson_linearity_loss(x, 2 * x) == pytest.approx(-1, abs=1e-12)
    assert pearson_linearity_loss(x, 1 - x) == pytest.approx(1, abs=1e-12)
    assert pearson_linearity_loss(np.full_like(x, 0.4), x) == 0.0
    assert all(not g.any() for g in pearson_grad(np.full_like(x, 0.4), x))
    with pytest.raises(ValueError):
        pearson_linearity_loss(np.ones(1), np.ones(1))


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(0, 1)),
       arrays(np.float64, (5, 4), elements=st.floats(0, 1)),
       st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_positive_affine_invariance(x, y, a, b):
    if x.var() < 1e-6 or y.var() < 1e-6:
        return
    base = pearson_linearity_loss(x, y)
    assert -1 - 1e-12 <= base <= 1 + 1e-12
    assert pearson_linearity_loss(a * x + b, y) == pytest.approx(base, abs=1e-9)
    assert pearson_linearity_loss(x, a * y + b) == pytest.approx(base, abs=1e-9)


def test_pearson_gradient(rng):
    x, y = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
    gx, gy = pearson_grad(x, y)
    np.testing.assert_allclose(gx, _fd(lambda v: pearson_linearity_loss(v, y), x), rtol=1e-5,
                               atol=1e-10)
    np.testing.assert_allclose(gy, _fd(lambda v: pearson_linearity_loss(x, v), y), rtol=1e-5,
                               atol=1e-10)


# --- depth smoothness -------------------------------------------------------------

def test_depth_examples(rng):
    guide = rng.uniform(size=(4, 4))
    assert depth_smoothness_loss(np.full((4, 4), 2.0), guide) == 0
    ramp = np.tile(np.arange(4.0), (4, 1))
    assert depth_smoothness_loss(ramp, np.zeros((4, 4))) == pytest.approx(12 / 16)
    step = np.zeros((4, 4))
    step[:, 2:] = 1
    assert depth_smoothness_loss(step, step) < depth_smoothness_loss(step, np.zeros((4, 4)))


def test_depth_gradient(rng):
    d, g = rng.uniform(size=(5, 6)), rng.uniform(size=(5, 6))
    np.testing.assert_allclose(depth_smoothness_grad(d, g),
                               _fd(lambda x: depth_smoothness_loss(x, g), d), rtol=1e-5)


# --- total ------------------------------------------------------------------------

def test_weights_validation():
    assert LossWeights().as_tuple() == (0.8, 0.2, 0.05, 0.01)
    with pytest.raises(ValueError):
        LossWeights(l1=-1)
    with pytest.raises(ValueError):
        LossWeights(depth=math.nan)


def test_total_is_weighted_sum(rng):
    scene = random_scene(rng, 6)
    view = small_view(rng)
    w = LossWeights(0.7, 0.3, 0.1, 0.02)
    r = total_loss(scene, view, w)
    expect = 0.7 * r.l1 + 0.3 * r.dssim + 0.1 * r.linearity + 0.02 * r.depth
    assert r.total == pytest.approx(expect, abs=1e-9)


def test_l1_only_weights(rng):
    scene = random_scene(rng, 6)
    view = small_view(rng, flash=False)
    r = total_loss(scene, view, LossWeights(1, 0, 0, 0))
    comp = render_composite(scene, view).composite
    assert r.total == pytest.approx(l1_loss(gamma(view.image), comp), rel=1e-12)


def test_perfect_fit_leaves_regularizers(rng):
    scene = random_scene(rng, 6)
    scene.T_F = scene.T_N.copy()
    view = small_view(flash=False, image=False)
    comp = render_composite(scene, view).composite
    view = view.with_image(comp ** (1 / 0.22))
    w = LossWeights()
    r = total_loss(scene, view, w)
    assert r.l1 == pytest.approx(0, abs=1e-12) and r.dssim == pytest.approx(0, abs=1e-9)
    assert r.linearity == pytest.approx(-1, abs=1e-12)
    assert r.total == pytest.approx(-w.linearity + w.depth * r.depth, abs=1e-9)


def test_total_gradient_is_sum_of_parts(rng):
    scene = random_scene(rng, 6)
    view = small_view(rng)
    parts = [LossWeights(0.8, 0, 0, 0), LossWeights(0, 0.2, 0, 0), LossWeights(0, 0, 0.05, 0),
             LossWeights(0, 0, 0, 0.01)]
    _, full = total_loss(scene, view, LossWeights(), return_grad=True)
    pieces = [total_loss(scene, view, w, return_grad=True)[1] for w in parts]
    for name in full:
        for k, v in full[name].params().items():
            summed = sum(p[name].params()[k] for p in pieces)
            np.testing.assert_allclose(v, summed, rtol=1e-9, atol=1e-15)


def test_total_gradient_finite_differences():
    rng = np.random.default_rng(5)
    scene = random_scene(rng, 5)
    view = small_view(rng, size=8)
    w = LossWeights()
    _, grads = total_loss(scene, view, w, return_grad=True)
    entries = [(n, k, idx) for n, c in scene.clouds().items() for k, v in c.params().items()
               for idx in np.ndindex(v.shape)]
    bad = 0
    for i in rng.choice(len(entries), 50, replace=False):
        name, k, idx = entries[i]
        arr = scene.clouds()[name].params()[k]
        old = arr[idx]
        arr[idx] = old + 1e-4
        lp = total_loss(scene, view, w).total
        arr[idx] = old - 1e-4
        lm = total_loss(scene, view, w).total
        arr[idx] = old
        fd = (lp - lm) / 2e-4
        bad += abs(fd - getattr(grads[name], k)[idx]) > max(1e-3 * abs(fd), 1e-6)
    assert bad == 0
