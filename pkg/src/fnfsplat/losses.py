"""Scalar objectives and their analytic gradients.

Every ``*_grad`` helper returns the gradient with respect to the rendered
argument(s), so the training loop can feed it back into the compositing chain.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .camera import CameraView
from .composite import SceneModel, gamma, render_composite

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PEARSON_EPS = 1e-8
DEPTH_EDGE_TAU = 0.1


class ShapeMismatchError(ValueError):
    pass


def _check(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


@dataclass
class LossWeights:
    l1: float = 0.8
    dssim: float = 0.2
    linearity: float = 0.05
    depth: float = 0.01

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {k} must be finite and non-negative, got {v}")

    def as_tuple(self):
        return self.l1, self.dssim, self.linearity, self.depth


@dataclass
class LossReport:
    l1: float
    dssim: float
    linearity: float
    depth: float
    total: float

    @property
    def data(self) -> float:
        return self.l1 + self.dssim


def l1_loss(a, b) -> float:
    a, b = _check(a, b)
    return float(np.mean(np.abs(a - b)))


def l1_grad(a, b):
    a, b = _check(a, b)
    return np.sign(b - a) / a.size


# --- SSIM -------------------------------------------------------------------

def _gauss_window(size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _window_size(h: int, w: int) -> int:
    # images smaller than the nominal window fall back to the largest odd size that fits
    k = min(SSIM_WINDOW, h, w)
    return k if k % 2 else k - 1


def _filt_valid(x, win):
    h = len(win) // 2
    y = correlate1d(correlate1d(x, win, axis=0, mode="constant"), win, axis=1, mode="constant")
    return y[h:x.shape[0] - h, h:x.shape[1] - h]


def _filt_adjoint(g, win, shape):
    h = len(win) // 2
    full = np.zeros(shape)
    full[h:shape[0] - h, h:shape[1] - h] = g
    return correlate1d(correlate1d(full, win, axis=0, mode="constant"), win, axis=1,
                       mode="constant")


def _ssim_terms(a, b):
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    win = _gauss_window(_window_size(*a.shape[:2]))
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_a, mu_b = _filt_valid(a, win), _filt_valid(b, win)
    e_aa, e_bb, e_ab = _filt_valid(a * a, win), _filt_valid(b * b, win), _filt_valid(a * b, win)
    a1 = 2 * mu_a * mu_b + c1
    a2 = 2 * (e_ab - mu_a * mu_b) + c2
    b1 = mu_a ** 2 + mu_b ** 2 + c1
    b2 = (e_aa - mu_a ** 2) + (e_bb - mu_b ** 2) + c2
    return a, b, win, mu_a, mu_b, a1, a2, b1, b2


def ssim(a, b) -> float:
    """Mean SSIM over all fully-covered window positions and channels."""
    a, b = _check(a, b)
    *_, a1, a2, b1, b2 = _ssim_terms(a, b)
    return float(np.mean(a1 * a2 / (b1 * b2)))


def dssim_loss(a, b) -> float:
    return (1.0 - ssim(a, b)) / 2.0


def dssim_grad(a, b):
    """d dssim / d b."""
    a, b = _check(a, b)
    shape = b.shape
    a3, b3, win, mu_a, mu_b, a1, a2, b1, b2 = _ssim_terms(a, b)
    den = b1 * b2
    s = a1 * a2 / den
    d_s = -0.5 / s.size
    d_a1 = d_s * a2 / den
    d_a2 = d_s * a1 / den
    d_b1 = -d_s * s / b1
    d_b2 = -d_s * s / b2
    g_mu = 2 * mu_a * (d_a1 - d_a2) + 2 * mu_b * (d_b1 - d_b2)
    out = np.empty_like(b3)
    for ch in range(b3.shape[2]):
        hw = b3.shape[:2]
        out[..., ch] = (_filt_adjoint(g_mu[..., ch], win, hw)
                        + 2 * b3[..., ch] * _filt_adjoint(d_b2[..., ch], win, hw)
                        + a3[..., ch] * _filt_adjoint(2 * d_a2[..., ch], win, hw))
    return out.reshape(shape)


# --- linearity ----------------------------------------------------------------

def pearson_linearity_loss(t_n, t_f) -> float:
    """Negative Pearson correlation over all pixels and channels jointly."""
    x, y = _check(t_n, t_f)
    if x.size < 2:
        raise ValueError("Pearson correlation needs at least two samples")
    xc, yc = x - x.mean(), y - y.mean()
    vx, vy = np.mean(xc * xc), np.mean(yc * yc)
    if vx < PEARSON_EPS or vy < PEARSON_EPS:
        return 0.0
    return float(-np.mean(xc * yc) / math.sqrt(vx * vy))


def pearson_grad(t_n, t_f):
    """(d loss / d t_n, d loss / d t_f)."""
    x, y = _check(t_n, t_f)
    xc, yc = x - x.mean(), y - y.mean()
    vx, vy = np.mean(xc * xc), np.mean(yc * yc)
    if vx < PEARSON_EPS or vy < PEARSON_EPS:
        return np.zeros_like(x), np.zeros_like(y)
    n = x.size
    sd = math.sqrt(vx * vy)
    rho = np.mean(xc * yc) / sd
    d_x = yc / (n * sd) - rho * xc / (n * vx)
    d_y = xc / (n * sd) - rho * yc / (n * vy)
    return -d_x, -d_y


# --- depth smoothness -----------------------------------------------------------

def _edge_weights(guide):
    wx = np.exp(-np.abs(np.diff(guide, axis=1)) / DEPTH_EDGE_TAU)
    wy = np.exp(-np.abs(np.diff(guide, axis=0)) / DEPTH_EDGE_TAU)
    return wx, wy


def depth_smoothness_loss(depth, guide) -> float:
    """Edge-aware total variation of depth; differences across guide edges are down-weighted."""
    d, g = _check(depth, guide)
    wx, wy = _edge_weights(g)
    return float((np.sum(np.abs(np.diff(d, axis=1)) * wx)
                  + np.sum(np.abs(np.diff(d, axis=0)) * wy)) / d.size)


def depth_smoothness_grad(depth, guide):
    d, g = _check(depth, guide)
    wx, wy = _edge_weights(g)
    sx = np.sign(np.diff(d, axis=1)) * wx / d.size
    sy = np.sign(np.diff(d, axis=0)) * wy / d.size
    out = np.zeros_like(d)
    out[:, 1:] += sx
    out[:, :-1] -= sx
    out[1:, :] += sy
    out[:-1, :] -= sy
    return out


# --- total -----------------------------------------------------------------------

def total_loss(scene: SceneModel, view: CameraView, weights: LossWeights | None = None,
               return_grad: bool = False):
    """Weighted objective at one captured view.

    Data terms compare the composite with the tone-mapped capture, the linearity
    term scores the pseudo-pair rendered at the same pose, and the depth term
    regularizes the reflection depth using the tone-mapped capture as edge guide.
    Returns a LossReport, or ``(report, grads)`` with per-cloud ParamGradients.
    """
    if view.image is None:
        raise ValueError(f"view {view.view_id!r} carries no captured image")
    weights = weights or LossWeights()
    w1, w2, w3, w4 = weights.as_tuple()
    want_pair = w3 > 0 and not scene.flashless
    cr = render_composite(scene, view, pseudo_pair=want_pair)
    target = gamma(view.image, scene.gamma_exponent)
    guide = target.mean(axis=2)

    l1 = l1_loss(target, cr.composite)
    ds = dssim_loss(target, cr.composite)
    lin = pearson_linearity_loss(cr.pseudo_pair[1], cr.pseudo_pair[0]) if cr.pseudo_pair else 0.0
    dep = depth_smoothness_loss(cr.depth_R, guide)
    total = w1 * l1 + w2 * ds + w3 * lin + w4 * dep
    report = LossReport(l1, ds, lin, dep, total)
    if not return_grad:
        return report

    d_comp = np.zeros_like(cr.composite)
    if w1:
        d_comp += w1 * l1_grad(target, cr.composite)
    if w2:
        d_comp += w2 * dssim_grad(target, cr.composite)
    d_pair_f = d_pair_n = None
    if cr.pseudo_pair and w3:
        d_n, d_f = pearson_grad(cr.pseudo_pair[1], cr.pseudo_pair[0])
        d_pair_f, d_pair_n = w3 * d_f, w3 * d_n
    d_depth = w4 * depth_smoothness_grad(cr.depth_R, guide) if w4 else None
    grads = cr.backward(d_comp, d_depth, d_pair_f, d_pair_n)
    return report, grads
