"""Image metrics and scoring of a fitted scene against synthetic ground truth."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .composite import SceneModel, gamma_inv, smooth_clamp
from .losses import ShapeMismatchError, ssim
from .raster import render
from .synth import Dataset

PSNR_CAP = 99.0


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, clamped to [0, 99]; identical inputs give 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(max(10.0 * math.log10(peak * peak / mse), 0.0), PSNR_CAP))


def _raw(tone_img, exponent):
    return gamma_inv(np.clip(tone_img, 0.0, 1.0), exponent)


def render_layers(scene: SceneModel, view, flash: bool = False) -> dict[str, np.ndarray]:
    """Raw-linear transmission, reflection and beta*R layers plus beta and depth maps."""
    g = scene.gamma_exponent
    t_cloud = scene.T_F if flash and scene.T_F is not None else scene.T_N
    t_rt = render(t_cloud, view)
    t = _raw(t_rt.color, g)
    if flash and scene.hard_linear is not None:
        t = scene.hard_linear * t
    r_rt = render(scene.R, view)
    r = _raw(r_rt.color, g)
    beta = smooth_clamp(render(scene.beta, view).color[..., 0])
    return {"T": t, "R": r, "beta_R": beta[..., None] * r, "beta": beta,
            "depth_T": t_rt.depth, "depth_R": r_rt.depth}


@dataclass
class ViewScore:
    view_id: str
    heldout: bool
    psnr_T: float
    ssim_T: float
    psnr_R: float
    ssim_R: float
    psnr_paired: float


@dataclass
class EvalReport:
    views: list[ViewScore] = field(default_factory=list)

    def _mean(self, key, heldout=None):
        vals = [getattr(v, key) for v in self.views if heldout is None or v.heldout == heldout]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def means(self) -> dict[str, float]:
        out = {}
        for key in ("psnr_T", "ssim_T", "psnr_R", "ssim_R", "psnr_paired"):
            out[key] = self._mean(key)
            out[key + "_heldin"] = self._mean(key, False)
            out[key + "_heldout"] = self._mean(key, True)
        return out

    def to_dict(self) -> dict:
        return {"views": [asdict(v) for v in self.views], "means": self.means}

    def is_finite(self) -> bool:
        return all(math.isfinite(x) for x in self.means.values())


def evaluate(scene: SceneModel, ds: Dataset) -> EvalReport:
    """Score the no-flash transmission and the reflection layer at every dataset pose.

    Transmission is compared in the raw-linear domain against the true T_N.
    Reflection is compared as beta * R, which is insensitive to how the model
    splits the product. The paired reference is the flash-minus-no-flash image
    at the same pose; the model's transmission is fitted to it with one
    least-squares gain because that reference carries the unknown flash gain.
    """
    report = EvalReport()
    held = {v.view_id for v in ds.heldout}
    for view in ds.capture.views + ds.heldout:
        gt = ds.truth[view.view_id]
        layers = render_layers(scene, view, flash=False)
        t = layers["T"]
        ref = ds.paired_reference(view.view_id)
        denom = float(np.sum(t * t))
        gain = float(np.sum(t * ref)) / denom if denom > 0 else 0.0
        report.views.append(ViewScore(
            view.view_id, view.view_id in held,
            psnr(t, gt.T_N), ssim(t, gt.T_N),
            psnr(layers["beta_R"], gt.beta_R), ssim(layers["beta_R"], gt.beta_R),
            psnr(gain * t, ref),
        ))
    return report
