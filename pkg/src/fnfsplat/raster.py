"""Differentiable front-to-back splatting of one Gaussian cloud, with an analytic backward pass.

The per-Gaussian stages (projection, covariance, SH color) are vectorized numpy;
the per-pixel compositing loops are numba kernels. Kernels run serially over
pixels in a fixed order, so forward and backward results are bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .camera import DILATION, Z_NEAR, CameraView, projection_jacobian
from .splat import PARAM_NAMES, GaussianCloud, quat_to_rotmat, sh_basis, sigmoid

ALPHA_MAX = 0.999
CUTOFF_POWER = 4.5  # half the squared Mahalanobis radius at 3 sigma
# footprint exp(-p) is shifted and rescaled so it reaches exactly 0 at the cutoff
_FOOT_FLOOR = float(np.exp(-CUTOFF_POWER))
_FOOT_SCALE = 1.0 / (1.0 - _FOOT_FLOOR)
TILE = 16


class GradientShapeError(ValueError):
    pass


@dataclass
class ParamGradients:
    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    # d loss / d projected 2D mean, pixels; used for densification statistics
    mean2d: np.ndarray

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud) -> "ParamGradients":
        return cls(**{k: np.zeros_like(v) for k, v in cloud.params().items()},
                   mean2d=np.zeros((len(cloud), 2)))

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def __iadd__(self, other: "ParamGradients") -> "ParamGradients":
        for name in PARAM_NAMES + ("mean2d",):
            getattr(self, name).__iadd__(getattr(other, name))
        return self

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params().values())


@dataclass
class _Projected:
    t_cam: np.ndarray
    rot: np.ndarray
    scales: np.ndarray
    qnorm: np.ndarray
    sigma: np.ndarray
    jw: np.ndarray
    conic: np.ndarray
    mean2d: np.ndarray
    depth: np.ndarray
    dirs: np.ndarray
    dir_norm: np.ndarray
    basis: np.ndarray
    raw_color: np.ndarray
    color: np.ndarray
    opacity: np.ndarray
    bbox: np.ndarray
    order: np.ndarray


@dataclass
class BackwardContext:
    cloud: GaussianCloud
    view: CameraView
    proj: _Projected
    tile_list: np.ndarray
    tile_offsets: np.ndarray
    tile: int
    depth_num: np.ndarray
    t_final: np.ndarray


@dataclass
class RenderTarget:
    color: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray
    backward_ctx: BackwardContext


def _project(cloud: GaussianCloud, view: CameraView) -> _Projected:
    intr = view.intrinsics
    w = view.rotation
    n = len(cloud)
    t = cloud.means @ w.T + view.translation
    in_front = t[:, 2] > Z_NEAR
    t_safe = t.copy()
    t_safe[~in_front, 2] = 1.0

    qnorm = np.linalg.norm(cloud.quats, axis=1)
    rot = quat_to_rotmat(cloud.quats / qnorm[:, None])
    scales = np.exp(cloud.log_scales)
    m = rot * scales[:, None, :]
    sigma = m @ np.swapaxes(m, 1, 2)

    jw = projection_jacobian(intr, t_safe) @ w
    cov2 = jw @ sigma @ np.swapaxes(jw, 1, 2)
    a = cov2[:, 0, 0] + DILATION
    b = 0.5 * (cov2[:, 0, 1] + cov2[:, 1, 0])
    c = cov2[:, 1, 1] + DILATION
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    z = t_safe[:, 2]
    mean2d = np.stack([intr.fx * t_safe[:, 0] / z + intr.cx,
                       intr.fy * t_safe[:, 1] / z + intr.cy], axis=1)

    rad_x = 3.0 * np.sqrt(a)
    rad_y = 3.0 * np.sqrt(c)
    bbox = np.stack([
        np.maximum(np.ceil(mean2d[:, 0] - rad_x), 0),
        np.minimum(np.floor(mean2d[:, 0] + rad_x), intr.width - 1),
        np.maximum(np.ceil(mean2d[:, 1] - rad_y), 0),
        np.minimum(np.floor(mean2d[:, 1] + rad_y), intr.height - 1),
    ], axis=1)
    bbox = np.where(np.isfinite(bbox), bbox, -1).astype(np.int64)
    on_screen = in_front & (bbox[:, 0] <= bbox[:, 1]) & (bbox[:, 2] <= bbox[:, 3])

    vis_idx = np.flatnonzero(on_screen)
    order = vis_idx[np.argsort(z[vis_idx], kind="stable")].astype(np.int64)

    if n:
        d = cloud.means - view.center
        dir_norm = np.linalg.norm(d, axis=1)
        dirs = d / np.maximum(dir_norm, 1e-12)[:, None]
    else:
        dir_norm = np.zeros(0)
        dirs = np.zeros((0, 3))
    basis = sh_basis(cloud.sh_degree, dirs)
    raw_color = np.einsum("nk,nkc->nc", basis, cloud.sh)
    color = np.maximum(raw_color, 0.0)

    return _Projected(t, rot, scales, qnorm, sigma, jw, conic, mean2d, z.copy(), dirs,
                      dir_norm, basis, raw_color, color, sigmoid(cloud.opacity_logits),
                      bbox, order)


@numba.njit(cache=True)
def _bin_tiles(order, bbox, tiles_x, tiles_y, tile):
    counts = np.zeros(tiles_x * tiles_y, dtype=np.int64)
    for g in order:
        for ty in range(bbox[g, 2] // tile, bbox[g, 3] // tile + 1):
            for tx in range(bbox[g, 0] // tile, bbox[g, 1] // tile + 1):
                counts[ty * tiles_x + tx] += 1
    offsets = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    for i in range(tiles_x * tiles_y):
        offsets[i + 1] = offsets[i] + counts[i]
    fill = offsets[:-1].copy()
    lst = np.empty(offsets[-1], dtype=np.int64)
    for g in order:
        for ty in range(bbox[g, 2] // tile, bbox[g, 3] // tile + 1):
            for tx in range(bbox[g, 0] // tile, bbox[g, 1] // tile + 1):
                k = ty * tiles_x + tx
                lst[fill[k]] = g
                fill[k] += 1
    return lst, offsets


@numba.njit(cache=True)
def _forward_kernel(lst, offsets, tile, height, width, bbox, mean2d, conic, opacity,
                    color, depth):
    nch = color.shape[1]
    out = np.zeros((height, width, nch))
    depth_num = np.zeros((height, width))
    t_final = np.ones((height, width))
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            k = ty * tiles_x + tx
            start = offsets[k]
            stop = offsets[k + 1]
            for py in range(ty * tile, min((ty + 1) * tile, height)):
                for px in range(tx * tile, min((tx + 1) * tile, width)):
                    trans = 1.0
                    for s in range(start, stop):
                        g = lst[s]
                        if px < bbox[g, 0] or px > bbox[g, 1] or py < bbox[g, 2] or py > bbox[g, 3]:
                            continue
                        dx = px - mean2d[g, 0]
                        dy = py - mean2d[g, 1]
                        power = 0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) \
                            + conic[g, 1] * dx * dy
                        if power > CUTOFF_POWER:
                            continue
                        foot = (np.exp(-power) - _FOOT_FLOOR) * _FOOT_SCALE
                        alpha = min(ALPHA_MAX, opacity[g] * foot)
                        wgt = alpha * trans
                        for ch in range(nch):
                            out[py, px, ch] += color[g, ch] * wgt
                        depth_num[py, px] += depth[g] * wgt
                        trans *= 1.0 - alpha
                    t_final[py, px] = trans
    return out, depth_num, t_final


@numba.njit(cache=True)
def _backward_kernel(lst, offsets, tile, height, width, bbox, mean2d, conic, opacity,
                     color, depth, depth_num, t_final, d_out, d_depth_map, n_gauss):
    nch = color.shape[1]
    g_color = np.zeros((n_gauss, nch))
    g_depth = np.zeros(n_gauss)
    g_opac = np.zeros(n_gauss)
    g_mean = np.zeros((n_gauss, 2))
    g_conic = np.zeros((n_gauss, 3))
    crec = np.zeros(nch)
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            k = ty * tiles_x + tx
            start = offsets[k]
            stop = offsets[k + 1]
            for py in range(ty * tile, min((ty + 1) * tile, height)):
                for px in range(tx * tile, min((tx + 1) * tile, width)):
                    tf = t_final[py, px]
                    acc = 1.0 - tf
                    gd = d_depth_map[py, px]
                    if acc > 1e-10 and gd != 0.0:
                        d_num = gd / acc
                        d_acc = -gd * depth_num[py, px] / (acc * acc)
                    else:
                        d_num = 0.0
                        d_acc = 0.0
                    trans = tf
                    for ch in range(nch):
                        crec[ch] = 0.0
                    zrec = 0.0
                    for s in range(stop - 1, start - 1, -1):
                        g = lst[s]
                        if px < bbox[g, 0] or px > bbox[g, 1] or py < bbox[g, 2] or py > bbox[g, 3]:
                            continue
                        dx = px - mean2d[g, 0]
                        dy = py - mean2d[g, 1]
                        power = 0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) \
                            + conic[g, 1] * dx * dy
                        if power > CUTOFF_POWER:
                            continue
                        gauss = np.exp(-power)
                        foot = (gauss - _FOOT_FLOOR) * _FOOT_SCALE
                        a_raw = opacity[g] * foot
                        alpha = min(ALPHA_MAX, a_raw)
                        one_m = 1.0 - alpha
                        trans = trans / one_m
                        wgt = alpha * trans
                        d_alpha = 0.0
                        for ch in range(nch):
                            gc = d_out[py, px, ch]
                            g_color[g, ch] += gc * wgt
                            d_alpha += gc * (color[g, ch] - crec[ch]) * trans
                            crec[ch] = alpha * color[g, ch] + one_m * crec[ch]
                        g_depth[g] += d_num * wgt
                        d_alpha += d_num * (depth[g] - zrec) * trans + d_acc * tf / one_m
                        zrec = alpha * depth[g] + one_m * zrec
                        if a_raw < ALPHA_MAX:
                            g_opac[g] += d_alpha * foot
                            d_power = -d_alpha * opacity[g] * gauss * _FOOT_SCALE
                            g_mean[g, 0] -= d_power * (conic[g, 0] * dx + conic[g, 1] * dy)
                            g_mean[g, 1] -= d_power * (conic[g, 1] * dx + conic[g, 2] * dy)
                            g_conic[g, 0] += d_power * 0.5 * dx * dx
                            g_conic[g, 1] += d_power * dx * dy
                            g_conic[g, 2] += d_power * 0.5 * dy * dy
    return g_color, g_depth, g_opac, g_mean, g_conic


def render(cloud: GaussianCloud, view: CameraView, tiled: bool = True) -> RenderTarget:
    """Composite a cloud into color, expected-depth and alpha maps.

    With ``tiled=False`` every pixel walks the full depth-sorted list; the tiled
    path only visits Gaussians whose 3-sigma box overlaps the pixel's tile and
    produces bit-identical output.
    """
    h, w = view.shape
    proj = _project(cloud, view)
    if tiled:
        tile = TILE
        tiles_x, tiles_y = -(-w // tile), -(-h // tile)
        lst, offsets = _bin_tiles(proj.order, proj.bbox, tiles_x, tiles_y, tile)
    else:
        tile = max(h, w)
        lst, offsets = proj.order, np.array([0, len(proj.order)], dtype=np.int64)
    color, depth_num, t_final = _forward_kernel(
        lst, offsets, tile, h, w, proj.bbox, proj.mean2d, proj.conic, proj.opacity,
        proj.color, proj.depth)
    alpha = 1.0 - t_final
    depth = np.where(alpha > 1e-10, depth_num / np.where(alpha > 1e-10, alpha, 1.0), 0.0)
    ctx = BackwardContext(cloud, view, proj, lst, offsets, tile, depth_num, t_final)
    return RenderTarget(color, depth, alpha, ctx)


def render_backward(ctx: BackwardContext, dL_dcolor, dL_ddepth=None) -> ParamGradients:
    """Chain-rule gradients of a scalar loss through the forward render in ``ctx``."""
    cloud, view, p = ctx.cloud, ctx.view, ctx.proj
    h, w = view.shape
    n = len(cloud)
    dL_dcolor = np.asarray(dL_dcolor, dtype=np.float64)
    if dL_dcolor.shape != (h, w, cloud.channels):
        raise GradientShapeError(
            f"dL_dcolor has shape {dL_dcolor.shape}, expected {(h, w, cloud.channels)}")
    if dL_ddepth is None:
        dL_ddepth = np.zeros((h, w))
    dL_ddepth = np.asarray(dL_ddepth, dtype=np.float64)
    if dL_ddepth.shape != (h, w):
        raise GradientShapeError(f"dL_ddepth has shape {dL_ddepth.shape}, expected {(h, w)}")

    g_color, g_depth, g_opac, g_mean2d, g_conic = _backward_kernel(
        ctx.tile_list, ctx.tile_offsets, ctx.tile, h, w, p.bbox, p.mean2d, p.conic,
        p.opacity, p.color, p.depth, ctx.depth_num, ctx.t_final,
        np.ascontiguousarray(dL_dcolor), np.ascontiguousarray(dL_ddepth), n)
    return _backward_gaussians(cloud, view, p, g_color, g_depth, g_opac, g_mean2d, g_conic)


def _backward_gaussians(cloud, view, p: _Projected, g_color, g_depth, g_opac, g_mean2d, g_conic):
    intr = view.intrinsics
    wrot = view.rotation
    n = len(cloud)
    valid = np.zeros(n, dtype=bool)
    valid[p.order] = True

    # conic -> screen covariance: dL/dS' = -K dL/dK K
    kmat = np.empty((n, 2, 2))
    kmat[:, 0, 0], kmat[:, 0, 1], kmat[:, 1, 0], kmat[:, 1, 1] = (
        p.conic[:, 0], p.conic[:, 1], p.conic[:, 1], p.conic[:, 2])
    gk = np.empty((n, 2, 2))
    gk[:, 0, 0], gk[:, 0, 1], gk[:, 1, 0], gk[:, 1, 1] = (
        g_conic[:, 0], 0.5 * g_conic[:, 1], 0.5 * g_conic[:, 1], g_conic[:, 2])
    gs2 = -kmat @ gk @ kmat

    jw = p.jw
    g_sigma = np.swapaxes(jw, 1, 2) @ gs2 @ jw
    g_jw = 2.0 * gs2 @ jw @ p.sigma
    g_j = g_jw @ wrot.T

    tx, ty, tz = p.t_cam[:, 0], p.t_cam[:, 1], np.where(valid, p.t_cam[:, 2], 1.0)
    fx, fy = intr.fx, intr.fy
    iz2 = 1.0 / (tz * tz)
    iz3 = iz2 / tz
    g_t = np.zeros((n, 3))
    g_t[:, 0] = -fx * iz2 * g_j[:, 0, 2] + fx / tz * g_mean2d[:, 0]
    g_t[:, 1] = -fy * iz2 * g_j[:, 1, 2] + fy / tz * g_mean2d[:, 1]
    g_t[:, 2] = (
        -fx * iz2 * g_j[:, 0, 0] + 2 * fx * tx * iz3 * g_j[:, 0, 2]
        - fy * iz2 * g_j[:, 1, 1] + 2 * fy * ty * iz3 * g_j[:, 1, 2]
        - fx * tx * iz2 * g_mean2d[:, 0] - fy * ty * iz2 * g_mean2d[:, 1]
        + g_depth
    )
    g_means = g_t @ wrot

    # Sigma = M M^T, M = R diag(s)
    m = p.rot * p.scales[:, None, :]
    g_m = 2.0 * g_sigma @ m
    g_log_scales = np.einsum("nik,nik->nk", g_m, p.rot) * p.scales
    g_rot = g_m * p.scales[:, None, :]

    qn = cloud.quats / p.qnorm[:, None]
    qw, qx, qy, qz = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    r = g_rot.reshape(n, 9)
    g_qn = np.stack([
        2 * (-qz * r[:, 1] + qy * r[:, 2] + qz * r[:, 3] - qx * r[:, 5] - qy * r[:, 6] + qx * r[:, 7]),
        2 * (qy * r[:, 1] + qz * r[:, 2] + qy * r[:, 3] - 2 * qx * r[:, 4] - qw * r[:, 5]
             + qz * r[:, 6] + qw * r[:, 7] - 2 * qx * r[:, 8]),
        2 * (-2 * qy * r[:, 0] + qx * r[:, 1] + qw * r[:, 2] + qx * r[:, 3] + qz * r[:, 5]
             - qw * r[:, 6] + qz * r[:, 7] - 2 * qy * r[:, 8]),
        2 * (-2 * qz * r[:, 0] - qw * r[:, 1] + qx * r[:, 2] + qw * r[:, 3] - 2 * qz * r[:, 4]
             + qy * r[:, 5] + qx * r[:, 6] + qy * r[:, 7]),
    ], axis=1)
    g_quats = (g_qn - qn * np.sum(qn * g_qn, axis=1, keepdims=True)) / p.qnorm[:, None]

    g_raw = g_color * (p.raw_color > 0)
    g_sh = p.basis[:, :, None] * g_raw[:, None, :]
    if cloud.sh_degree == 1:
        from .splat import SH_C1
        sh = cloud.sh
        g_dir = SH_C1 * np.stack([
            -np.sum(g_raw * sh[:, 3], axis=1),
            -np.sum(g_raw * sh[:, 1], axis=1),
            np.sum(g_raw * sh[:, 2], axis=1),
        ], axis=1)
        g_dir -= p.dirs * np.sum(p.dirs * g_dir, axis=1, keepdims=True)
        g_means += g_dir / np.maximum(p.dir_norm, 1e-12)[:, None]

    g_logits = g_opac * p.opacity * (1.0 - p.opacity)

    out = ParamGradients(g_means, g_quats, g_log_scales, g_logits, g_sh, g_mean2d)
    for name in PARAM_NAMES + ("mean2d",):
        arr = getattr(out, name)
        arr[~valid] = 0.0
    return out
