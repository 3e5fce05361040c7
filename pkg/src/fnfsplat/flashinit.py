"""Scene initialization from a flash-only and a no-flash-only sparse reconstruction.

The two point clouds are brought into one frame with a similarity fit on the
camera centers, flash points whose brightness rises relative to their no-flash
neighbors are labeled transmitted, and the four clouds are seeded from the labels.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .composite import GAMMA_EXPONENT, SceneModel
from .splat import GaussianCloud, logit, rgb_to_dc

log = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
DEFAULT_RATIO = 1.25
INIT_OPACITY = 0.1


class AlignmentError(ValueError):
    """Camera centers do not constrain a similarity transform (fewer than 3, or collinear)."""


@dataclass
class SfMPoints:
    positions: np.ndarray
    colors: np.ndarray
    source: str = "flash"

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) < 1 or len(self.positions) != len(self.colors):
            raise ValueError("need at least one point and one color per point")
        if self.source not in ("flash", "no-flash"):
            raise ValueError(f"unknown point source {self.source!r}")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise ValueError("point colors must lie in [0, 1]")

    def __len__(self):
        return len(self.positions)

    def transformed(self, sim: "Similarity") -> "SfMPoints":
        return SfMPoints(sim.apply(self.positions), self.colors.copy(), self.source)


@dataclass
class LabeledPoints:
    """Points with a transmitted / reflected label.

    ``colors`` are no-flash colors; ``flash_colors`` holds the flash colors of
    transmitted points and NaN rows for reflected points.
    """

    positions: np.ndarray
    colors: np.ndarray
    flash_colors: np.ndarray
    transmitted: np.ndarray

    def __len__(self):
        return len(self.positions)

    @property
    def labels(self) -> np.ndarray:
        return np.where(self.transmitted, "transmitted", "reflected")

    def subset(self, mask) -> "LabeledPoints":
        return LabeledPoints(self.positions[mask], self.colors[mask], self.flash_colors[mask],
                             self.transmitted[mask])


@dataclass
class Similarity:
    """x -> scale * R x + t."""

    scale: float = 1.0
    rotation: np.ndarray = None
    translation: np.ndarray = None

    def __post_init__(self):
        self.rotation = np.eye(3) if self.rotation is None else np.asarray(self.rotation, float)
        self.translation = (np.zeros(3) if self.translation is None
                            else np.asarray(self.translation, float))

    def apply(self, x):
        return self.scale * np.asarray(x, dtype=np.float64) @ self.rotation.T + self.translation


def luminance(colors) -> np.ndarray:
    return np.asarray(colors, dtype=np.float64) @ LUMA


def umeyama(src, dst) -> Similarity:
    """Least-squares similarity mapping src points onto dst points (both (N, 3))."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = np.mean(np.sum(xs ** 2, axis=1))
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1
    rot = u @ s @ vt
    scale = float(np.trace(np.diag(d) @ s) / var_s)
    return Similarity(scale, rot, mu_d - scale * rot @ mu_s)


def _check_centers(c, side):
    if len(c) < 3:
        raise AlignmentError(f"{side}: need at least 3 camera centers, got {len(c)}")
    sv = np.linalg.svd(c - c.mean(0), compute_uv=False)
    if sv[0] == 0 or sv[1] / sv[0] < 1e-6:
        raise AlignmentError(f"{side}: camera centers are collinear; alignment is unreliable")


def _principal_axes(x):
    _, _, vt = np.linalg.svd(x - x.mean(0), full_matrices=False)
    if np.linalg.det(vt) < 0:
        vt[2] *= -1
    return vt


def _start_rotations(fc, nc):
    """Identity plus the four proper rotations mapping principal axes onto each other."""
    af, an = _principal_axes(fc), _principal_axes(nc)
    out = [np.eye(3)]
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        flip = np.diag([sx, sy, sx * sy]).astype(float)
        out.append(an.T @ flip @ af)
    return out


def _match_and_fit(fc, nc, tree, sim, max_iter=50):
    match = None
    for _ in range(max_iter):
        _, new = tree.query(sim.apply(fc))
        if match is not None and np.array_equal(new, match):
            break
        match = new
        sim = umeyama(fc, nc[match])
    rms = float(np.sqrt(np.mean(np.sum((sim.apply(fc) - nc[match]) ** 2, axis=1))))
    return sim, rms


def align_clouds(flash_centers, noflash_centers) -> Similarity:
    """Similarity taking the flash reconstruction's frame into the no-flash frame.

    Flash centers are paired with their nearest no-flash centers and the pairs
    are fitted with Umeyama's closed form, alternating until the pairing stops
    changing. The search starts from a centroid and spread normalization with
    a few principal-axis rotations and keeps the fit with the lowest residual.
    Raises AlignmentError for fewer than three or collinear centers on either
    side; callers may then fall back to the identity.
    """
    fc = np.asarray(flash_centers, dtype=np.float64).reshape(-1, 3)
    nc = np.asarray(noflash_centers, dtype=np.float64).reshape(-1, 3)
    _check_centers(fc, "flash")
    _check_centers(nc, "no-flash")
    tree = cKDTree(nc)
    mf, mn = fc.mean(0), nc.mean(0)
    spread = np.sqrt(np.mean(np.sum((nc - mn) ** 2, 1)) / np.mean(np.sum((fc - mf) ** 2, 1)))
    # the untouched identity competes too, so the fit never raises the residual
    best, best_rms = Similarity(), alignment_rms(fc, nc)
    for rot in _start_rotations(fc, nc):
        start = Similarity(spread, rot, mn - spread * rot @ mf)
        sim, rms = _match_and_fit(fc, nc, tree, start)
        if rms < best_rms - 1e-12:
            best, best_rms = sim, rms
    return best


def alignment_rms(flash_centers, noflash_centers, sim: Similarity | None = None) -> float:
    fc = np.asarray(flash_centers, dtype=np.float64).reshape(-1, 3)
    nc = np.asarray(noflash_centers, dtype=np.float64).reshape(-1, 3)
    moved = fc if sim is None else sim.apply(fc)
    _, match = cKDTree(nc).query(moved)
    return float(np.sqrt(np.mean(np.sum((moved - nc[match]) ** 2, axis=1))))


def default_radius(noflash: SfMPoints) -> float:
    """Twice the median nearest-neighbor spacing of the no-flash cloud."""
    if len(noflash) < 2:
        return np.inf
    d, _ = cKDTree(noflash.positions).query(noflash.positions, k=2)
    return 2.0 * float(np.median(d[:, 1]))


def _canonical_order(pos):
    # lexicographic by (x, y, z) so results do not depend on input order
    return np.lexsort((pos[:, 2], pos[:, 1], pos[:, 0]))


def _nearest(tree_pos, query, radius):
    """Nearest tree point within radius, ties to the lowest index; -1 when none."""
    tree = cKDTree(tree_pos)
    k = min(2, len(tree_pos))
    d, i = tree.query(query, k=k, distance_upper_bound=radius)
    d = d.reshape(len(query), k)
    i = i.reshape(len(query), k)
    best = i[:, 0].copy()
    if k == 2:
        tie = np.isfinite(d[:, 1]) & (d[:, 1] == d[:, 0])
        best[tie] = np.minimum(i[tie, 0], i[tie, 1])
    best[~np.isfinite(d[:, 0])] = -1
    return best


def classify_points(flash: SfMPoints, noflash: SfMPoints, radius: float | None = None,
                    ratio: float = DEFAULT_RATIO) -> LabeledPoints:
    """Label flash points by their brightening relative to the nearest no-flash point.

    A flash point is transmitted when its luminance is at least ``ratio`` times
    that of its nearest no-flash point within ``radius``, and reflected otherwise.
    Flash points without a neighbor are transmitted; no-flash points that no
    flash point lies near are appended as reflected. The output is ordered by
    position, so it does not depend on the input order.

    Flash colors of unmatched transmitted points are converted to the no-flash
    domain with the median brightening of the matched transmitted points.
    """
    if radius is None:
        radius = default_radius(noflash)
    fo = _canonical_order(flash.positions)
    no = _canonical_order(noflash.positions)
    fpos, fcol = flash.positions[fo], flash.colors[fo]
    npos, ncol = noflash.positions[no], noflash.colors[no]

    match = _nearest(npos, fpos, radius)
    has = match >= 0
    lum_f = luminance(fcol)
    lum_n = np.where(has, luminance(ncol[np.maximum(match, 0)]), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(lum_n > 0, lum_f / np.where(lum_n > 0, lum_n, 1.0),
                       np.where(lum_f > 0, np.inf, 1.0))
    trans = np.where(has, rel >= ratio, True)

    matched_t = has & trans & np.isfinite(rel)
    gain = float(np.median(rel[matched_t])) if matched_t.any() else 1.0
    nf_col = np.where(has[:, None], ncol[np.maximum(match, 0)], fcol / gain)
    # reflected points barely change under flash; keep the mean of both observations
    refl_col = np.where(has[:, None], 0.5 * (fcol + nf_col), fcol)
    colors = np.where(trans[:, None], nf_col, refl_col)
    flash_colors = np.where(trans[:, None], fcol, np.nan)

    orphan = _nearest(fpos, npos, radius) < 0
    pos = np.concatenate([fpos, npos[orphan]])
    colors = np.clip(np.concatenate([colors, ncol[orphan]]), 0.0, 1.0)
    flash_colors = np.concatenate([flash_colors, np.full((orphan.sum(), 3), np.nan)])
    trans = np.concatenate([trans, np.zeros(orphan.sum(), bool)])
    order = _canonical_order(pos)
    log.info("classified %d points: %d transmitted, %d reflected (radius %.4g)",
             len(pos), trans.sum(), (~trans).sum(), radius)
    return LabeledPoints(pos[order], colors[order], flash_colors[order], trans[order])


@dataclass
class InitConfig:
    sh_degree: int = 1
    max_points: int = 2000
    n_random: int = 1000
    gamma_exponent: float = GAMMA_EXPONENT
    hard_linear: float | None = None
    flashless: bool = False
    seed: int = 0


def _nn_log_scale(pos):
    if len(pos) < 2:
        return np.full(len(pos), np.log(0.01))
    k = min(4, len(pos))
    d, _ = cKDTree(pos).query(pos, k=k)
    mean_d = np.maximum(d[:, 1:].mean(axis=1), 1e-7)
    return np.log(mean_d)


def seed_cloud(positions, colors, sh_degree: int = 1, exponent: float = GAMMA_EXPONENT,
               dc_values=None) -> GaussianCloud:
    """Isotropic cloud at the given points; colors are raw-linear and stored tone-mapped."""
    pos = np.asarray(positions, dtype=np.float64)
    n = len(pos)
    if dc_values is None:
        col = np.clip(np.asarray(colors, dtype=np.float64), 0.0, 1.0) ** exponent
        dc = rgb_to_dc(col)
    else:
        dc = np.asarray(dc_values, dtype=np.float64).reshape(n, -1)
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, dc.shape[1]))
    sh[:, 0] = dc
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianCloud(
        means=pos.copy(), quats=quats,
        log_scales=np.repeat(_nn_log_scale(pos)[:, None], 3, axis=1),
        opacity_logits=np.full(n, float(logit(INIT_OPACITY))),
        sh=sh, sh_degree=sh_degree,
    )


def _cap(idx, limit, rng):
    if len(idx) <= limit:
        return idx
    return np.sort(rng.choice(idx, size=limit, replace=False))


def random_cloud(lo, hi, n, channels, rng, sh_degree=1, exponent=GAMMA_EXPONENT,
                 value=0.5) -> GaussianCloud:
    pos = rng.uniform(lo, hi, size=(n, 3))
    if channels == 1:
        return seed_cloud(pos, None, sh_degree, exponent, dc_values=rgb_to_dc(np.ones((n, 1))))
    return seed_cloud(pos, np.full((n, 3), value), sh_degree, exponent)


def init_scene(labels: LabeledPoints, config: InitConfig | None = None) -> SceneModel:
    """Seed T_F, T_N and beta at transmitted points and R at reflected points.

    Each cloud keeps at most ``config.max_points`` points (seeded subsample). A
    missing label set is replaced by uniform random seeding in the bounding box
    of all points, with a warning. In flashless mode the transmitted cloud is
    seeded from every point's no-flash color.
    """
    cfg = config or InitConfig()
    rng = np.random.default_rng(cfg.seed)
    lo, hi = labels.positions.min(0), labels.positions.max(0)
    g = cfg.gamma_exponent

    if cfg.flashless:
        t_idx = np.arange(len(labels))
        r_idx = t_idx
    else:
        t_idx = np.flatnonzero(labels.transmitted)
        r_idx = np.flatnonzero(~labels.transmitted)
    t_idx = _cap(t_idx, cfg.max_points, rng)
    r_idx = _cap(r_idx, cfg.max_points, rng)

    def rand(ch):
        return random_cloud(lo, hi, cfg.n_random, ch, rng, cfg.sh_degree, g)

    if len(t_idx):
        pos = labels.positions[t_idx]
        t_n = seed_cloud(pos, labels.colors[t_idx], cfg.sh_degree, g)
        fcol = labels.flash_colors[t_idx]
        fcol = np.where(np.isnan(fcol), labels.colors[t_idx], fcol)
        t_f = seed_cloud(pos, fcol, cfg.sh_degree, g)
        beta = seed_cloud(pos, None, cfg.sh_degree, g, dc_values=rgb_to_dc(np.ones((len(pos), 1))))
    else:
        warnings.warn("no transmitted points; seeding T_F, T_N and beta randomly", stacklevel=2)
        t_n, t_f, beta = rand(3), rand(3), rand(1)
    if len(r_idx):
        r = seed_cloud(labels.positions[r_idx], labels.colors[r_idx], cfg.sh_degree, g)
    else:
        warnings.warn("no reflected points; seeding R randomly", stacklevel=2)
        r = rand(3)
    return SceneModel(t_f, t_n, r, beta, gamma_exponent=g, hard_linear=cfg.hard_linear,
                      flashless=cfg.flashless)


def random_scene(lo, hi, n: int, config: InitConfig | None = None) -> SceneModel:
    """Every cloud seeded uniformly in the box [lo, hi]; used when initialization is skipped."""
    cfg = config or InitConfig()
    rng = np.random.default_rng(cfg.seed)
    clouds = [random_cloud(lo, hi, n, ch, rng, cfg.sh_degree, cfg.gamma_exponent)
              for ch in (3, 3, 3, 1)]
    return SceneModel(*clouds, gamma_exponent=cfg.gamma_exponent, hard_linear=cfg.hard_linear,
                      flashless=cfg.flashless)
