"""Synthetic flash/no-flash captures with exact ground-truth layers.

The world is three textured planes: the transmitted scene behind the glass, the
glass itself carrying the reflective fraction beta, and the reflected scene as a
virtual plane placed behind the glass (the mirror image is pre-applied). Images
are produced by casting one ray per pixel, with no code shared with the splatting
renderer, and composed as

    I_N = T_N + beta * R
    I_F = (1 + alpha * f) * T_N + (beta + beta_F) * R

where f is 1 for a uniform flash and an inverse-square falloff otherwise.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .camera import CameraView, CaptureSet, Intrinsics, look_at
from .flashinit import SfMPoints
from .io import (read_json, read_pfm, read_points_ply, write_json, write_pfm,
                 write_png_preview, write_points_ply)

log = logging.getLogger(__name__)

REFLECTED_THRESHOLD = 1e-3  # beta * R above this marks a pixel as reflected


class SynthConfigError(ValueError):
    pass


@dataclass
class Texture:
    """Image on the unit square sampled bilinearly; values (h, w, C) in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[..., None]
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise SynthConfigError("texture values must lie in [0, 1]")

    def sample(self, s, t):
        h, w = self.values.shape[:2]
        x = np.clip(s, 0.0, 1.0) * (w - 1)
        y = np.clip(t, 0.0, 1.0) * (h - 1)
        x0 = np.minimum(np.floor(x).astype(int), w - 2)
        y0 = np.minimum(np.floor(y).astype(int), h - 2)
        fx = (x - x0)[..., None]
        fy = (y - y0)[..., None]
        v = self.values
        top = v[y0, x0] * (1 - fx) + v[y0, x0 + 1] * fx
        bot = v[y0 + 1, x0] * (1 - fx) + v[y0 + 1, x0 + 1] * fx
        return top * (1 - fy) + bot * fy


@dataclass
class Plane:
    """Parallelogram origin + s * u + t * v for s, t in [0, 1], carrying a texture."""

    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    texture: Texture

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if not (np.isfinite(self.origin).all() and np.isfinite(self.u).all()
                and np.isfinite(self.v).all()):
            raise SynthConfigError("plane geometry must be finite")
        if np.linalg.norm(np.cross(self.u, self.v)) == 0:
            raise SynthConfigError("plane edges must span a parallelogram")

    @property
    def normal(self):
        n = np.cross(self.u, self.v)
        return n / np.linalg.norm(n)

    def intersect(self, origins, dirs):
        """Ray parameter, (s, t) and hit mask for rays origins + lam * dirs."""
        n = self.normal
        denom = dirs @ n
        ok = np.abs(denom) > 1e-12
        lam = np.where(ok, ((self.origin - origins) @ n) / np.where(ok, denom, 1.0), -1.0)
        p = origins + lam[..., None] * dirs
        # solve p - origin = s u + t v in the plane's own basis
        m = np.stack([self.u, self.v], axis=1)
        st = (p - self.origin) @ np.linalg.pinv(m).T
        s, t = st[..., 0], st[..., 1]
        hit = ok & (lam > 0) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
        return lam, s, t, hit

    def point(self, s, t):
        return self.origin + np.asarray(s)[..., None] * self.u + np.asarray(t)[..., None] * self.v


@dataclass
class SyntheticScene:
    transmitted: Plane
    reflected: Plane
    glass: Plane
    alpha: float = 1.0
    beta_f: float = 0.0
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    falloff: bool = False
    falloff_ref: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise SynthConfigError("flash gain alpha must be positive")
        if self.beta_f < 0:
            raise SynthConfigError("beta_F must be non-negative")
        self.background = np.asarray(self.background, dtype=np.float64)

    def flash_gain(self, light_pos, points):
        """Multiplier f on alpha for flash light at light_pos reaching points."""
        if not self.falloff:
            return np.ones(np.shape(points)[:-1])
        d2 = np.sum((np.asarray(points) - light_pos) ** 2, axis=-1)
        return np.minimum(self.falloff_ref ** 2 / d2, 1.0)


@dataclass
class OracleRender:
    """Per-view ground truth; all images raw-linear (H, W, 3) unless noted."""

    image: np.ndarray
    T_N: np.ndarray
    beta_R: np.ndarray
    beta: np.ndarray          # (H, W)
    R: np.ndarray
    depth_T: np.ndarray       # (H, W), 0 where the ray misses
    depth_R: np.ndarray
    mask: np.ndarray          # (H, W) uint8: bit 0 transmitted hit, bit 1 reflected
    flash: bool
    flash_gain: np.ndarray | None = None  # (H, W) falloff factor f; None for no-flash views

    @property
    def reflected_mask(self):
        return (self.mask & 2) > 0


def _pixel_rays(view: CameraView):
    k = view.intrinsics
    jj, ii = np.meshgrid(np.arange(k.width, dtype=np.float64),
                         np.arange(k.height, dtype=np.float64))
    d_cam = np.stack([(jj - k.cx) / k.fx, (ii - k.cy) / k.fy, np.ones_like(jj)], axis=-1)
    dirs = d_cam @ view.rotation  # rows of R^T applied to each direction
    origins = np.broadcast_to(view.center, dirs.shape)
    return origins, dirs


def render_oracle(scene: SyntheticScene, view: CameraView, flash: bool) -> OracleRender:
    """Exact layered image at view by one ray per pixel."""
    origins, dirs = _pixel_rays(view)
    h, w = dirs.shape[:2]
    rot_z = view.rotation[2]

    lam_t, s, t, hit_t = scene.transmitted.intersect(origins, dirs)
    t_n = np.where(hit_t[..., None], scene.transmitted.texture.sample(s, t), scene.background)
    p_t = origins + lam_t[..., None] * dirs
    depth_t = np.where(hit_t, (p_t - view.center) @ rot_z, 0.0)

    _, s, t, hit_g = scene.glass.intersect(origins, dirs)
    beta = np.where(hit_g, scene.glass.texture.sample(s, t)[..., 0], 0.0)

    lam_r, s, t, hit_r = scene.reflected.intersect(origins, dirs)
    r = np.where(hit_r[..., None], scene.reflected.texture.sample(s, t), 0.0)
    p_r = origins + lam_r[..., None] * dirs
    depth_r = np.where(hit_r, (p_r - view.center) @ rot_z, 0.0)

    beta_r = beta[..., None] * r
    gain = None
    if flash:
        gain = np.where(hit_t, scene.flash_gain(view.center, p_t), 1.0)
        image = (1.0 + scene.alpha * gain[..., None]) * t_n + (beta[..., None] + scene.beta_f) * r
    else:
        image = t_n + beta_r
    mask = hit_t.astype(np.uint8) | ((beta_r.max(-1) > REFLECTED_THRESHOLD).astype(np.uint8) << 1)
    return OracleRender(image, t_n, beta_r, beta, r, depth_t, depth_r, mask.reshape(h, w), flash,
                        gain)


def paired_subtract(i_f, i_n):
    """Reflection-free estimate max(I_F - I_N, 0) from a flash/no-flash pair at one pose."""
    i_f = np.asarray(i_f, dtype=np.float64)
    i_n = np.asarray(i_n, dtype=np.float64)
    if i_f.shape != i_n.shape:
        raise ValueError(f"shape mismatch: {i_f.shape} vs {i_n.shape}")
    return np.maximum(i_f - i_n, 0.0)


# --- procedural textures -----------------------------------------------------------

def procedural_texture(rng, size=256, channels=3, lo=0.0, hi=1.0, checker=6, blobs=6,
                       smooth=3.0) -> Texture:
    """Blurred checkerboard plus a gradient and seeded blobs, rescaled into [lo, hi]."""
    y, x = np.mgrid[0:size, 0:size] / (size - 1)
    out = np.empty((size, size, channels))
    phase = rng.uniform(0, 1, 2)
    board = ((np.floor((x + phase[0]) * checker) + np.floor((y + phase[1]) * checker)) % 2)
    board = gaussian_filter(board, smooth * size / 256)
    for c in range(channels):
        g = rng.uniform(-1, 1, 2)
        field_ = 0.45 * board * rng.uniform(0.5, 1.0) + 0.25 * (g[0] * x + g[1] * y)
        for _ in range(blobs):
            cx, cy = rng.uniform(0, 1, 2)
            sig = rng.uniform(0.05, 0.2)
            field_ += rng.uniform(-0.4, 0.4) * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sig ** 2))
        field_ = (field_ - field_.min()) / max(np.ptp(field_), 1e-12)
        out[..., c] = lo + (hi - lo) * field_
    return Texture(out)


def beta_texture(rng, size=128, lo=0.15, hi=0.45, coverage=0.7) -> Texture:
    """Smooth reflective-fraction map in [lo, hi] with a reflection-free share of 1 - coverage."""
    y, x = np.mgrid[0:size, 0:size] / (size - 1)
    field_ = np.zeros((size, size))
    for _ in range(5):
        cx, cy = rng.uniform(0, 1, 2)
        sig = rng.uniform(0.15, 0.35)
        field_ += rng.uniform(0.5, 1.0) * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sig ** 2))
    cut = np.quantile(field_, 1.0 - coverage)
    ramp = np.clip((field_ - cut) / max(np.ptp(field_) * 0.15, 1e-12), 0.0, 1.0)
    rel = (field_ - field_.min()) / max(np.ptp(field_), 1e-12)
    return Texture(ramp * (lo + (hi - lo) * rel))


# --- dataset emission ------------------------------------------------------------------

@dataclass
class DatasetSpec:
    n_flash: int = 6
    n_noflash: int = 6
    width: int = 128
    height: int = 96
    fov_x_deg: float = 50.0
    arc_deg: float = 24.0
    jitter: float = 0.01
    n_heldout: int = 2
    depth_T: float = 3.0
    depth_glass: float = 1.5
    depth_R: float = 4.5
    alpha: float = 1.0
    beta_f: float = 0.0
    falloff: bool = False
    t_range: tuple = (0.03, 0.33)
    r_range: tuple = (0.05, 0.7)
    beta_range: tuple = (0.15, 0.45)
    n_points: int = 2000
    point_jitter: float = 0.25
    color_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_flash < 1 or self.n_noflash < 1:
            raise SynthConfigError("need at least one view per pool")
        if not self.arc_deg > 0:
            raise SynthConfigError("camera arc must have positive extent")
        if not 0 < self.depth_glass < self.depth_T < self.depth_R:
            raise SynthConfigError("planes must be ordered camera < glass < transmitted < reflected")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise SynthConfigError(f"unknown dataset spec keys: {sorted(unknown)}")
        for key in ("t_range", "r_range", "beta_range"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass
class Dataset:
    """Unpaired captures plus everything needed to score a reconstruction.

    ``companions`` maps each training and held-out view id to the opposite-flash
    image at the identical pose; ``truth`` holds the per-view oracle layers.
    """

    spec: DatasetSpec
    capture: CaptureSet
    heldout: list[CameraView]
    truth: dict[str, OracleRender]
    companions: dict[str, np.ndarray]
    flash_points: SfMPoints
    noflash_points: SfMPoints
    flash_point_labels: np.ndarray
    noflash_point_labels: np.ndarray
    scene: SyntheticScene | None = None

    @property
    def flash_centers(self):
        return np.array([v.center for v in self.capture.flash_views])

    @property
    def noflash_centers(self):
        return np.array([v.center for v in self.capture.noflash_views])

    def paired_reference(self, view_id: str) -> np.ndarray:
        """alpha * T_N estimate from the oracle flash/no-flash pair at one pose."""
        gt = self.truth[view_id]
        other = self.companions[view_id]
        i_f, i_n = (gt.image, other) if gt.flash else (other, gt.image)
        return paired_subtract(i_f, i_n)

    def noflash_capture(self) -> list[CameraView]:
        """Every training pose as a no-flash view, using companions at flash poses."""
        out = []
        for v in self.capture.views:
            img = v.image if not v.flash else self.companions[v.view_id]
            out.append(CameraView(v.intrinsics, v.rotation, v.translation, False, img, v.view_id))
        return out

    def true_labels(self, positions) -> np.ndarray:
        """Transmitted (True) when a point is closer to the transmitted depth than the reflected."""
        z = np.asarray(positions)[:, 2]
        return np.abs(z - self.spec.depth_T) < np.abs(z - self.spec.depth_R)


def _frustum_bounds(spec: DatasetSpec, z: float, margin: float = 0.1):
    """x/y box of the plane at depth z covered by any training or held-out view."""
    k = Intrinsics.from_fov(spec.width, spec.height, spec.fov_x_deg)
    corners = np.array([[(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0]
                        for u in (0, k.width - 1) for v in (0, k.height - 1)])
    pts = []
    poses = [(e, t) for e, t, _ in _arc_poses(spec, None)] + _heldout_poses(spec)
    for eye, target in poses:
        r, _ = look_at(eye, target)
        d = corners @ r
        lam = (z - eye[2]) / d[:, 2]
        pts.append(eye + lam[:, None] * d)
    pts = np.concatenate(pts)
    lo, hi = pts[:, :2].min(0), pts[:, :2].max(0)
    pad = margin * (hi - lo)
    return lo - pad, hi + pad


def build_scene(spec: DatasetSpec) -> SyntheticScene:
    rng = np.random.default_rng(spec.seed)

    def plane(z, tex, margin):
        lo, hi = _frustum_bounds(spec, z, margin)
        return Plane([lo[0], lo[1], z], [hi[0] - lo[0], 0, 0], [0, hi[1] - lo[1], 0], tex)

    t_tex = procedural_texture(rng, 256, 3, *spec.t_range, checker=5)
    r_tex = procedural_texture(rng, 256, 3, *spec.r_range, checker=4)
    b_tex = beta_texture(rng, 128, *spec.beta_range)
    return SyntheticScene(
        transmitted=plane(spec.depth_T, t_tex, 0.15),
        # the reflected plane stops short of the frame edge so some pixels carry no reflection
        reflected=plane(spec.depth_R, r_tex, -0.08),
        glass=plane(spec.depth_glass, b_tex, 0.05),
        alpha=spec.alpha, beta_f=spec.beta_f, falloff=spec.falloff,
        falloff_ref=spec.depth_T,
    )


def _arc_poses(spec: DatasetSpec, rng):
    n = spec.n_flash + spec.n_noflash
    target = np.array([0.0, 0.0, spec.depth_T])
    half = np.radians(spec.arc_deg) / 2
    angles = np.linspace(-half, half, n)
    # flash and no-flash interleave along the arc; leftovers of the larger pool go last
    flags, nf, nn = [], spec.n_flash, spec.n_noflash
    while nf or nn:
        if nf:
            flags.append(True)
            nf -= 1
        if nn:
            flags.append(False)
            nn -= 1
    poses = []
    for a, fl in zip(angles, flags):
        eye = target + spec.depth_T * np.array([np.sin(a), 0.0, -np.cos(a)])
        if rng is None:
            poses.append((eye, target, fl))
            continue
        eye = eye + rng.normal(0.0, spec.jitter, 3)
        poses.append((eye, target + rng.normal(0.0, spec.jitter, 3), fl))
    return poses


def _heldout_poses(spec: DatasetSpec):
    target = np.array([0.0, 0.0, spec.depth_T])
    half = np.radians(spec.arc_deg) / 2
    out = []
    for i in range(spec.n_heldout):
        a = half * (0.55 if i % 2 == 0 else -0.35) * (1 + 0.1 * (i // 2))
        eye = target + spec.depth_T * np.array([np.sin(a), 0.0, -np.cos(a)])
        eye[1] += 0.08 * (-1) ** i
        out.append((eye, target))
    return out


def _grid_samples(rng, n, s_range, t_range, jitter):
    """Jittered-grid sample of roughly n points in a parameter rectangle."""
    ds, dt = s_range[1] - s_range[0], t_range[1] - t_range[0]
    cols = max(1, int(round(np.sqrt(n * ds / dt))))
    rows = max(1, int(round(n / cols)))
    gs, gt = np.meshgrid((np.arange(cols) + 0.5) / cols, (np.arange(rows) + 0.5) / rows)
    gs = gs.ravel() + rng.uniform(-jitter, jitter, gs.size) / cols
    gt = gt.ravel() + rng.uniform(-jitter, jitter, gt.size) / rows
    return s_range[0] + ds * gs, t_range[0] + dt * gt


def _visible_params(plane: Plane, views):
    """Bounding (s, t) range of the plane seen by any of the views."""
    ss, ts = [], []
    for v in views:
        o, d = _pixel_rays(v)
        _, s, t, hit = plane.intersect(o, d)
        ss.append(s[hit])
        ts.append(t[hit])
    s, t = np.concatenate(ss), np.concatenate(ts)
    return (s.min(), s.max()), (t.min(), t.max())


def _sample_points(scene, views, spec, rng, flash, pool_center):
    """SfM-like points on the transmitted and (visibly reflected part of the) reflected plane."""
    s_rng, t_rng = _visible_params(scene.transmitted, views)
    s, t = _grid_samples(rng, spec.n_points, s_rng, t_rng, spec.point_jitter)
    pos_t = scene.transmitted.point(s, t)
    col_t = scene.transmitted.texture.sample(s, t)
    if flash:
        col_t = (1.0 + scene.alpha * scene.flash_gain(pool_center, pos_t))[:, None] * col_t

    s_rng, t_rng = _visible_params(scene.reflected, views)
    s, t = _grid_samples(rng, spec.n_points, s_rng, t_rng, spec.point_jitter)
    pos_r = scene.reflected.point(s, t)
    col_r = scene.reflected.texture.sample(s, t)
    # keep reflected points only where the glass actually reflects them towards the pool
    d = pos_r - pool_center
    _, gs, gt, ghit = scene.glass.intersect(np.broadcast_to(pool_center, d.shape), d)
    beta = np.where(ghit, scene.glass.texture.sample(gs, gt)[:, 0], 0.0)
    keep = beta > 0.02
    pos_r, col_r = pos_r[keep], col_r[keep]
    if flash and scene.beta_f > 0:
        col_r = col_r * (1.0 + scene.beta_f / np.maximum(beta[keep, None], 1e-6))

    pos = np.concatenate([pos_t, pos_r])
    col = np.concatenate([col_t, col_r])
    labels = np.concatenate([np.ones(len(pos_t), bool), np.zeros(len(pos_r), bool)])
    if spec.color_noise > 0:
        col = col * (1.0 + spec.color_noise * rng.standard_normal(col.shape))
    return SfMPoints(pos, np.clip(col, 0.0, 1.0), "flash" if flash else "no-flash"), labels


def emit_dataset(spec: DatasetSpec | None = None, scene: SyntheticScene | None = None) -> Dataset:
    spec = spec or DatasetSpec()
    scene = scene or build_scene(spec)
    rng = np.random.default_rng(spec.seed + 1)
    k = Intrinsics.from_fov(spec.width, spec.height, spec.fov_x_deg)

    views, truth, companions = [], {}, {}
    counters = {True: 0, False: 0}
    for eye, target, fl in _arc_poses(spec, rng):
        r, t = look_at(eye, target)
        vid = f"{'F' if fl else 'N'}{counters[fl]:02d}"
        counters[fl] += 1
        view = CameraView(k, r, t, fl, None, vid)
        gt = render_oracle(scene, view, fl)
        truth[vid] = gt
        companions[vid] = render_oracle(scene, view, not fl).image
        views.append(view.with_image(gt.image))
    capture = CaptureSet(views)

    heldout = []
    for i, (eye, target) in enumerate(_heldout_poses(spec)):
        r, t = look_at(eye, target)
        vid = f"H{i:02d}"
        view = CameraView(k, r, t, False, None, vid)
        gt = render_oracle(scene, view, False)
        truth[vid] = gt
        companions[vid] = render_oracle(scene, view, True).image
        heldout.append(view.with_image(gt.image))

    fc = np.mean([v.center for v in capture.flash_views], axis=0)
    nc = np.mean([v.center for v in capture.noflash_views], axis=0)
    fpts, flab = _sample_points(scene, capture.flash_views, spec, rng, True, fc)
    npts, nlab = _sample_points(scene, capture.noflash_views, spec, rng, False, nc)
    log.info("emitted %d views, %d + %d points", len(views), len(fpts), len(npts))
    return Dataset(spec, capture, heldout, truth, companions, fpts, npts, flab, nlab, scene)


def layer_identity_error(gt: OracleRender, alpha: float, beta_f: float = 0.0) -> float:
    """Largest per-pixel deviation of the image from its composition out of the stored layers."""
    if gt.flash:
        f = 1.0 if gt.flash_gain is None else gt.flash_gain[..., None]
        expect = (1.0 + alpha * f) * gt.T_N + (gt.beta[..., None] + beta_f) * gt.R
    else:
        expect = gt.T_N + gt.beta[..., None] * gt.R
    return float(np.abs(gt.image - expect).max())


# --- disk layout ---------------------------------------------------------------------------

def write_dataset(ds: Dataset, out) -> None:
    out = Path(out)
    for sub in ("images", "previews", "gt"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for v in ds.capture.views + ds.heldout:
        gt = ds.truth[v.view_id]
        write_pfm(out / "images" / f"{v.view_id}.pfm", gt.image)
        write_png_preview(out / "previews" / f"{v.view_id}.png", gt.image)
        write_pfm(out / "gt" / f"{v.view_id}_companion.pfm", ds.companions[v.view_id])
        for name in ("T_N", "beta_R", "R"):
            write_pfm(out / "gt" / f"{v.view_id}_{name}.pfm", getattr(gt, name))
        for name in ("beta", "depth_T", "depth_R"):
            write_pfm(out / "gt" / f"{v.view_id}_{name}.pfm", getattr(gt, name))
        write_pfm(out / "gt" / f"{v.view_id}_mask.pfm", gt.mask.astype(np.float32))
        records.append(v.to_record())
    write_json(out / "poses.json", records)
    write_points_ply(out / "points_flash.ply", ds.flash_points.positions, ds.flash_points.colors)
    write_points_ply(out / "points_noflash.ply", ds.noflash_points.positions,
                     ds.noflash_points.colors)
    write_json(out / "manifest.json", {
        "spec": ds.spec.to_dict(),
        "seed": ds.spec.seed,
        "train": [v.view_id for v in ds.capture.views],
        "heldout": [v.view_id for v in ds.heldout],
        "shared_frame": True,
        "point_labels": {
            "flash": [int(b) for b in ds.flash_point_labels],
            "noflash": [int(b) for b in ds.noflash_point_labels],
        },
    })


def read_dataset(path) -> Dataset:
    """Load a dataset written by :func:`write_dataset` (images as stored float32)."""
    p = Path(path)
    manifest = read_json(p / "manifest.json")
    spec = DatasetSpec.from_dict(manifest["spec"])
    records = {r["view_id"]: r for r in read_json(p / "poses.json")}
    truth, companions, views = {}, {}, {}
    for vid, rec in records.items():
        img = read_pfm(p / "images" / f"{vid}.pfm").astype(np.float64)
        view = CameraView.from_record(rec, img)
        views[vid] = view

        def g(name):
            return read_pfm(p / "gt" / f"{vid}_{name}.pfm").astype(np.float64)

        truth[vid] = OracleRender(img, g("T_N"), g("beta_R"), g("beta"), g("R"), g("depth_T"),
                                  g("depth_R"), g("mask").astype(np.uint8), view.flash)
        companions[vid] = g("companion")
    fpos, fcol = read_points_ply(p / "points_flash.ply")
    npos, ncol = read_points_ply(p / "points_noflash.ply")
    labels = manifest.get("point_labels", {})
    return Dataset(
        spec, CaptureSet([views[v] for v in manifest["train"]]),
        [views[v] for v in manifest["heldout"]], truth, companions,
        SfMPoints(fpos, fcol, "flash"), SfMPoints(npos, ncol, "no-flash"),
        np.array(labels.get("flash", []), bool), np.array(labels.get("noflash", []), bool),
        None,
    )
