"""Four-cloud scene model and the tone-mapped flash/no-flash image formation.

Each cloud renders tone-mapped values. Transmission and reflection are added in
the raw-linear domain and tone-mapped back:

    composite = g(g^-1(T) + beta * g^-1(R)),    g(x) = x ** 0.22

where T comes from the flash or no-flash transmission cloud depending on the view.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraView
from .io import read_cloud_ply, read_json, write_cloud_ply, write_json
from .raster import ParamGradients, RenderTarget, render, render_backward
from .splat import GaussianCloud

GAMMA_EXPONENT = 0.22
CLOUD_NAMES = ("T_F", "T_N", "R", "beta")


class GammaDomainError(ValueError):
    pass


@dataclass
class ToneCurve:
    """Power-law tone curve. Inputs above 1 are clamped and counted in ``n_clamped``."""

    exponent: float = GAMMA_EXPONENT
    n_clamped: int = 0

    def __post_init__(self):
        if not 0.0 < self.exponent <= 1.0:
            raise ValueError(f"gamma exponent must lie in (0, 1], got {self.exponent}")

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < 0):
            raise GammaDomainError("tone curve is undefined for negative values")
        over = x > 1.0
        if over.any():
            self.n_clamped += int(over.sum())
            x = np.minimum(x, 1.0)
        return x

    def forward(self, x):
        return self._check(x) ** self.exponent

    def inverse(self, x):
        return self._check(x) ** (1.0 / self.exponent)


_default_curve = ToneCurve()


def gamma(x, exponent: float = GAMMA_EXPONENT):
    if exponent == GAMMA_EXPONENT:
        return _default_curve.forward(x)
    return ToneCurve(exponent).forward(x)


def gamma_inv(x, exponent: float = GAMMA_EXPONENT):
    if exponent == GAMMA_EXPONENT:
        return _default_curve.inverse(x)
    return ToneCurve(exponent).inverse(x)


def clamp_count() -> int:
    return _default_curve.n_clamped


def compose(t, beta_map, r, exponent: float = GAMMA_EXPONENT):
    """Tone-mapped composite of tone-mapped T and R layers with a scalar beta map.

    Returns the composite clamped to [0, 1] and a cache for :func:`compose_backward`.
    Unlike :func:`gamma`, the inner powers accept values above 1 so that an
    unconverged model keeps its gradients.
    """
    t = np.asarray(t, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    b = np.asarray(beta_map, dtype=np.float64)[..., None]
    inv = 1.0 / exponent
    t_raw = t ** inv
    r_raw = r ** inv
    refl = b * r_raw
    raw = t_raw + refl
    # no reflection: pass T through untouched instead of a lossy power round trip
    comp = np.where(refl == 0.0, t, raw ** exponent)
    return np.clip(comp, 0.0, 1.0), (t, b, r, t_raw, r_raw, raw, exponent)


def compose_backward(cache, d_comp):
    """Gradients w.r.t. (t, beta_map, r); the final clamp passes gradients straight through.

    The slopes are written as raw-domain ratios bounded by 1, which stay exact for
    very dark pixels where ``raw`` underflows towards zero.
    """
    t, b, r, t_raw, r_raw, raw, g = cache
    pos = raw > 0.0
    safe = np.where(pos, raw, 1.0)
    # at raw == 0 take the limits along each layer: slope 1 for T and b**g for R
    ratio_t = np.where(pos, t_raw / safe, 1.0)
    ratio_r = np.where(pos, r_raw / safe, 1.0 / np.maximum(b, 1e-300))
    d_t = d_comp * ratio_t ** (1.0 - g)
    d_r = d_comp * b * ratio_r ** (1.0 - g)
    comp = safe ** g
    d_b = np.sum(np.where(pos, d_comp * g * comp * r_raw / safe, 0.0), axis=-1)
    return d_t, d_b, d_r


def smooth_clamp(x):
    return x / (1.0 + x)


@dataclass
class SceneModel:
    """The optimized unknown: transmission (flash / no-flash), reflection and beta clouds.

    ``T_F`` is None in hard-linear mode (derived from T_N with gain ``hard_linear``)
    and in flashless mode (a single transmission cloud serves every view).
    """

    T_F: GaussianCloud | None
    T_N: GaussianCloud
    R: GaussianCloud
    beta: GaussianCloud
    gamma_exponent: float = GAMMA_EXPONENT
    hard_linear: float | None = None
    flashless: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma_exponent <= 1.0:
            raise ValueError("gamma_exponent must lie in (0, 1]")
        if self.hard_linear is not None and self.flashless:
            raise ValueError("hard-linear and flashless modes are exclusive")
        if self.hard_linear is not None and self.hard_linear <= 0:
            raise ValueError("hard-linear gain must be positive")
        if self.has_free_tf and self.T_F is None:
            raise ValueError("the flash transmission cloud is required in the default mode")
        if not self.has_free_tf:
            self.T_F = None
        for name, ch in (("T_F", 3), ("T_N", 3), ("R", 3), ("beta", 1)):
            cloud = getattr(self, name)
            if cloud is not None and cloud.channels != ch:
                raise ValueError(f"cloud {name} must have {ch} channels, has {cloud.channels}")
        clouds = list(self.clouds().values())
        ids = {id(a) for c in clouds for a in c.params().values()}
        if len(ids) != sum(len(c.params()) for c in clouds):
            raise ValueError("scene clouds must not share parameter arrays")

    @property
    def has_free_tf(self) -> bool:
        return self.hard_linear is None and not self.flashless

    @property
    def mode(self) -> str:
        if self.flashless:
            return "flashless"
        return "hard_linear" if self.hard_linear is not None else "soft"

    def clouds(self) -> dict[str, GaussianCloud]:
        return {n: getattr(self, n) for n in CLOUD_NAMES if getattr(self, n) is not None}

    def copy(self) -> "SceneModel":
        return SceneModel(
            **{n: (c.copy() if c is not None else None)
               for n, c in ((n, getattr(self, n)) for n in CLOUD_NAMES)},
            gamma_exponent=self.gamma_exponent, hard_linear=self.hard_linear,
            flashless=self.flashless,
        )

    def is_valid(self) -> bool:
        ok = True
        for c in self.clouds().values():
            ok &= len(c) > 0 and c.is_finite()
            ok &= bool(np.all(np.abs(np.linalg.norm(c.quats, axis=1) - 1.0) < 1e-6))
        return bool(ok)


@dataclass
class CompositeRender:
    composite: np.ndarray
    T: np.ndarray
    beta_map: np.ndarray
    R: np.ndarray
    depth_T: np.ndarray
    depth_R: np.ndarray
    pseudo_pair: tuple[np.ndarray, np.ndarray] | None
    flash: bool
    scene: SceneModel = field(repr=False)
    renders: dict[str, RenderTarget] = field(repr=False, default_factory=dict)
    _cache: tuple = field(repr=False, default=())

    @property
    def components(self) -> dict[str, np.ndarray]:
        return {"T": self.T, "beta": self.beta_map, "R": self.R,
                "depth_T": self.depth_T, "depth_R": self.depth_R}

    def backward(self, d_composite=None, d_depth_R=None, d_pair_F=None, d_pair_N=None):
        """Scene gradients from upstream gradients on the composite, the reflection
        depth and the two pseudo-pair images."""
        scene = self.scene
        h, w = self.beta_map.shape
        zero3 = np.zeros((h, w, 3))
        d_t_img = {"F": zero3.copy(), "N": zero3.copy()}
        d_beta_map = np.zeros((h, w))
        d_r = zero3.copy()
        if d_composite is not None:
            d_t, d_beta_map, d_r = compose_backward(self._cache, d_composite)
            d_t_img["F" if self.flash and not scene.flashless else "N"] += d_t
        if d_pair_F is not None:
            d_t_img["F"] += d_pair_F
        if d_pair_N is not None:
            d_t_img["N"] += d_pair_N

        grads: dict[str, ParamGradients] = {}
        if scene.hard_linear is not None:
            d_t_img["N"] += scene.hard_linear ** scene.gamma_exponent * d_t_img.pop("F")
        else:
            d_f = d_t_img.pop("F")
            if "T_F" in self.renders:
                grads["T_F"] = render_backward(self.renders["T_F"].backward_ctx, d_f)
        grads["T_N"] = render_backward(self.renders["T_N"].backward_ctx, d_t_img["N"])
        grads["R"] = render_backward(self.renders["R"].backward_ctx, d_r, d_depth_R)
        b = self.renders["beta"].color[..., 0]
        d_b = (d_beta_map / (1.0 + b) ** 2)[..., None]
        grads["beta"] = render_backward(self.renders["beta"].backward_ctx, d_b)
        for name, cloud in scene.clouds().items():
            if name not in grads:
                grads[name] = ParamGradients.zeros_like(cloud)
        return grads


def _linear_flash(scene: SceneModel, t_n_img):
    c, g = scene.hard_linear, scene.gamma_exponent
    return (c * t_n_img ** (1.0 / g)) ** g


def render_composite(scene: SceneModel, view: CameraView, pseudo_pair: bool = True) -> CompositeRender:
    """Render every cloud at ``view`` and form the composite for its flash flag."""
    renders = {"T_N": render(scene.T_N, view)}
    use_flash = view.flash and not scene.flashless
    if scene.T_F is not None and (use_flash or pseudo_pair):
        renders["T_F"] = render(scene.T_F, view)
    renders["R"] = render(scene.R, view)
    renders["beta"] = render(scene.beta, view)

    t_n_img = renders["T_N"].color
    if scene.flashless:
        t_f_img = None
    elif scene.hard_linear is not None:
        t_f_img = _linear_flash(scene, t_n_img)
    else:
        t_f_img = renders["T_F"].color if "T_F" in renders else None

    t_img = t_f_img if use_flash else t_n_img
    depth_t = renders["T_F" if use_flash and "T_F" in renders else "T_N"].depth
    beta_map = smooth_clamp(renders["beta"].color[..., 0])
    comp, cache = compose(t_img, beta_map, renders["R"].color, scene.gamma_exponent)
    pair = (t_f_img, t_n_img) if pseudo_pair and t_f_img is not None else None
    return CompositeRender(comp, t_img, beta_map, renders["R"].color, depth_t,
                           renders["R"].depth, pair, view.flash, scene, renders, cache)


def render_pseudo_pair(scene: SceneModel, view: CameraView):
    """(flash transmission, no-flash transmission) images at the same pose."""
    if scene.flashless:
        raise ValueError("a flashless scene has no flash transmission")
    t_n = render(scene.T_N, view).color
    if scene.hard_linear is not None:
        return _linear_flash(scene, t_n), t_n
    return render(scene.T_F, view).color, t_n


def save_checkpoint(path, scene: SceneModel, iteration: int = 0) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    for name, cloud in scene.clouds().items():
        write_cloud_ply(out / f"{name}.ply", cloud)
    write_json(out / "manifest.json", {
        "gamma_exponent": scene.gamma_exponent,
        "hard_linear": scene.hard_linear,
        "flashless": scene.flashless,
        "sh_degree": scene.T_N.sh_degree,
        "iteration": int(iteration),
        "clouds": list(scene.clouds()),
    })


def load_checkpoint(path) -> tuple[SceneModel, dict]:
    p = Path(path)
    manifest = read_json(p / "manifest.json")
    clouds = {n: read_cloud_ply(p / f"{n}.ply") if n in manifest["clouds"] else None
              for n in CLOUD_NAMES}
    scene = SceneModel(**clouds, gamma_exponent=manifest["gamma_exponent"],
                       hard_linear=manifest["hard_linear"],
                       flashless=manifest.get("flashless", False))
    return scene, manifest
