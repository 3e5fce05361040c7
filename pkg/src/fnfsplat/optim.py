"""Adam training of the four-cloud scene over an unpaired flash/no-flash capture.

Each step renders one view, evaluates the weighted objective and updates every
cloud. Views alternate between the flash and no-flash pools. Clouds grow by
clone/split where the screen-space positional gradient stays large and shrink
where opacity collapses.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .camera import CameraView, CaptureSet
from .composite import SceneModel, save_checkpoint
from .losses import LossReport, LossWeights, total_loss
from .raster import ParamGradients
from .splat import PARAM_NAMES, GaussianCloud, quat_to_rotmat

log = logging.getLogger(__name__)

LOG_FIELDS = ("iteration", "view_id", "l1", "dssim", "linearity", "depth", "total")


@dataclass
class TrainConfig:
    iterations: int = 2000
    lr_position: float = 1.6e-4     # multiplied by the scene extent
    lr_position_final: float = 1.6e-6
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    densify_interval: int = 100
    densify_from: int = 200
    densify_until: int = 1500
    densify_grad_threshold: float = 5e-6   # mean |dL/d mean2d|, loss per pixel units
    prune_opacity_threshold: float = 0.005
    percent_dense: float = 0.01
    max_gaussians: int = 5000
    checkpoint_interval: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.densify_interval <= 0:
            raise ValueError("densify_interval must be positive")
        for k in ("lr_position", "lr_rotation", "lr_scale", "lr_opacity", "lr_sh"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def group_lrs(self, extent: float = 1.0) -> dict[str, float]:
        return {"means": self.lr_position * extent, "quats": self.lr_rotation,
                "log_scales": self.lr_scale, "opacity_logits": self.lr_opacity,
                "sh": self.lr_sh}


class AdamState:
    """Per-cloud, per-parameter first/second moments with one shared step counter."""

    def __init__(self, scene: SceneModel, lrs: dict[str, float], beta1=0.9, beta2=0.999,
                 eps=1e-15):
        self.lrs = dict(lrs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.halved = False
        self.m: dict[str, dict[str, np.ndarray]] = {}
        self.v: dict[str, dict[str, np.ndarray]] = {}
        for name, cloud in scene.clouds().items():
            self.m[name] = {k: np.zeros_like(a) for k, a in cloud.params().items()}
            self.v[name] = {k: np.zeros_like(a) for k, a in cloud.params().items()}

    def step(self, scene: SceneModel, grads: dict[str, ParamGradients]) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, cloud in scene.clouds().items():
            params = cloud.params()
            for k in PARAM_NAMES:
                g = getattr(grads[name], k)
                m, v = self.m[name][k], self.v[name][k]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                params[k] -= (self.lrs[k] / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            if self.lrs["quats"] > 0:  # frozen rotations stay bit-identical
                cloud.normalize_quats()

    def halve(self) -> None:
        self.lrs = {k: 0.5 * v for k, v in self.lrs.items()}
        self.halved = True

    def remap(self, name: str, keep: np.ndarray, n_new: int) -> None:
        """Keep rows ``keep`` of one cloud's moments and append zero rows for n_new Gaussians."""
        for store in (self.m, self.v):
            for k, a in store[name].items():
                store[name][k] = np.concatenate([a[keep], np.zeros((n_new,) + a.shape[1:])])

    def congruent(self, scene: SceneModel) -> bool:
        return all(self.m[n][k].shape == a.shape and self.v[n][k].shape == a.shape
                   for n, c in scene.clouds().items() for k, a in c.params().items())


def train_step(scene: SceneModel, view: CameraView, weights: LossWeights, adam: AdamState,
               stats: "GradStats | None" = None) -> LossReport:
    """One objective evaluation and Adam update at ``view``.

    A non-finite loss or gradient skips the update; the first such incident
    halves the learning rates.
    """
    report, grads = total_loss(scene, view, weights, return_grad=True)
    ok = math.isfinite(report.total) and all(g.is_finite() for g in grads.values())
    if not ok:
        log.warning("non-finite loss at view %s; step skipped", view.view_id)
        if not adam.halved:
            adam.halve()
        return report
    adam.step(scene, grads)
    if stats is not None:
        stats.add(grads)
    return report


def schedule_views(capture, seed: int = 0) -> Iterator[CameraView]:
    """Endless epochs over the views, alternating flash and no-flash.

    Each pool is shuffled per epoch; the pools are interleaved starting with the
    larger one (flash on ties) and the surplus of the larger pool closes the
    epoch, so every view is visited exactly once per epoch.
    """
    views = list(capture.views if isinstance(capture, CaptureSet) else capture)
    if not views:
        raise ValueError("no views to schedule")
    flash = [v for v in views if v.flash]
    noflash = [v for v in views if not v.flash]
    rng = np.random.default_rng(seed)
    while True:
        fl = [flash[i] for i in rng.permutation(len(flash))]
        nf = [noflash[i] for i in rng.permutation(len(noflash))]
        first, second = (fl, nf) if len(fl) >= len(nf) else (nf, fl)
        for i in range(max(len(first), len(second))):
            if i < len(first):
                yield first[i]
            if i < len(second):
                yield second[i]


class GradStats:
    """Accumulated screen-space positional gradient norms per cloud."""

    def __init__(self, scene: SceneModel):
        self.sum = {n: np.zeros(len(c)) for n, c in scene.clouds().items()}
        self.count = {n: np.zeros(len(c)) for n, c in scene.clouds().items()}

    def add(self, grads: dict[str, ParamGradients]) -> None:
        for n in self.sum:
            norm = np.linalg.norm(grads[n].mean2d, axis=1)
            self.sum[n] += norm
            self.count[n] += norm > 0

    def mean(self, name: str) -> np.ndarray:
        c = self.count[name]
        return np.where(c > 0, self.sum[name] / np.maximum(c, 1), 0.0)

    def reset(self, scene: SceneModel) -> None:
        self.__init__(scene)


def _split(cloud: GaussianCloud, idx: np.ndarray, rng) -> GaussianCloud:
    """Two children per parent, sampled from the parent's density with scales shrunk by 1.6."""
    parents = cloud.select(idx)
    rot = quat_to_rotmat(parents.quats)
    sd = np.exp(parents.log_scales)
    kids = []
    for _ in range(2):
        off = np.einsum("nij,nj->ni", rot, rng.standard_normal((len(idx), 3)) * sd)
        kid = parents.copy()
        kid.means = parents.means + off
        kid.log_scales = parents.log_scales - math.log(1.6)
        kids.append(kid)
    return kids[0].concat(kids[1])


def densify_and_prune(scene: SceneModel, stats: GradStats, adam: AdamState, config: TrainConfig,
                      extent: float, rng) -> dict[str, dict[str, int]]:
    """Clone small / split large high-gradient Gaussians, then drop near-transparent ones.

    Growth is capped so no cloud exceeds ``config.max_gaussians``; candidates with
    the largest mean gradient win. Returns per-cloud counts of clones, splits and
    prunes.
    """
    report = {}
    for name, cloud in scene.clouds().items():
        n = len(cloud)
        g = stats.mean(name)
        cand = np.flatnonzero(g >= config.densify_grad_threshold)
        budget = max(config.max_gaussians - n, 0)
        large = cloud.scales.max(axis=1) > config.percent_dense * extent
        # a split adds one net Gaussian (parent replaced by two), a clone adds one
        if len(cand) > budget:
            order = np.lexsort((cand, -g[cand]))
            cand = np.sort(cand[order[:budget]])
        clone_idx = cand[~large[cand]]
        split_idx = cand[large[cand]]

        grown = cloud.select(clone_idx).concat(_split(cloud, split_idx, rng)) \
            if len(split_idx) else cloud.select(clone_idx)
        keep = np.ones(n, bool)
        keep[split_idx] = False
        new = cloud.select(np.flatnonzero(keep)).concat(grown)
        adam.remap(name, np.flatnonzero(keep), len(grown))

        alive = new.opacities >= config.prune_opacity_threshold
        if not alive.any():
            alive[np.argmax(new.opacities)] = True
        pruned = int((~alive).sum())
        if pruned:
            new = new.select(np.flatnonzero(alive))
            adam.remap(name, np.flatnonzero(alive), 0)
        setattr(scene, name, new)
        report[name] = {"cloned": int(len(clone_idx)), "split": int(len(split_idx)),
                        "pruned": pruned, "size": len(new)}
    stats.reset(scene)
    return report


def scene_extent(views: Sequence[CameraView]) -> float:
    """1.1 x the largest camera distance from the mean camera center (at least 1e-3)."""
    c = np.array([v.center for v in views])
    return max(1.1 * float(np.max(np.linalg.norm(c - c.mean(0), axis=1))), 1e-3)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    incidents: list[str] = field(default_factory=list)
    densify: list[dict] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=LOG_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def train(scene: SceneModel, capture, config: TrainConfig | None = None,
          checkpoint_dir=None) -> tuple[SceneModel, TrainLog]:
    """Optimize ``scene`` in place over ``capture`` (a CaptureSet or a list of views)."""
    cfg = config or TrainConfig()
    views = list(capture.views if isinstance(capture, CaptureSet) else capture)
    tlog = TrainLog()
    if cfg.iterations == 0:
        return scene, tlog
    extent = scene_extent(views)
    adam = AdamState(scene, cfg.group_lrs(extent))
    stats = GradStats(scene)
    rng = np.random.default_rng(cfg.seed)
    sched = schedule_views(views, cfg.seed)
    lr0 = adam.lrs["means"]
    lr1 = cfg.lr_position_final * extent

    for it in range(1, cfg.iterations + 1):
        # log-linear decay of the position rate, as in common splatting practice
        frac = (it - 1) / max(cfg.iterations - 1, 1)
        scale = 0.5 if adam.halved else 1.0
        adam.lrs["means"] = scale * math.exp((1 - frac) * math.log(lr0) + frac * math.log(lr1)) \
            if lr0 > 0 and lr1 > 0 else scale * lr0
        view = next(sched)
        halved_before = adam.halved
        rep = train_step(scene, view, cfg.weights, adam, stats)
        if adam.halved and not halved_before:
            tlog.incidents.append(f"iteration {it}: non-finite loss at {view.view_id}, "
                                  "learning rates halved")
        elif not math.isfinite(rep.total):
            tlog.incidents.append(f"iteration {it}: non-finite loss at {view.view_id}, skipped")
        tlog.rows.append({"iteration": it, "view_id": view.view_id, "l1": rep.l1,
                          "dssim": rep.dssim, "linearity": rep.linearity, "depth": rep.depth,
                          "total": rep.total})
        if cfg.densify_from <= it <= cfg.densify_until and it % cfg.densify_interval == 0:
            rep_d = densify_and_prune(scene, stats, adam, cfg, extent, rng)
            tlog.densify.append({"iteration": it, **rep_d})
            log.debug("densify at %d: %s", it, rep_d)
        if cfg.checkpoint_interval and checkpoint_dir and it % cfg.checkpoint_interval == 0:
            save_checkpoint(Path(checkpoint_dir) / f"iter_{it:06d}", scene, it)
        if it % 100 == 0:
            log.info("iteration %d  loss %.5f", it, rep.total)
    if tlog.incidents:
        log.warning("%d skipped-step incidents during training", len(tlog.incidents))
    return scene, tlog

