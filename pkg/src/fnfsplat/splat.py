"""Gaussian primitives: parameter layout, activations, covariance and SH evaluation.

A cloud is stored structure-of-arrays. Every per-Gaussian quantity lives in
one numpy array whose first axis indexes the Gaussian:

    means          (N, 3)   world-space centers
    quats          (N, 4)   rotation quaternions (w, x, y, z), kept unit norm
    log_scales     (N, 3)   log of the per-axis standard deviations
    opacity_logits (N,)     pre-sigmoid opacity
    sh             (N, K, C) real SH coefficients, K = (degree + 1) ** 2
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199

PARAM_NAMES = ("means", "quats", "log_scales", "opacity_logits", "sh")


class InvalidParameterError(ValueError):
    pass


class DegenerateCovarianceError(ValueError):
    pass


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class SHCoeffs:
    """Real spherical-harmonic coefficients of one Gaussian, shape (K, C)."""

    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.degree not in (0, 1):
            raise InvalidParameterError(f"SH degree must be 0 or 1, got {self.degree}")
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != (self.degree + 1) ** 2:
            raise InvalidParameterError(
                f"expected {(self.degree + 1) ** 2} coefficient rows, got shape {self.coeffs.shape}"
            )

    @property
    def channels(self) -> int:
        return self.coeffs.shape[1]


@dataclass
class Gaussian3D:
    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    sh: SHCoeffs

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_params(self.rotation, self.log_scale)


@dataclass
class GaussianCloud:
    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    sh_degree: int = 0
    channels: int = field(init=False)

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.quats = np.ascontiguousarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64)
        if self.sh_degree not in (0, 1):
            raise InvalidParameterError(f"SH degree must be 0 or 1, got {self.sh_degree}")
        k = (self.sh_degree + 1) ** 2
        if self.sh.ndim != 3 or self.sh.shape[:2] != (n, k):
            raise InvalidParameterError(
                f"sh must have shape ({n}, {k}, C), got {self.sh.shape}"
            )
        self.channels = self.sh.shape[2]

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            position=self.means[i].copy(),
            rotation=self.quats[i].copy(),
            log_scale=self.log_scales[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            sh=SHCoeffs(self.sh_degree, self.sh[i].copy()),
        )

    @classmethod
    def from_gaussians(cls, gaussians: list[Gaussian3D]) -> "GaussianCloud":
        if not gaussians:
            raise InvalidParameterError("cannot build a cloud from an empty list")
        degrees = {g.sh.degree for g in gaussians}
        chans = {g.sh.channels for g in gaussians}
        if len(degrees) != 1 or len(chans) != 1:
            raise InvalidParameterError("mixed SH degree or channel count in one cloud")
        return cls(
            means=np.stack([g.position for g in gaussians]),
            quats=np.stack([g.rotation for g in gaussians]),
            log_scales=np.stack([g.log_scale for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            sh=np.stack([g.sh.coeffs for g in gaussians]),
            sh_degree=degrees.pop(),
        )

    @classmethod
    def empty(cls, channels: int, sh_degree: int = 0) -> "GaussianCloud":
        k = (sh_degree + 1) ** 2
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
                   np.zeros((0, k, channels)), sh_degree)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(**{k: v.copy() for k, v in self.params().items()},
                             sh_degree=self.sh_degree)

    def select(self, idx) -> "GaussianCloud":
        return GaussianCloud(**{k: v[idx].copy() for k, v in self.params().items()},
                             sh_degree=self.sh_degree)

    def concat(self, other: "GaussianCloud") -> "GaussianCloud":
        if other.sh_degree != self.sh_degree or other.channels != self.channels:
            raise InvalidParameterError("cannot concatenate clouds of different layout")
        return GaussianCloud(
            **{k: np.concatenate([v, getattr(other, k)]) for k, v in self.params().items()},
            sh_degree=self.sh_degree,
        )

    def normalize_quats(self) -> None:
        self.quats /= np.linalg.norm(self.quats, axis=1, keepdims=True)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params().values())


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for quaternions (w, x, y, z); accepts (4,) or (N, 4)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return r.reshape(q.shape[:-1] + (3, 3))


def covariance_from_params(q, log_scale) -> np.ndarray:
    """Sigma = R diag(exp(s))^2 R^T for a unit quaternion q and log-scales s."""
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(log_scale, dtype=np.float64)
    if not (np.isfinite(q).all() and np.isfinite(s).all()):
        raise InvalidParameterError("non-finite rotation or scale")
    if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > 1e-6):
        raise InvalidParameterError("quaternion is not unit norm")
    m = quat_to_rotmat(q) * np.exp(s)[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def eval_gaussian(mu, sigma, x):
    """Normalized trivariate normal density at x; x may be (3,) or a batch (..., 3)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    d = np.asarray(x, dtype=np.float64) - mu
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError("covariance is not positive definite") from exc
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    if not np.isfinite(logdet):
        raise DegenerateCovarianceError("covariance is singular")
    y = solve_triangular(chol, d.reshape(-1, 3).T, lower=True)
    dens = np.exp(-1.5 * math.log(2 * math.pi) - 0.5 * logdet - 0.5 * np.sum(y * y, axis=0))
    return float(dens[0]) if d.ndim == 1 else dens.reshape(d.shape[:-1])


def sh_basis(degree: int, dirs: np.ndarray) -> np.ndarray:
    """Real SH basis values, shape (..., K) for unit directions (..., 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    shape = dirs.shape[:-1]
    if degree == 0:
        return np.full(shape + (1,), SH_C0)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    return np.stack([np.full(shape, SH_C0), -SH_C1 * y, SH_C1 * z, -SH_C1 * x], axis=-1)


def eval_sh(sh: SHCoeffs, direction) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    if not np.isfinite(d).all() or not np.isfinite(sh.coeffs).all():
        raise InvalidParameterError("non-finite SH input")
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise InvalidParameterError("direction must be unit length")
    return sh_basis(sh.degree, d) @ sh.coeffs


def rgb_to_dc(color) -> np.ndarray:
    """DC coefficient that makes a degree-0 Gaussian render the given color."""
    return np.asarray(color, dtype=np.float64) / SH_C0


def dc_to_rgb(dc) -> np.ndarray:
    return np.asarray(dc, dtype=np.float64) * SH_C0
