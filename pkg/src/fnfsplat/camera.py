"""Pinhole cameras, rigid poses and first-order EWA covariance projection."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Z_NEAR = 0.01
DILATION = 0.3


class BehindCameraError(ValueError):
    pass


class CaptureSetError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float) -> "Intrinsics":
        f = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)


@dataclass
class CameraView:
    """One capture: intrinsics, world-to-camera pose, flash flag and raw-linear image.

    Pixel (row i, column j) samples the image plane at coordinates (u, v) = (j, i).
    """

    intrinsics: Intrinsics
    rotation: np.ndarray
    translation: np.ndarray
    flash: bool
    image: np.ndarray | None = None
    view_id: str = ""

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        if self.image is not None:
            self.image = np.asarray(self.image, dtype=np.float64)
            if self.image.shape[:2] != (self.intrinsics.height, self.intrinsics.width):
                raise ValueError(
                    f"image shape {self.image.shape[:2]} does not match intrinsics "
                    f"{(self.intrinsics.height, self.intrinsics.width)}"
                )

    @property
    def shape(self) -> tuple[int, int]:
        return self.intrinsics.height, self.intrinsics.width

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def world_to_cam(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.rotation.T + self.translation

    def cam_to_world(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.translation) @ self.rotation

    def with_image(self, image, flash: bool | None = None) -> "CameraView":
        return CameraView(self.intrinsics, self.rotation, self.translation,
                          self.flash if flash is None else flash, image, self.view_id)

    def to_record(self) -> dict:
        k = self.intrinsics
        return {
            "view_id": self.view_id, "flash": bool(self.flash),
            "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height,
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_record(cls, rec: dict, image=None) -> "CameraView":
        k = Intrinsics(float(rec["fx"]), float(rec["fy"]), float(rec["cx"]), float(rec["cy"]),
                       int(rec["width"]), int(rec["height"]))
        return cls(k, np.array(rec["rotation"], dtype=np.float64).reshape(3, 3),
                   np.array(rec["translation"], dtype=np.float64), bool(rec["flash"]),
                   image, str(rec["view_id"]))


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at eye looking at target.

    Camera axes follow the usual vision convention: +z forward, +x right, +y down.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    return r, -r @ eye


@dataclass
class CaptureSet:
    views: list[CameraView] = field(default_factory=list)

    def __post_init__(self):
        if not any(v.flash for v in self.views) or all(v.flash for v in self.views):
            raise CaptureSetError("a capture set needs at least one flash and one no-flash view")
        ids = [v.view_id for v in self.views]
        if len(set(ids)) != len(ids):
            raise CaptureSetError("view ids must be unique")

    @property
    def flash_views(self) -> list[CameraView]:
        return [v for v in self.views if v.flash]

    @property
    def noflash_views(self) -> list[CameraView]:
        return [v for v in self.views if not v.flash]

    def __len__(self):
        return len(self.views)


def project_point(view: CameraView, x_world, z_near: float = Z_NEAR):
    """Pixel coordinates and camera-space depth of a world point."""
    p = view.world_to_cam(x_world)
    if p[2] <= z_near:
        raise BehindCameraError(f"point depth {p[2]:.4g} is not beyond z_near={z_near}")
    k = view.intrinsics
    return np.array([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy]), float(p[2])


def projection_jacobian(intr: Intrinsics, t_cam: np.ndarray) -> np.ndarray:
    """d(pixel)/d(camera-space point) at t_cam; shape (..., 2, 3)."""
    t = np.asarray(t_cam, dtype=np.float64)
    x, y, z = t[..., 0], t[..., 1], t[..., 2]
    zero = np.zeros_like(z)
    j = np.stack([
        intr.fx / z, zero, -intr.fx * x / (z * z),
        zero, intr.fy / z, -intr.fy * y / (z * z),
    ], axis=-1)
    return j.reshape(t.shape[:-1] + (2, 3))


def project_covariance(sigma, w, j, dilation: float = DILATION) -> np.ndarray:
    """Screen-space covariance J W Sigma W^T J^T plus a low-pass dilation."""
    t = np.asarray(j, dtype=np.float64) @ np.asarray(w, dtype=np.float64)
    out = t @ np.asarray(sigma, dtype=np.float64) @ np.swapaxes(t, -1, -2)
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return out + dilation * np.eye(2)


def save_poses(path, views: list[CameraView]) -> None:
    Path(path).write_text(json.dumps([v.to_record() for v in views], indent=2))


def load_poses(path) -> list[CameraView]:
    return [CameraView.from_record(r) for r in json.loads(Path(path).read_text())]
