"""File formats: PFM float images, PLY point clouds and Gaussian clouds, PNG previews."""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from .splat import GaussianCloud

DISPLAY_GAMMA = 2.2


class DataFormatError(ValueError):
    pass


def write_pfm(path, image: np.ndarray) -> None:
    """Write a (H, W), (H, W, 1) or (H, W, 3) float image as little-endian PFM."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        header = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = "PF"
    else:
        raise DataFormatError(f"PFM supports gray or RGB images, got shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(np.flipud(img)).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").strip()
        if header not in ("PF", "Pf"):
            raise DataFormatError(f"{path}: not a PFM file")
        dims = f.readline().decode("ascii")
        m = re.match(r"^(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise DataFormatError(f"{path}: malformed PFM size line")
        w, h = int(m.group(1)), int(m.group(2))
        scale = float(f.readline().decode("ascii").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if header == "PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != w * h * ch:
        raise DataFormatError(f"{path}: expected {w * h * ch} floats, found {data.size}")
    img = data.reshape(h, w, ch) if ch == 3 else data.reshape(h, w)
    return np.flipud(img).astype(np.float32)


def write_png_preview(path, raw: np.ndarray) -> None:
    from PIL import Image

    img = np.clip(np.asarray(raw, dtype=np.float64), 0.0, 1.0) ** (1.0 / DISPLAY_GAMMA)
    u8 = np.round(img * 255).astype(np.uint8)
    if u8.ndim == 3 and u8.shape[2] == 1:
        u8 = u8[:, :, 0]
    Image.fromarray(u8).save(path)


def write_points_ply(path, positions, colors) -> None:
    """ASCII PLY with x, y, z and 8-bit display-gamma colors from raw-linear input."""
    pos = np.asarray(positions, dtype=np.float64)
    col = np.clip(np.asarray(colors, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(col ** (1.0 / DISPLAY_GAMMA) * 255).astype(np.uint8)
    rec = np.empty(len(pos), dtype=[("x", "f8"), ("y", "f8"), ("z", "f8"),
                                     ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec["x"], rec["y"], rec["z"] = pos.T
    rec["red"], rec["green"], rec["blue"] = u8.T
    PlyData([PlyElement.describe(rec, "vertex")], text=True).write(str(path))


def read_points_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Positions (N, 3) and raw-linear colors (N, 3) via inverse display gamma 2.2."""
    try:
        v = PlyData.read(str(path))["vertex"]
    except (KeyError, ValueError, PlyParseError) as exc:
        raise DataFormatError(f"{path}: cannot read point cloud ({exc})") from exc
    pos = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    u8 = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64)
    return pos, (u8 / 255.0) ** DISPLAY_GAMMA


def write_cloud_ply(path, cloud: GaussianCloud) -> None:
    """Binary little-endian PLY, float64 properties, so parameters round-trip exactly."""
    n = len(cloud)
    k = cloud.sh.shape[1]
    names = ["x", "y", "z"]
    names += [f"f_sh_{i}_{c}" for i in range(k) for c in range(cloud.channels)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    cols = np.concatenate([
        cloud.means, cloud.sh.reshape(n, -1), cloud.opacity_logits[:, None],
        cloud.log_scales, cloud.quats,
    ], axis=1)
    rec = np.empty(n, dtype=[(nm, "<f8") for nm in names])
    for i, nm in enumerate(names):
        rec[nm] = cols[:, i]
    el = PlyElement.describe(rec, "vertex", comments=[f"sh_degree {cloud.sh_degree}",
                                                      f"channels {cloud.channels}"])
    PlyData([el], byte_order="<").write(str(path))


def read_cloud_ply(path) -> GaussianCloud:
    try:
        ply = PlyData.read(str(path))
    except (ValueError, PlyParseError) as exc:
        raise DataFormatError(f"{path}: cannot read Gaussian cloud ({exc})") from exc
    v = ply["vertex"]
    meta = dict(c.split() for c in ply["vertex"].comments)
    degree, channels = int(meta["sh_degree"]), int(meta["channels"])
    k = (degree + 1) ** 2
    col = lambda nm: np.asarray(v[nm], dtype=np.float64)  # noqa: E731
    sh = np.stack([col(f"f_sh_{i}_{c}") for i in range(k) for c in range(channels)], axis=1)
    return GaussianCloud(
        means=np.stack([col("x"), col("y"), col("z")], axis=1),
        quats=np.stack([col(f"rot_{i}") for i in range(4)], axis=1),
        log_scales=np.stack([col(f"scale_{i}") for i in range(3)], axis=1),
        opacity_logits=col("opacity"),
        sh=sh.reshape(len(sh), k, channels),
        sh_degree=degree,
    )


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
