"""Reflection removal from unpaired flash/no-flash captures with 3D Gaussian splatting.

Four Gaussian clouds (flash transmission, no-flash transmission, reflection and
a reflective-fraction map) are fitted to a capture set in which no pose has
both a flash and a no-flash image. A correlation loss ties the two
transmission renders together at every pose.
"""
from .camera import CameraView, CaptureSet, Intrinsics, look_at
from .composite import SceneModel, load_checkpoint, render_composite, save_checkpoint
from .evaluate import EvalReport, evaluate, psnr
from .flashinit import align_clouds, classify_points, init_scene
from .losses import LossReport, LossWeights, total_loss
from .optim import TrainConfig, schedule_views, train, train_step
from .raster import render, render_backward
from .splat import GaussianCloud
from .synth import DatasetSpec, emit_dataset, paired_subtract, render_oracle

__version__ = "0.1.0"

__all__ = [
    "CameraView", "CaptureSet", "Intrinsics", "look_at", "SceneModel", "load_checkpoint",
    "render_composite", "save_checkpoint", "EvalReport", "evaluate", "psnr", "align_clouds",
    "classify_points", "init_scene", "LossReport", "LossWeights", "total_loss", "TrainConfig",
    "schedule_views", "train", "train_step", "render", "render_backward", "GaussianCloud",
    "DatasetSpec", "emit_dataset", "paired_subtract", "render_oracle",
]
