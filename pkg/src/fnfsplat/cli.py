"""Command-line entry point: synth, fit, render, subtract and eval subcommands.

Exit codes: 0 success, 2 usage error, 3 data error (missing or malformed
input), 4 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .camera import load_poses
from .composite import load_checkpoint, render_composite, save_checkpoint
from .evaluate import evaluate, render_layers
from .flashinit import (AlignmentError, InitConfig, LabeledPoints, SfMPoints, align_clouds,
                        classify_points, init_scene, random_scene)
from .io import DataFormatError, read_json, read_pfm, write_json, write_pfm, write_png_preview
from .optim import TrainConfig, train
from .synth import DatasetSpec, emit_dataset, paired_subtract, read_dataset, write_dataset

log = logging.getLogger("fnfsplat")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
LAYERS = ("composite", "T", "R", "beta", "depthT", "depthR")


class NumericFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _read_config(path) -> dict:
    if path is None:
        return {}
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise DataFormatError(f"{path}: run config must be a JSON object")
    return cfg


def cmd_synth(args) -> int:
    spec = DatasetSpec.from_dict(_read_config(args.spec))
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    ds = emit_dataset(spec)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds.capture)} training and {len(ds.heldout)} held-out views to {args.out}")
    return EXIT_OK


def _labels_for(ds, shared_frame: bool, init_cfg: dict):
    fpts, npts = ds.flash_points, ds.noflash_points
    if not shared_frame:
        try:
            sim = align_clouds(ds.flash_centers, ds.noflash_centers)
            fpts = fpts.transformed(sim)
        except AlignmentError as exc:
            warnings.warn(f"{exc}; using the identity", stacklevel=2)
    return classify_points(fpts, npts, init_cfg.get("radius"), init_cfg.get("ratio", 1.25))


def fit_scene(data_dir, cfg: dict, flashless=False, hard_linear=None, no_init=False, seed=None):
    """Initialize and train a scene on a dataset directory; returns (scene, train log, config)."""
    ds = read_dataset(data_dir)
    manifest = read_json(Path(data_dir) / "manifest.json")
    train_cfg = TrainConfig.from_dict(dict(cfg.get("train", {})))
    init_keys = {k: v for k, v in cfg.get("init", {}).items() if k not in ("radius", "ratio")}
    init_cfg = InitConfig(**init_keys)
    if seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=seed)
        init_cfg = dataclasses.replace(init_cfg, seed=seed)
    init_cfg = dataclasses.replace(init_cfg, hard_linear=hard_linear, flashless=flashless)

    if flashless:
        views = ds.noflash_capture()
        train_cfg = dataclasses.replace(
            train_cfg, weights=dataclasses.replace(train_cfg.weights, linearity=0.0))
    else:
        views = ds.capture

    if no_init:
        pts = np.concatenate([ds.flash_points.positions, ds.noflash_points.positions])
        scene = random_scene(pts.min(0), pts.max(0), init_cfg.max_points, init_cfg)
    elif flashless:
        merged = SfMPoints(np.concatenate([ds.flash_points.positions, ds.noflash_points.positions]),
                           np.concatenate([ds.flash_points.colors, ds.noflash_points.colors]),
                           "no-flash")
        # without flash cues nothing separates the layers, so every point seeds every cloud
        labels = LabeledPoints(merged.positions, merged.colors,
                               np.full_like(merged.colors, np.nan),
                               np.ones(len(merged), bool))
        scene = init_scene(labels, init_cfg)
    else:
        labels = _labels_for(ds, bool(manifest.get("shared_frame", False)), cfg.get("init", {}))
        scene = init_scene(labels, init_cfg)

    scene, tlog = train(scene, views, train_cfg)
    if not scene.is_valid():
        raise NumericFailure("training produced a non-finite or invalid scene")
    resolved = {"train": train_cfg.to_dict(), "init": dataclasses.asdict(init_cfg),
                "flashless": flashless, "hard_linear": hard_linear, "no_init": no_init}
    return scene, tlog, resolved


def cmd_fit(args) -> int:
    cfg = _read_config(args.config)
    scene, tlog, resolved = fit_scene(args.data, cfg, args.flashless, args.hard_linear,
                                      args.no_init, args.seed)
    out = Path(args.out)
    save_checkpoint(out, scene, len(tlog.rows))
    tlog.write_csv(out / "train_log.csv")
    write_json(out / "run_config.json", resolved)
    print(f"fitted {len(tlog.rows)} iterations; checkpoint in {out}")
    if tlog.incidents:
        print(f"{len(tlog.incidents)} skipped-step incidents", file=sys.stderr)
    return EXIT_OK


def cmd_render(args) -> int:
    scene, _ = load_checkpoint(args.ckpt)
    views = load_poses(args.poses)
    flash = args.flash == "on"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, view in enumerate(views):
        view = dataclasses.replace(view, flash=flash)
        name = view.view_id or f"view{i:03d}"
        if args.layer == "composite":
            cr = render_composite(scene, view, pseudo_pair=False)
            img = np.clip(cr.composite, 0.0, 1.0) ** (1.0 / scene.gamma_exponent)
        else:
            layers = render_layers(scene, view, flash=flash)
            img = layers[{"T": "T", "R": "R", "beta": "beta", "depthT": "depth_T",
                          "depthR": "depth_R"}[args.layer]]
        if not np.isfinite(img).all():
            raise NumericFailure(f"non-finite {args.layer} render at {name}")
        write_pfm(out / f"{name}_{args.layer}.pfm", img)
        if args.layer in ("composite", "T", "R", "beta"):
            write_png_preview(out / f"{name}_{args.layer}.png", img)
    print(f"rendered {len(views)} views to {out}")
    return EXIT_OK


def cmd_subtract(args) -> int:
    diff = paired_subtract(read_pfm(args.flash), read_pfm(args.noflash))
    write_pfm(args.out, diff)
    return EXIT_OK


def cmd_eval(args) -> int:
    scene, _ = load_checkpoint(args.ckpt)
    report = evaluate(scene, read_dataset(args.data))
    if not report.is_finite():
        raise NumericFailure("evaluation produced non-finite metrics")
    write_json(args.out, report.to_dict())
    m = report.means
    print(f"T PSNR held-in {m['psnr_T_heldin']:.2f} dB, held-out {m['psnr_T_heldout']:.2f} dB")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fnfsplat", description="Reflection removal from unpaired flash/no-flash "
                                              "captures with Gaussian splatting.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--spec", help="dataset spec JSON (defaults when omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", help="initialize and train a scene")
    f.add_argument("--data", required=True)
    f.add_argument("--config", help="run config JSON with optional 'train' and 'init' sections")
    f.add_argument("--out", required=True)
    f.add_argument("--flashless", action="store_true",
                   help="ignore flash cues: no-flash views only, three clouds, no linearity term")
    f.add_argument("--hard-linear", type=float, metavar="C",
                   help="tie the flash transmission to C times the no-flash one")
    f.add_argument("--no-init", action="store_true", help="seed clouds randomly")
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("render", help="render a checkpoint at given poses")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--poses", required=True)
    r.add_argument("--layer", choices=LAYERS, default="composite")
    r.add_argument("--flash", choices=("on", "off"), default="off")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    d = sub.add_parser("subtract", help="flash minus no-flash of a paired capture")
    d.add_argument("--flash", required=True)
    d.add_argument("--noflash", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_subtract)

    e = sub.add_parser("eval", help="score a checkpoint against ground truth")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"fnfsplat: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"fnfsplat: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"fnfsplat: missing input: {exc.filename or exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataFormatError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        print(f"fnfsplat: bad input: {exc}".splitlines()[0], file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
