import dataclasses

import numpy as np
import pytest

from fnfsplat.camera import CameraView, Intrinsics
from fnfsplat.evaluate import psnr
from fnfsplat.synth import (DatasetSpec, SynthConfigError, SyntheticScene, Texture, _sample_points,
                            build_scene, emit_dataset, layer_identity_error, paired_subtract,
                            read_dataset, render_oracle, write_dataset)

SMALL = dict(width=32, height=24, n_points=300)


@pytest.fixture(scope="module")
def small_ds():
    return emit_dataset(DatasetSpec(**SMALL))


def _const(value, channels=3):
    return Texture(np.full((4, 4, channels), value))


def _shift(view: CameraView, du: float) -> CameraView:
    k = view.intrinsics
    k2 = Intrinsics(k.fx, k.fy, k.cx + du, k.cy, k.width, k.height)
    return CameraView(k2, view.rotation, view.translation, view.flash, None, view.view_id)


def test_zero_beta_gives_pure_transmission(small_ds):
    scene = dataclasses.replace(small_ds.scene, glass=dataclasses.replace(
        small_ds.scene.glass, texture=_const(0.0, 1)))
    gt = render_oracle(scene, small_ds.capture.views[1], False)
    assert np.array_equal(gt.image, gt.T_N)


def test_mirror_limit(small_ds):
    s = small_ds.scene
    scene = dataclasses.replace(
        s, glass=dataclasses.replace(s.glass, texture=_const(1.0, 1)),
        transmitted=dataclasses.replace(s.transmitted, texture=_const(0.0)))
    gt = render_oracle(scene, small_ds.capture.views[1], False)
    assert np.array_equal(gt.image, gt.R)


@pytest.mark.parametrize("seed", range(10))
def test_paired_difference_is_scaled_transmission(seed):
    spec = DatasetSpec(seed=seed, alpha=0.5, **SMALL)
    scene = build_scene(spec)
    view = emit_dataset(spec, scene).capture.views[0]
    i_f = render_oracle(scene, view, True)
    i_n = render_oracle(scene, view, False)
    assert np.abs((i_f.image - i_n.image) - 0.5 * i_n.T_N).max() < 1e-7
    out = paired_subtract(i_f.image, i_n.image)
    assert psnr(out, 0.5 * i_n.T_N) > 60


def test_two_pixel_shift_leaves_reflection_artifacts(small_ds):
    scene, view = small_ds.scene, small_ds.capture.views[1]
    i_n = render_oracle(scene, view, False)
    aligned = paired_subtract(render_oracle(scene, view, True).image, i_n.image)
    shifted = paired_subtract(render_oracle(scene, _shift(view, 2.0), True).image, i_n.image)
    refl = i_n.reflected_mask
    assert refl.any()
    target = scene.alpha * i_n.T_N
    assert np.sum((aligned - target)[refl] ** 2) < 1e-20
    assert np.sum((shifted - target)[refl] ** 2) > 0


def test_beta_f_breaks_identity_by_beta_f_r(small_ds):
    scene = dataclasses.replace(small_ds.scene, beta_f=0.1)
    view = small_ds.capture.views[0]
    i_f, i_n = render_oracle(scene, view, True), render_oracle(scene, view, False)
    resid = (i_f.image - i_n.image) - scene.alpha * i_n.T_N
    np.testing.assert_allclose(resid, 0.1 * i_n.R, atol=1e-12)
    assert layer_identity_error(i_f, scene.alpha, 0.1) < 1e-12


def test_subtract_examples(rng):
    a = rng.uniform(size=(4, 5, 3))
    assert not paired_subtract(a, a).any()
    with pytest.raises(ValueError):
        paired_subtract(a, a[:3])


def test_emitted_capture_layout(small_ds):
    ds = small_ds
    assert len(ds.capture.flash_views) == 6 and len(ds.capture.noflash_views) == 6
    # poses are ordered along the arc; flags alternate
    assert "".join("F" if v.flash else "N" for v in ds.capture.views) == "FN" * 6
    xs = [v.center[0] for v in ds.capture.views]
    assert xs == sorted(xs)
    assert len(ds.heldout) == 2 and all(not v.flash for v in ds.heldout)


def test_layer_identity_every_view(small_ds):
    for vid, gt in small_ds.truth.items():
        assert layer_identity_error(gt, small_ds.scene.alpha) < 1e-6, vid
        assert gt.reflected_mask.any() and (~gt.reflected_mask).any()


def test_layer_identity_with_falloff():
    ds = emit_dataset(DatasetSpec(falloff=True, **SMALL))
    for gt in ds.truth.values():
        assert layer_identity_error(gt, ds.scene.alpha) < 1e-6
    f = ds.truth["F00"].flash_gain
    assert f.min() < 0.95 and f.max() <= 1.0


def test_point_colors_follow_flash_gain(small_ds):
    s = small_ds.scene
    scene = dataclasses.replace(s, alpha=0.5,
                                transmitted=dataclasses.replace(s.transmitted,
                                                                texture=_const(0.4)))
    spec = DatasetSpec(**SMALL)
    views = small_ds.capture.flash_views
    c = np.mean([v.center for v in views], axis=0)
    fl, flab = _sample_points(scene, views, spec, np.random.default_rng(0), True, c)
    nf, nlab = _sample_points(scene, views, spec, np.random.default_rng(0), False, c)
    np.testing.assert_allclose(fl.colors[flab], 0.6, rtol=1e-12)
    np.testing.assert_allclose(nf.colors[nlab], 0.4, rtol=1e-12)
    assert flab.sum() > 0 and (~flab).sum() > 0


def test_point_labels_match_depths(small_ds):
    ds = small_ds
    np.testing.assert_array_equal(ds.true_labels(ds.flash_points.positions),
                                  ds.flash_point_labels)


def test_deterministic_emission():
    a = emit_dataset(DatasetSpec(**SMALL))
    b = emit_dataset(DatasetSpec(**SMALL))
    for v, w in zip(a.capture.views, b.capture.views):
        assert np.array_equal(v.image, w.image)
    assert np.array_equal(a.flash_points.positions, b.flash_points.positions)


def test_spec_validation():
    with pytest.raises(SynthConfigError):
        DatasetSpec(arc_deg=0)
    with pytest.raises(SynthConfigError):
        DatasetSpec(n_flash=0)
    with pytest.raises(SynthConfigError):
        DatasetSpec.from_dict({"widht": 3})
    spec = DatasetSpec(width=40, t_range=(0.1, 0.2))
    assert DatasetSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(SynthConfigError):
        Texture(np.full((2, 2), 1.5))


def test_scene_validation(small_ds):
    with pytest.raises(SynthConfigError):
        dataclasses.replace(small_ds.scene, alpha=0.0)
    with pytest.raises(SynthConfigError):
        SyntheticScene(small_ds.scene.transmitted, small_ds.scene.reflected,
                       small_ds.scene.glass, beta_f=-1)


def test_dataset_disk_roundtrip(small_ds, tmp_path):
    write_dataset(small_ds, tmp_path)
    for name in ("poses.json", "manifest.json", "points_flash.ply", "points_noflash.ply",
                 "images/F00.pfm", "previews/F00.png", "gt/H00_T_N.pfm", "gt/N00_mask.pfm"):
        assert (tmp_path / name).exists(), name
    back = read_dataset(tmp_path)
    assert [v.view_id for v in back.capture.views] == [v.view_id for v in small_ds.capture.views]
    for v in small_ds.capture.views:
        w = next(x for x in back.capture.views if x.view_id == v.view_id)
        np.testing.assert_allclose(w.image, v.image, rtol=1e-6)  # stored as float32
        np.testing.assert_array_equal(w.rotation, v.rotation)
        np.testing.assert_array_equal(back.truth[v.view_id].mask, small_ds.truth[v.view_id].mask)
    np.testing.assert_allclose(back.flash_points.positions, small_ds.flash_points.positions)
    np.testing.assert_array_equal(back.flash_point_labels, small_ds.flash_point_labels)
