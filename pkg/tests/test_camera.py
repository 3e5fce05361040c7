import json

import numpy as np
import pytest

from fnfsplat.camera import (BehindCameraError, CameraView, CaptureSet, CaptureSetError,
                             Intrinsics, load_poses, look_at, project_covariance, project_point,
                             projection_jacobian, save_poses)


def _view(rot=np.eye(3), t=np.zeros(3), flash=False, vid="a"):
    return CameraView(Intrinsics(100, 100, 50, 40, 100, 80), rot, t, flash, None, vid)


def test_optical_axis():
    px, z = project_point(_view(), [0, 0, 2])
    np.testing.assert_allclose(px, [50, 40])
    assert z == 2


def test_pinhole_hand_value():
    px, _ = project_point(_view(), [1, 0, 1])
    assert px[0] == pytest.approx(150)


def test_depth_doubling_halves_offset():
    p1, _ = project_point(_view(), [0.3, -0.2, 1.5])
    p2, _ = project_point(_view(), [0.6, -0.4, 3.0])
    np.testing.assert_allclose(p2, p1)  # same ray
    p3, _ = project_point(_view(), [0.3, -0.2, 3.0])
    np.testing.assert_allclose(p3 - [50, 40], 0.5 * (p1 - [50, 40]), rtol=1e-15)


def test_behind_camera():
    with pytest.raises(BehindCameraError):
        project_point(_view(), [0, 0, 0.005])


def test_world_cam_roundtrip(rng):
    r, t = look_at([0.3, -0.2, -1.0], [0.1, 0.0, 2.0])
    v = _view(r, t)
    x = rng.normal(size=(20, 3))
    np.testing.assert_allclose(v.cam_to_world(v.world_to_cam(x)), x, atol=1e-9)
    np.testing.assert_allclose(v.world_to_cam(v.center), 0, atol=1e-12)


def test_look_at_forward_is_identity():
    r, t = look_at([0, 0, 0], [0, 0, 1])
    np.testing.assert_allclose(r, np.eye(3), atol=1e-15)


def test_zero_covariance_gives_dilation():
    out = project_covariance(np.zeros((3, 3)), np.eye(3), projection_jacobian(_view().intrinsics,
                                                                              np.array([0, 0, 2.])))
    np.testing.assert_allclose(out, 0.3 * np.eye(2))


def test_covariance_hand_value():
    f, z = 100.0, 2.0
    j = np.array([[f / z, 0, 0], [0, f / z, 0]])
    out = project_covariance(np.eye(3), np.eye(3), j)
    np.testing.assert_allclose(out, np.diag([(f / z) ** 2 + 0.3] * 2))


def test_projected_covariance_psd_symmetric(rng):
    k = _view().intrinsics
    for _ in range(50):
        a = rng.normal(size=(3, 3))
        sig = a @ a.T
        r, _ = look_at(rng.normal(size=3) * 0.2, [0, 0, 3])
        t = np.r_[rng.normal(size=2) * 0.3, rng.uniform(1, 4)]
        out = project_covariance(sig, r, projection_jacobian(k, t))
        np.testing.assert_allclose(out, out.T, atol=1e-12)
        assert np.trace(out) > 0 and np.linalg.det(out) >= 0
        assert np.linalg.eigvalsh(out).min() >= 0.3 - 1e-9


def test_jacobian_matches_finite_differences(rng):
    k = _view().intrinsics
    for _ in range(20):
        p = np.r_[rng.normal(size=2) * 0.5, rng.uniform(1, 3)]
        j = projection_jacobian(k, p)
        fd = np.zeros((2, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1e-6
            fd[:, i] = (project_point(_view(), p + e)[0] - project_point(_view(), p - e)[0]) / 2e-6
        np.testing.assert_allclose(j, fd, rtol=1e-4, atol=1e-6)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(-1, 1, 5, 5, 10, 10)
    with pytest.raises(ValueError):
        Intrinsics(1, 1, 15, 5, 10, 10)


def test_view_validation():
    with pytest.raises(ValueError):
        _view(rot=np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        CameraView(Intrinsics(100, 100, 50, 40, 100, 80), np.eye(3), np.zeros(3), True,
                   np.zeros((10, 10, 3)))


def test_capture_set_rules():
    with pytest.raises(CaptureSetError):
        CaptureSet([_view(flash=True, vid="a"), _view(flash=True, vid="b")])
    with pytest.raises(CaptureSetError):
        CaptureSet([_view(flash=True, vid="a"), _view(flash=False, vid="a")])
    cs = CaptureSet([_view(flash=True, vid="a"), _view(flash=False, vid="b")])
    assert len(cs.flash_views) == 1 and len(cs.noflash_views) == 1


def test_pose_json_roundtrip(tmp_path):
    r, t = look_at([0.3, -0.2, -1.0], [0.1, 0.0, 2.0])
    views = [_view(r, t, True, "F0"), _view(flash=False, vid="N0")]
    save_poses(tmp_path / "poses.json", views)
    rec = json.loads((tmp_path / "poses.json").read_text())
    assert set(rec[0]) == {"view_id", "flash", "fx", "fy", "cx", "cy", "width", "height",
                           "rotation", "translation"}
    back = load_poses(tmp_path / "poses.json")
    for a, b in zip(views, back):
        np.testing.assert_array_equal(a.rotation, b.rotation)
        np.testing.assert_array_equal(a.translation, b.translation)
        assert a.flash == b.flash and a.view_id == b.view_id and a.intrinsics == b.intrinsics
