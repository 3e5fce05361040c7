import numpy as np
import pytest

from conftest import random_cloud, small_view
from fnfsplat.camera import CameraView, Intrinsics
from fnfsplat.raster import ALPHA_MAX, GradientShapeError, render, render_backward
from fnfsplat.splat import SH_C0, GaussianCloud, logit


def _view(size=16, image=None):
    return CameraView(Intrinsics(20.0, 20.0, size / 2, size / 2, size, size), np.eye(3),
                      np.zeros(3), False, image, "v")


def _blobs(means, opacities, colors, scale=0.05):
    n = len(means)
    colors = np.asarray(colors, dtype=float)
    sh = np.zeros((n, 4, colors.shape[1]))
    sh[:, 0] = colors / SH_C0
    return GaussianCloud(np.asarray(means, dtype=float), np.tile([1.0, 0, 0, 0], (n, 1)),
                         np.full((n, 3), np.log(scale)), logit(np.asarray(opacities, float)),
                         sh, 1)


def _fd_check(cloud, view, d_color, d_depth, h=1e-4):
    grads = render_backward(render(cloud, view).backward_ctx, d_color, d_depth)

    def loss():
        rt = render(cloud, view)
        return np.sum(rt.color * d_color) + np.sum(rt.depth * d_depth)

    bad = total = 0
    for name, arr in cloud.params().items():
        g = getattr(grads, name)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = loss()
            arr[idx] = old - h
            lm = loss()
            arr[idx] = old
            fd = (lp - lm) / (2 * h)
            total += 1
            bad += abs(fd - g[idx]) > max(1e-3 * abs(fd), 1e-6)
    return bad, total


def test_single_opaque_gaussian_at_mean():
    rt = render(_blobs([[0, 0, 2.0]], [0.999], [[0.2, 0.4, 0.6]]), _view())
    np.testing.assert_allclose(rt.color[8, 8], 0.999 * np.array([0.2, 0.4, 0.6]), rtol=1e-12)
    assert rt.alpha[8, 8] == pytest.approx(0.999, rel=1e-12)
    assert rt.depth[8, 8] == pytest.approx(2.0, rel=1e-12)


def test_two_term_compositing():
    c1, c2 = np.array([1.0, 0, 0]), np.array([0, 0, 1.0])
    rt = render(_blobs([[0, 0, 2.0], [0, 0, 3.0]], [0.5, 0.999], [c1, c2]), _view())
    np.testing.assert_allclose(rt.color[8, 8], 0.5 * c1 + 0.5 * 0.999 * c2, rtol=1e-12)
    assert rt.depth[8, 8] == pytest.approx((0.5 * 2 + 0.5 * 0.999 * 3) / (1 - 0.5 * 0.001))


def test_empty_region_is_zero():
    rt = render(_blobs([[0, 0, 2.0]], [0.9], [[1, 1, 1]], scale=0.01), _view())
    assert rt.alpha[0, 0] == 0 and rt.depth[0, 0] == 0 and np.all(rt.color[0, 0] == 0)


def test_all_culled_returns_zero():
    rt = render(_blobs([[0, 0, -1.0], [0, 0, 0.005]], [0.9, 0.9], [[1, 1, 1]] * 2), _view())
    assert not rt.color.any() and not rt.alpha.any() and not rt.depth.any()


def test_alpha_clip():
    rt = render(_blobs([[0, 0, 2.0]] * 3, [0.9999] * 3, [[1, 1, 1]] * 3, scale=0.5), _view())
    assert rt.alpha.max() <= 1 + 1e-6
    assert rt.alpha[8, 8] == pytest.approx(1 - (1 - ALPHA_MAX) ** 3)


def test_render_invariants(rng):
    rt = render(random_cloud(rng, 20), small_view())
    assert np.all((rt.alpha >= 0) & (rt.alpha <= 1 + 1e-6))
    assert np.all(rt.color >= 0)
    assert np.all(rt.depth[rt.alpha > 0] >= 0) and np.all(rt.depth[rt.alpha == 0] == 0)


def test_monotone_occlusion(rng):
    view = _view()
    back1 = random_cloud(rng, 8, depth=(3.0, 4.0), spread=0.3)
    back2 = random_cloud(rng, 8, depth=(3.0, 4.0), spread=0.3)
    wall = _blobs([[0, 0, 1.0]], [0.999], [[0.3, 0.3, 0.3]], scale=1.0)
    wall.opacity_logits[:] = 50.0  # clip to 0.999 at every covered pixel
    a = render(wall.concat(back1), view).color[8, 8]
    b = render(wall.concat(back2), view).color[8, 8]
    np.testing.assert_allclose(a, b, atol=2e-3)  # residual transmittance 0.001


def test_deterministic_and_tiled_matches_untiled(rng):
    cloud = random_cloud(rng, 20)
    view = small_view(size=40)
    a, b = render(cloud, view), render(cloud, view)
    c = render(cloud, view, tiled=False)
    for x, y in ((a, b), (a, c)):
        assert np.array_equal(x.color, y.color) and np.array_equal(x.depth, y.depth)
    d = rng.normal(size=a.color.shape)
    ga = render_backward(a.backward_ctx, d)
    gb = render_backward(b.backward_ctx, d)
    gc = render_backward(c.backward_ctx, d)
    for name, v in ga.params().items():
        assert np.array_equal(v, gb.params()[name])
        # tiles visit pixels in another order, so per-Gaussian sums differ by rounding
        np.testing.assert_allclose(v, gc.params()[name], rtol=1e-10, atol=1e-14)


def test_zero_upstream_gives_zero_gradients(rng):
    rt = render(random_cloud(rng, 10), small_view())
    g = render_backward(rt.backward_ctx, np.zeros_like(rt.color))
    assert all(not v.any() for v in g.params().values()) and g.is_finite()


def test_backward_shape_error(rng):
    rt = render(random_cloud(rng, 5), small_view())
    with pytest.raises(GradientShapeError):
        render_backward(rt.backward_ctx, np.zeros((3, 3, 3)))
    with pytest.raises(GradientShapeError):
        render_backward(rt.backward_ctx, np.zeros_like(rt.color), np.zeros((2, 2)))


def test_dc_gradient_at_mean():
    cloud = _blobs([[0, 0, 2.0]], [0.6], [[0.5, 0.5, 0.5]])
    view = _view()
    rt = render(cloud, view)
    d = np.zeros_like(rt.color)
    d[8, 8, 0] = 1.0
    g = render_backward(rt.backward_ctx, d)
    assert g.sh[0, 0, 0] == pytest.approx(0.6 * SH_C0, rel=1e-12)
    old = cloud.sh[0, 0, 0]
    cloud.sh[0, 0, 0] = old + 1e-4
    lp = render(cloud, view).color[8, 8, 0]
    cloud.sh[0, 0, 0] = old - 1e-4
    lm = render(cloud, view).color[8, 8, 0]
    assert (lp - lm) / 2e-4 == pytest.approx(g.sh[0, 0, 0], rel=1e-3)


def test_random_cloud_matches_finite_differences(rng):
    cloud = random_cloud(rng, 10)
    view = small_view()
    d_color = rng.normal(size=(16, 16, 3))
    d_depth = rng.normal(size=(16, 16)) * 0.1
    bad, total = _fd_check(cloud, view, d_color, d_depth)
    assert bad <= 0.01 * total, f"{bad}/{total} parameters off"
