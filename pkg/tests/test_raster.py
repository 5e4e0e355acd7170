import math

import numpy as np
import pytest

from splatslam.errors import MismatchedSnapshot
from splatslam.geometry import PinholeCamera, Se3Pose, so3_exp_quat
from splatslam.mapping.gaussians import Gaussian3D, GaussianMap, covariances
from splatslam.raster import RasterConfig, project_gaussian, project_splats, render, render_backward, render_reference

from raster_helpers import gradient_check, random_scene


def naive_render(gmap, pose, cam, cfg=RasterConfig()):
    """Per-pixel loop over all Gaussians in depth order, written independently of the kernels."""
    proj = project_splats(gmap.means, gmap.quats, gmap.log_scales, pose, cam, cfg)
    order = sorted(np.flatnonzero(proj.visible), key=lambda i: (proj.depth[i], i))
    img = np.zeros((cam.height, cam.width, 3))
    for y in range(cam.height):
        for x in range(cam.width):
            T = 1.0
            for i in order:
                dx, dy = x - proj.mean2d[i, 0], y - proj.mean2d[i, 1]
                a, b, c = proj.conic[i]
                power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                if power > 0 or power < cfg.power_cutoff:
                    continue
                alpha = min(cfg.alpha_cap, gmap.opacities[i] * math.exp(power))
                img[y, x] += T * alpha * gmap.colors[i]
                T *= 1 - alpha
                if T < cfg.min_transmittance:
                    break
    return img


def test_project_on_axis(cam100):
    p = project_gaussian(Gaussian3D(np.array([0.0, 0.0, 1.0])), Se3Pose.identity(), cam100)
    np.testing.assert_allclose(p.mean2d, [50, 50])


def test_project_isotropic_covariance(cam100):
    sigma, z = 0.02, 2.0
    g = Gaussian3D(np.array([0.0, 0.0, z]), log_scale=np.full(3, np.log(sigma)))
    p = project_gaussian(g, Se3Pose.identity(), cam100)
    s = (100 * sigma / z) ** 2
    np.testing.assert_allclose(p.cov2d, np.diag([s, s]) + 0.3 * np.eye(2), atol=1e-6)


def test_project_matches_numerical_jacobian(cam100, rng):
    for _ in range(10):
        pose = Se3Pose(so3_exp_quat(rng.normal(0, 0.2, 3)), rng.normal(0, 0.2, 3))
        x_cam = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(1.5, 3)])
        mean = pose.apply(x_cam[None])[0]
        g = Gaussian3D(mean, rng.normal(size=4), rng.normal(-3, 0.3, 3))
        p = project_gaussian(g, pose, cam100)

        def proj(x):
            return np.array([100 * x[0] / x[2] + 50, 100 * x[1] / x[2] + 50])

        J = np.zeros((2, 3))
        for k in range(3):
            d = np.zeros(3)
            d[k] = 1e-6
            J[:, k] = (proj(x_cam + d) - proj(x_cam - d)) / 2e-6
        W = pose.R.T
        cov3 = covariances(g.rotation[None], g.log_scale[None])[0]
        expect = J @ W @ cov3 @ W.T @ J.T + 0.3 * np.eye(2)
        np.testing.assert_allclose(p.cov2d, expect, rtol=1e-5, atol=1e-5 * np.abs(expect).max())
        np.testing.assert_allclose(p.mean2d, proj(x_cam), atol=1e-9)


def test_project_culls_behind_camera(cam100):
    assert project_gaussian(Gaussian3D(np.array([0.0, 0.0, -1.0])), Se3Pose.identity(), cam100) is None
    assert project_gaussian(Gaussian3D(np.array([0.0, 0.0, 0.005])), Se3Pose.identity(), cam100) is None
    far_off = Gaussian3D(np.array([50.0, 0.0, 1.0]), log_scale=np.full(3, -5.0))
    assert project_gaussian(far_off, Se3Pose.identity(), cam100) is None


def test_render_empty_map(cam100):
    out = render(GaussianMap(), Se3Pose.identity(), cam100)
    assert not out.image.any()
    np.testing.assert_array_equal(out.final_transmittance, 1.0)


def test_render_single_splat():
    cam = PinholeCamera(50.0, 50.0, 10.0, 10.0, 21, 21)
    g = GaussianMap([[0.0, 0.0, 2.0]], None, np.full((1, 3), np.log(0.05)), [0.4], [[0.2, 0.6, 1.0]])
    out = render(g, Se3Pose.identity(), cam)
    alpha = g.opacities[0]
    np.testing.assert_allclose(out.image[10, 10], alpha * np.array([0.2, 0.6, 1.0]), atol=1e-12)
    assert out.final_transmittance[10, 10] == pytest.approx(1 - alpha)


def test_alpha_cap():
    cam = PinholeCamera(50.0, 50.0, 10.0, 10.0, 21, 21)
    g = GaussianMap([[0.0, 0.0, 2.0]], None, np.full((1, 3), np.log(0.05)), [20.0], [[1.0, 1.0, 1.0]])
    assert render(g, Se3Pose.identity(), cam).image[10, 10, 0] == pytest.approx(0.99)


def test_cap_gradient_modes():
    cam = PinholeCamera(50.0, 50.0, 10.0, 10.0, 21, 21)
    # A white splat, wide enough to be capped at every pixel, hides a black one. The loss wants it to fade.
    g = GaussianMap([[0.0, 0.0, 2.0], [0.0, 0.0, 3.0]], None, np.log([[5.0] * 3, [0.5] * 3]), [20.0, 0.0],
                    [[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    weights = np.ones((21, 21, 3))
    exact = render_backward(render(g, Se3Pose.identity(), cam), weights, g)
    st_cfg = RasterConfig(cap_gradient="straight_through")
    st = render_backward(render(g, Se3Pose.identity(), cam, st_cfg), weights, g)
    assert exact.opacity_logits[0] == 0.0
    np.testing.assert_array_equal(exact.means[0], 0.0)
    assert st.opacity_logits[0] > 0.0
    np.testing.assert_array_equal(st.colors, exact.colors)
    np.testing.assert_array_equal(st.opacity_logits[1], exact.opacity_logits[1])
    with pytest.raises(ValueError):
        RasterConfig(cap_gradient="clip")


@pytest.mark.parametrize("seed", range(3))
def test_render_matches_naive_loop(seed):
    rng = np.random.default_rng(seed)
    n = 50
    gmap = GaussianMap(np.c_[rng.uniform(-0.8, 0.8, (n, 2)), rng.uniform(1.5, 4, n)], rng.normal(size=(n, 4)),
                       np.log(rng.uniform(0.03, 0.3, (n, 3))), rng.normal(0, 1.5, n), rng.random((n, 3)))
    cam = PinholeCamera(30.0, 30.0, 15.5, 15.5, 32, 32)
    pose = Se3Pose.exp(rng.normal(0, 0.05, 6))
    out = render(gmap, pose, cam)
    np.testing.assert_allclose(out.image, naive_render(gmap, pose, cam), rtol=0, atol=1e-12)
    ref, trans = render_reference(gmap, pose, cam)
    np.testing.assert_array_equal(ref, out.image)
    np.testing.assert_array_equal(trans, out.final_transmittance)


@pytest.mark.parametrize("tile", [1, 5, 16, 64])
def test_tile_size_does_not_change_image(tile):
    gmap, cam, pose, _ = random_scene(7, n=40)
    base = render(gmap, pose, cam).image
    np.testing.assert_array_equal(render(gmap, pose, cam, RasterConfig(tile=tile)).image, base)


def test_backward_zero_gradient():
    gmap, cam, pose, _ = random_scene(0)
    g = render_backward(render(gmap, pose, cam), np.zeros((32, 32, 3)), gmap)
    for name in ("means", "quats", "log_scales", "opacity_logits", "colors", "mean2d", "abs_mean2d"):
        assert not getattr(g, name).any()


def test_gradient_check_single_seed():
    gmap, cam, pose, rng = random_scene(11, n=8)
    assert gradient_check(gmap, cam, pose, rng.normal(size=(32, 32, 3))) == []


def test_homodirectional_vs_signed_accumulator():
    cam = PinholeCamera(40.0, 40.0, 15.5, 15.5, 32, 32)
    g = GaussianMap([[0.0, 0.0, 2.0]], None, np.full((1, 3), np.log(0.2)), [0.0], [[0.5, 0.5, 0.5]])
    grads = render_backward(render(g, Se3Pose.identity(), cam), np.ones((32, 32, 3)), g)
    assert np.abs(grads.mean2d[0]).max() < 1e-9
    assert (grads.abs_mean2d[0] > 1e-3).all()


def test_backward_rejects_stale_map():
    gmap, cam, pose, _ = random_scene(0)
    out = render(gmap, pose, cam)
    gmap.colors[0] = 0.1
    gmap.touch()
    with pytest.raises(MismatchedSnapshot):
        render_backward(out, np.zeros((32, 32, 3)), gmap)
    out = render(gmap, pose, cam)
    with pytest.raises(MismatchedSnapshot):
        render_backward(out, np.zeros((32, 32, 3)), gmap, view=Se3Pose.exp(np.full(6, 0.1)))
    with pytest.raises(ValueError):
        render_backward(out, np.zeros((31, 32, 3)), gmap)


def test_snapshot_can_be_used_for_backward():
    gmap, cam, pose, rng = random_scene(2)
    snap = gmap.snapshot()
    out = render(snap, pose, cam)
    w = rng.normal(size=(32, 32, 3))
    a = render_backward(out, w, gmap)
    b = render_backward(out, w, snap)
    np.testing.assert_array_equal(a.means, b.means)
