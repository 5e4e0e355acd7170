import numpy as np
import pytest

from splatslam.errors import DimensionMismatch, EmptyMap, ImageTooSmall, TooManyLevels
from splatslam.geometry import PinholeCamera, Se3Pose
from splatslam.mapping.control import AdaptiveControlConfig, adaptive_control
from splatslam.mapping.gaussians import GaussianMap, logit
from splatslam.mapping.loss import LossConfig, build_pyramid, map_loss, map_loss_and_grad, ssim, ssim_and_grad
from splatslam.mapping.optimizer import (LearningRates, MapOptimizer, MapperConfig, PyramidSchedule,
                                         scene_extent)
from splatslam.packet import KeyframePacket
from splatslam.raster import render

from oracles import ssim_oracle

FLAT = PyramidSchedule(levels=1, thresholds=())


def test_loss_identical_is_zero(rng):
    a = rng.random((16, 16, 3))
    assert map_loss(a, a.copy()) == 0.0
    loss, grad = map_loss_and_grad(a, a.copy())
    assert loss == 0.0 and not grad.any()


def test_loss_pure_l1():
    a = np.full((12, 12, 3), 0.3)
    assert map_loss(a, a + 0.1, LossConfig(lam=0.0)) == pytest.approx(0.1, abs=1e-12)


def test_loss_symmetric_at_lambda_zero(rng):
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    cfg = LossConfig(lam=0.0)
    assert map_loss(a, b, cfg) == map_loss(b, a, cfg)


def test_loss_matches_direct_formula(rng):
    a, b = rng.random((20, 18, 3)), rng.random((20, 18, 3))
    expect = 0.8 * np.abs(a - b).mean() + 0.2 * (1 - ssim_oracle(a, b)) / 2
    assert map_loss(a, b) == pytest.approx(expect, abs=1e-6)


def test_ssim_examples(rng):
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-9)
    g = rng.random((14, 13))
    assert ssim(g, g * 0.5) == pytest.approx(ssim_oracle(g, g * 0.5), abs=1e-9)
    assert -1 <= ssim(a, 1 - a) <= 1


def test_ssim_errors():
    with pytest.raises(ImageTooSmall):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(DimensionMismatch):
        ssim(np.zeros((20, 20)), np.zeros((20, 21)))
    with pytest.raises(DimensionMismatch):
        map_loss(np.zeros((20, 20, 3)), np.zeros((20, 20)))


def test_loss_gradient_matches_finite_differences(rng):
    a, b = rng.random((14, 15, 3)), rng.random((14, 15, 3))
    _, g = map_loss_and_grad(a, b)
    _, gs = ssim_and_grad(a, b)
    for idx in [(0, 0, 0), (7, 7, 1), (13, 14, 2), (3, 10, 0)]:
        h = 1e-6
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        assert g[idx] == pytest.approx((map_loss(ap, b) - map_loss(am, b)) / (2 * h), rel=1e-4, abs=1e-9)
        assert gs[idx] == pytest.approx((ssim(ap, b) - ssim(am, b)) / (2 * h), rel=1e-4, abs=1e-9)


def test_pyramid_examples(rng):
    img = rng.random((64, 64, 3))
    assert len(build_pyramid(img, 1)) == 1
    assert [p.shape[0] for p in build_pyramid(img, 3)] == [64, 32, 16]
    for lvl in build_pyramid(np.full((40, 36), 0.7), 2):
        np.testing.assert_allclose(lvl, 0.7)
    with pytest.raises(TooManyLevels):
        build_pyramid(img, 4)


def _map(n, opacity=0.9, scale=0.01):
    rng = np.random.default_rng(0)
    return GaussianMap(rng.normal(size=(n, 3)), None, np.full((n, 3), np.log(scale)),
                       np.full(n, float(logit(opacity))), rng.random((n, 3)))


def test_control_no_change():
    m = _map(5)
    before = m.means.copy()
    res = adaptive_control(m, AdaptiveControlConfig(), 1.0, np.random.default_rng(0))
    assert (res.cloned, res.split, res.pruned) == (0, 0, 0)
    np.testing.assert_array_equal(m.means, before)
    np.testing.assert_array_equal(res.source, np.arange(5))


def test_control_prunes_transparent():
    m = _map(3)
    m.opacity_logits[1] = float(logit(0.001))
    res = adaptive_control(m, AdaptiveControlConfig(), 1.0, np.random.default_rng(0))
    assert res.pruned == 1 and len(m) == 2
    assert (m.opacities >= 0.005).all()
    np.testing.assert_array_equal(res.source, [0, 2])


def test_control_splits_large_hot_gaussian():
    m = _map(1, scale=0.5)
    m.abs_grad_accum[:] = 1.0
    m.grad_count[:] = 1
    parent = m.scales.max()
    res = adaptive_control(m, AdaptiveControlConfig(), 1.0, np.random.default_rng(0))
    assert res.split == 1 and len(m) == 2
    assert (m.scales.max(axis=1) < parent).all()
    np.testing.assert_array_equal(res.source, [-1, -1])


def test_control_clones_small_hot_gaussian():
    m = _map(2, scale=0.001)
    m.abs_grad_accum[:] = [1.0, 0.0]
    m.grad_count[:] = 1
    res = adaptive_control(m, AdaptiveControlConfig(), 1.0, np.random.default_rng(0))
    assert res.cloned == 1 and len(m) == 3
    np.testing.assert_array_equal(m.means[2], m.means[0])
    np.testing.assert_array_equal(res.source, [0, 1, 0])


def test_control_zeroes_accumulators():
    m = _map(4, scale=0.3)
    m.abs_grad_accum[:] = [1.0, 0.0, 1.0, 1e-5]
    m.signed_grad_accum[:] = 0.2
    m.grad_count[:] = 3
    adaptive_control(m, AdaptiveControlConfig(), 1.0, np.random.default_rng(0))
    assert not m.abs_grad_accum.any() and not m.signed_grad_accum.any() and not m.grad_count.any()


def test_control_config_validation():
    with pytest.raises(ValueError):
        AdaptiveControlConfig(interval=0)
    with pytest.raises(ValueError):
        AdaptiveControlConfig(split_count=1)


def test_scene_extent():
    centers = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    assert scene_extent(centers) == pytest.approx(1.1)
    assert scene_extent(centers[:1], np.array([[0.0, 0, 3.0]] * 3)) == pytest.approx(3.3)
    assert scene_extent(np.zeros((0, 3))) == 1.0


CAM = PinholeCamera(40.0, 40.0, 15.5, 15.5, 32, 32)


def _optimizer(gmap, views, targets, cfg):
    opt = MapOptimizer(CAM, cfg, seed=0)
    for k, (pose, img) in enumerate(zip(views, targets)):
        opt.add_packet(KeyframePacket(k, k, float(k), {k: pose}, np.zeros((0, 3)), np.zeros((0, 3)), img))
    opt.map = gmap
    opt.adam.sync(gmap)
    return opt


def test_optimize_empty_map():
    opt = MapOptimizer(CAM)
    with pytest.raises(EmptyMap):
        opt.optimize_iteration()


def test_optimize_at_optimum_keeps_parameters():
    gmap = _map(6, scale=0.1)
    gmap.means[:, 2] = np.abs(gmap.means[:, 2]) + 2
    pose = Se3Pose.identity()
    opt = _optimizer(gmap, [pose], [render(gmap, pose, CAM).image], MapperConfig(pyramid=FLAT))
    before = {k: getattr(gmap, k).copy() for k in ("means", "colors", "log_scales", "opacity_logits")}
    for _ in range(5):
        assert opt.optimize_iteration() == 0.0
    for k, v in before.items():
        np.testing.assert_allclose(getattr(opt.map, k), v, atol=1e-15)


def test_single_gaussian_color_converges():
    target = GaussianMap([[0.0, 0.0, 2.0]], None, np.full((1, 3), np.log(0.3)), [3.0], [[0.8, 0.3, 0.6]])
    pose = Se3Pose.identity()
    gmap = target.snapshot()
    gmap.colors = np.array([[0.5, 0.5, 0.5]])
    gmap.touch()
    cfg = MapperConfig(pyramid=FLAT, lr=LearningRates(means=0.0, opacity_logits=0.0, log_scales=0.0, quats=0.0))
    opt = _optimizer(gmap, [pose], [render(target, pose, CAM).image], cfg)
    for _ in range(200):
        opt.optimize_iteration()
    np.testing.assert_allclose(opt.map.colors[0], [0.8, 0.3, 0.6], atol=0.01)


def test_loss_moving_average_decreases():
    rng = np.random.default_rng(3)
    means = np.c_[rng.uniform(-0.5, 0.5, (5, 2)), rng.uniform(2, 3, 5)]
    target = GaussianMap(means, None, np.log(rng.uniform(0.15, 0.3, (5, 3))), np.full(5, 2.0), rng.random((5, 3)))
    views = [Se3Pose.exp(np.r_[rng.normal(0, 0.1, 3), rng.normal(0, 0.03, 3)]) for _ in range(4)]
    imgs = [render(target, v, CAM).image for v in views]
    start = target.snapshot()
    start.colors = np.full((5, 3), 0.5)
    start.means = start.means + rng.normal(0, 0.05, (5, 3))
    start.touch()
    opt = _optimizer(start, views, imgs, MapperConfig(pyramid=FLAT))
    losses = np.array([opt.optimize_iteration() for _ in range(500)])
    windows = losses.reshape(5, 100).mean(axis=1)
    assert (np.diff(windows) < 0).all(), windows


def test_control_runs_on_interval_and_remaps_adam():
    gmap = _map(8, scale=0.2)
    gmap.means[:, 2] = np.abs(gmap.means[:, 2]) + 2
    pose = Se3Pose.identity()
    img = np.full((32, 32, 3), 0.2)
    cfg = MapperConfig(pyramid=FLAT, control=AdaptiveControlConfig(interval=5, grad_threshold=1e-12))
    opt = _optimizer(gmap, [pose], [img], cfg)
    for _ in range(5):
        opt.optimize_iteration()
    assert opt.control_events == []
    opt.optimize_iteration()
    assert len(opt.control_events) == 1
    assert len(opt.adam.m["means"]) == len(opt.map)


def test_pyramid_schedule():
    s = PyramidSchedule()
    assert [s.level(u) for u in (0, 29, 30, 59, 60, 500)] == [2, 2, 1, 1, 0, 0]
    with pytest.raises(ValueError):
        PyramidSchedule(levels=3, thresholds=(0.5,))
    with pytest.raises(ValueError):
        PyramidSchedule(levels=3, thresholds=(0.6, 0.3))


def test_iteration_log(tmp_path):
    gmap = _map(3, scale=0.2)
    gmap.means[:, 2] = 2.5
    opt = MapOptimizer(CAM, MapperConfig(pyramid=FLAT), 0, tmp_path / "it.csv")
    opt.add_packet(KeyframePacket(0, 0, 0.0, {0: Se3Pose.identity()}, np.zeros((0, 3)), np.zeros((0, 3)),
                                  np.zeros((32, 32, 3))))
    opt.map = gmap
    opt.optimize_iteration()
    opt.close()
    lines = (tmp_path / "it.csv").read_text().splitlines()
    assert lines[0] == "iter,loss,gaussian_count,level"
    assert lines[1].startswith("1,") and lines[1].endswith(",3,0")
