"""Synthetic keyframes with ground-truth depth for front-end tests."""

import numpy as np

from splatslam.frontend.depth_init import oracle_inverse_depth
from splatslam.frontend.frames import Frame, Keyframe, KeyframeWindow
from splatslam.geometry import PhotometricCalib, PinholeCamera, Se3Pose, so3_exp_quat
from splatslam.pipeline.synthetic import default_camera, fronto_parallel_plane, ray_cast
from splatslam.selection import SelectionConfig, compute_gradients, select_extra_points, select_pixels

PLANE_DEPTH = 2.0
W, H = 128, 96


def plane_scene(seed: int = 0):
    return fronto_parallel_plane(PLANE_DEPTH, seed=seed)


def camera() -> PinholeCamera:
    return default_camera(W, H)


def make_frame(scene, pose: Se3Pose, cam: PinholeCamera, index: int = 0, calib=PhotometricCalib(),
               levels: int = 4, gain: float = 1.0, offset: float = 0.0) -> Frame:
    img, depth = ray_cast(scene, pose, cam)
    return Frame(index, float(index), np.clip(gain * img + offset, 0, None), levels, calib, depth)


def make_keyframe(scene, pose: Se3Pose, cam: PinholeCamera, kid: int = 0, calib=PhotometricCalib(),
                  extras: bool = False, rho_scale: float = 1.0) -> Keyframe:
    frame = make_frame(scene, pose, cam, kid, calib)
    grad = compute_gradients(frame.gray)
    cfg = SelectionConfig(base_block=6)
    sel = select_pixels(grad, cfg)
    if extras:
        sel = select_extra_points(grad, sel, cfg)
    rho = oracle_inverse_depth(sel.pixels.astype(float), frame.depth, 0.0, np.random.default_rng(0))
    ok = np.isfinite(rho)
    px = sel.pixels[ok]
    return Keyframe(kid, frame, pose, px.astype(float), rho[ok] * rho_scale, np.zeros(ok.sum()),
                    frame.rgb[px[:, 1], px[:, 0]], sel.roles[ok])


def window_of(*kfs, max_size: int = 8) -> KeyframeWindow:
    w = KeyframeWindow(max_size=max_size)
    for kf in kfs:
        w.insert(kf)
    return w


def perturbation(rng, max_deg: float = 2.0, max_trans: float = 0.02 * PLANE_DEPTH) -> Se3Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return Se3Pose(so3_exp_quat(axis * np.deg2rad(rng.uniform(0.2, max_deg))), d * rng.uniform(0.1, 1.0) * max_trans)
