"""Affine-compensated photometric residual between a host keyframe and a target frame.

For a point hosted in frame ``i`` and seen in frame ``j``::

    r = (I_j[p_j] - b_j) - (s_j a_j) / (s_i a_i) * (I_i[p_i] - b_i)

where ``p_j`` is the reprojection of the point through the relative pose
``T_ji`` (host camera to target camera).  Points are parameterized by the
inverse depth ``rho`` along their host ray, so with bearing ``f = K^-1 p_i``
the target-camera point scaled by ``rho`` is ``q = R_ji f + rho t_ji``.
"""

from __future__ import annotations

import numpy as np

from ..errors import PointBehindCamera, ReprojectionOutOfBounds
from ..geometry import PhotometricCalib, PinholeCamera, Se3Pose, bearing_many, sample_bilinear_many

HUBER_THRESHOLD = 9.0 / 255.0


def huber(r: np.ndarray, k: float = HUBER_THRESHOLD) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= k, 0.5 * r * r, k * (a - 0.5 * k))


def huber_weight(r: np.ndarray, k: float = HUBER_THRESHOLD) -> np.ndarray:
    a = np.abs(r)
    with np.errstate(divide="ignore"):
        return np.where(a <= k, 1.0, k / np.maximum(a, 1e-300))


def affine_ratio(calib_i: PhotometricCalib, calib_j: PhotometricCalib) -> float:
    """Brightness transfer factor ``(s_j a_j) / (s_i a_i)``."""
    return (calib_j.exposure * calib_j.affine_a) / (calib_i.exposure * calib_i.affine_a)


def level_pixels(pixels: np.ndarray, level: int) -> np.ndarray:
    """Level-0 pixel coordinates expressed on an averaged pyramid level."""
    f = 2.0**level
    return (np.asarray(pixels, dtype=np.float64) + 0.5) / f - 0.5


def warp(bearings: np.ndarray, rho: np.ndarray, pose_ji: Se3Pose, cam: PinholeCamera):
    """Reproject host bearings with inverse depths; returns ``(q, uv, in_front)``.

    ``q`` is the target-camera point scaled by ``rho``; its pixel is ``pi(q)``.
    """
    q = bearings @ pose_ji.R.T + rho[:, None] * pose_ji.translation
    in_front = q[:, 2] * rho > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        iz = np.where(in_front, 1.0 / q[:, 2], np.nan)
    uv = np.stack([cam.fx * q[:, 0] * iz + cam.cx, cam.fy * q[:, 1] * iz + cam.cy], axis=1)
    return q, uv, in_front


def residuals(host_vals: np.ndarray, stack_j: np.ndarray, uv: np.ndarray, in_front: np.ndarray,
              ratio: float, b_i: float, b_j: float, margin: float = 0.0):
    """Vectorized residuals and target gradients.

    ``stack_j`` holds the target intensity and its two gradients in its
    channels.  Returns ``(r, gx, gy, valid)``; invalid entries are zero.
    """
    samples, valid = sample_bilinear_many(stack_j, uv[:, 0], uv[:, 1], margin)
    valid &= in_front
    r = (samples[:, 0] - b_j) - ratio * (host_vals - b_i)
    r = np.where(valid, r, 0.0)
    return r, samples[:, 1], samples[:, 2], valid


def pixel_jacobian(q: np.ndarray, rho: np.ndarray, gx: np.ndarray, gy: np.ndarray, cam: PinholeCamera):
    """Row vectors ``dI/dX`` at the target-camera point ``X = q / rho``, plus ``X``."""
    X = q / rho[:, None]
    iz = 1.0 / X[:, 2]
    ax = gx * cam.fx * iz
    ay = gy * cam.fy * iz
    c = np.stack([ax, ay, -(ax * X[:, 0] + ay * X[:, 1]) * iz], axis=1)
    return c, X


def pose_rows_left(c: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Jacobian rows for ``T <- exp(xi) T`` acting on target-camera points."""
    return np.concatenate([c, np.cross(X, c)], axis=1)


def inv_depth_rows(q: np.ndarray, gx: np.ndarray, gy: np.ndarray, pose_ji: Se3Pose,
                   cam: PinholeCamera) -> np.ndarray:
    """``dr/drho`` for each point; only the ``rho t`` term of ``q`` depends on ``rho``."""
    iz = 1.0 / q[:, 2]
    t = pose_ji.translation
    du = cam.fx * (t[0] - q[:, 0] * iz * t[2]) * iz
    dv = cam.fy * (t[1] - q[:, 1] * iz * t[2]) * iz
    return gx * du + gy * dv


def _image_and_calib(frame) -> tuple[np.ndarray, PhotometricCalib]:
    if isinstance(frame, tuple):
        img, calib = frame
        return np.asarray(img, dtype=np.float64), calib
    if hasattr(frame, "frame"):  # a Keyframe
        return frame.frame.gray, frame.calib
    return frame.gray, frame.calib


def photometric_residual(pt, kf_i, frame_j, pose_ji: Se3Pose, cam: PinholeCamera) -> float:
    """Residual of a single point; ``frame_j`` is a Frame, Keyframe or ``(image, calib)`` pair."""
    img_i, calib_i = _image_and_calib(kf_i)
    img_j, calib_j = _image_and_calib(frame_j)
    pix = np.asarray(pt.pixel, dtype=np.float64).reshape(1, 2)
    rho = np.array([float(pt.inv_depth)])
    q, uv, in_front = warp(bearing_many(pix, cam), rho, pose_ji, cam)
    if not in_front[0]:
        raise PointBehindCamera("point reprojects behind the target camera")
    host, ok_i = sample_bilinear_many(img_i, pix[:, 0], pix[:, 1])
    if not ok_i[0]:
        raise ReprojectionOutOfBounds(f"host pixel {pix[0]} outside the host image")
    target, ok_j = sample_bilinear_many(img_j, uv[:, 0], uv[:, 1])
    if not ok_j[0]:
        raise ReprojectionOutOfBounds(f"reprojection {uv[0]} outside the target image")
    ratio = affine_ratio(calib_i, calib_j)
    return float((target[0] - calib_j.affine_b) - ratio * (host[0] - calib_i.affine_b))
