"""Image and trajectory metrics."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionMismatch, TooFewPoses
from ..geometry import Se3Pose
from ..mapping.loss import ssim
from .tum import ASSOCIATION_WINDOW, associate

__all__ = ["psnr", "ssim", "umeyama", "ate_rmse", "aligned_errors"]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio of [0, 1] images; ``inf`` when they are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool = True) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares ``(s, R, t)`` with ``dst ~ s R src + t``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_s = float(np.mean(np.sum(xs * xs, axis=1)))
    s = float(np.trace(np.diag(D) @ S) / var_s) if with_scale and var_s > 0 else 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def _positions(traj) -> tuple[np.ndarray, np.ndarray]:
    times = np.array([t for t, _ in traj], dtype=np.float64)
    pos = np.array([p.translation for _, p in traj], dtype=np.float64).reshape(-1, 3)
    return times, pos


def aligned_errors(estimated: list[tuple[float, Se3Pose]], groundtruth: list[tuple[float, Se3Pose]],
                   window: float = ASSOCIATION_WINDOW, with_scale: bool = True) -> np.ndarray:
    """Translational residuals of associated poses after aligning the estimate onto the ground truth."""
    t_est, p_est = _positions(estimated)
    t_gt, p_gt = _positions(groundtruth)
    match = associate(t_est, t_gt, window)
    keep = match >= 0
    if int(keep.sum()) < 3:
        raise TooFewPoses(f"only {int(keep.sum())} associated poses; need at least 3")
    src, dst = p_est[keep], p_gt[match[keep]]
    s, R, t = umeyama(src, dst, with_scale)
    return np.linalg.norm(dst - (s * src @ R.T + t), axis=1)


def ate_rmse(estimated: list[tuple[float, Se3Pose]], groundtruth: list[tuple[float, Se3Pose]],
             window: float = ASSOCIATION_WINDOW, with_scale: bool = True) -> float:
    """Absolute trajectory error (RMSE, ground-truth units) after similarity alignment."""
    err = aligned_errors(estimated, groundtruth, window, with_scale)
    return float(np.sqrt(np.mean(err * err)))
