"""Keyframe creation test and distance-based marginalization of the window."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import WindowNotOverfull
from ..geometry import PinholeCamera, Se3Pose, bearing_many
from .frames import KeyframeWindow
from .residual import warp


@dataclass(frozen=True)
class KeyframeConfig:
    flow_weight: float = 1.0 / 8.0  # per pixel of mean flow
    translation_flow_weight: float = 1.0 / 8.0  # per pixel of flow with rotation removed
    brightness_weight: float = 4.0  # per unit of |log(a_j / a_i)|
    threshold: float = 1.0
    distance_eps: float = 1e-3


def flow_magnitudes(pose_ji: Se3Pose, pixels: np.ndarray, inv_depth: np.ndarray,
                    cam: PinholeCamera) -> tuple[float, float]:
    """Mean optical flow of the given points, and the same with rotation removed."""
    if len(pixels) == 0:
        return 0.0, 0.0
    f = bearing_many(pixels, cam)
    _, uv, front = warp(f, inv_depth, pose_ji, cam)
    _, uv_t, front_t = warp(f, inv_depth, Se3Pose(translation=pose_ji.translation), cam)
    flow = np.linalg.norm(uv[front] - pixels[front], axis=1)
    flow_t = np.linalg.norm(uv_t[front_t] - pixels[front_t], axis=1)
    # Points swung behind the camera count as very large flow.
    big = float(cam.width + cam.height)
    mean = (flow.sum() + big * (~front).sum()) / len(pixels)
    mean_t = (flow_t.sum() + big * (~front_t).sum()) / len(pixels)
    return float(mean), float(mean_t)


def keyframe_score(pose: Se3Pose, window: KeyframeWindow, cam: PinholeCamera, brightness_ratio: float = 1.0,
                   cfg: KeyframeConfig = KeyframeConfig()) -> float:
    kf = window.latest
    pose_ji = pose.inverse() @ kf.pose
    mask = kf.tracked_mask
    flow, flow_t = flow_magnitudes(pose_ji, kf.pixels[mask], kf.inv_depth[mask], cam)
    return (cfg.flow_weight * flow + cfg.translation_flow_weight * flow_t
            + cfg.brightness_weight * abs(math.log(brightness_ratio)))


def need_new_keyframe(pose: Se3Pose, window: KeyframeWindow, cam: PinholeCamera, brightness_ratio: float = 1.0,
                      cfg: KeyframeConfig = KeyframeConfig()) -> bool:
    """Whether a frame at camera-to-world ``pose`` sees enough change to become a keyframe.

    ``brightness_ratio`` is ``a_j / a_i`` relative to the latest keyframe.
    """
    return keyframe_score(pose, window, cam, brightness_ratio, cfg) > cfg.threshold


def marginalization_scores(centers: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Score of every keyframe but the two newest; higher means removed first.

    ``centers`` are camera centers ordered oldest first.
    """
    n = len(centers)
    d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    scores = np.full(n, -np.inf)
    for i in range(n - 2):
        others = [j for j in range(n) if j != i]
        scores[i] = math.sqrt(d[i, n - 1]) * float(np.sum(1.0 / (d[i, others] + eps)))
    return scores


def marginalize_keyframe(window: KeyframeWindow, cfg: KeyframeConfig = KeyframeConfig()) -> int:
    """Remove the keyframe with the highest score and return its id; ties go to the older id."""
    if len(window) != window.max_size + 1:
        raise WindowNotOverfull(f"window holds {len(window)} keyframes, expected {window.max_size + 1}")
    centers = np.array([kf.pose.translation for kf in window])
    scores = marginalization_scores(centers, cfg.distance_eps)
    cand = scores[: len(window) - 2]
    # Scores equal up to rounding count as ties.
    tied = np.flatnonzero(cand >= cand.max() * (1.0 - 1e-12))
    best = min(tied, key=lambda i: window.keyframes[i].id)
    return window.keyframes.pop(best).id
