"""Coarse-to-fine direct tracking of a frame against the latest keyframe."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import TrackingLost
from ..geometry import PhotometricCalib, PinholeCamera, Se3Pose, bearing_many, sample_bilinear_many
from .frames import Frame, Keyframe, KeyframeWindow
from .residual import (HUBER_THRESHOLD, affine_ratio, huber, huber_weight, level_pixels, pixel_jacobian,
                       pose_rows_left, residuals, warp)


@dataclass(frozen=True)
class TrackerConfig:
    levels: int = 4
    max_iterations: int = 10
    convergence: float = 1e-6
    huber: float = HUBER_THRESHOLD
    margin: float = 1.0
    max_halvings: int = 10
    min_points: int = 50
    min_valid_fraction: float = 0.3
    energy_factor: float = 12.0
    # Lower bound on the reference energy so noise-free sequences do not trip the loss test.
    energy_floor: float = 0.5 * (2.0 / 255.0) ** 2
    texture_threshold: float = 4.0 / 255.0
    min_texture_fraction: float = 0.01
    estimate_affine: bool = True
    # Pyramid levels smaller than this (either side) are skipped; they hold too few points.
    min_level_size: int = 16

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class TrackResult:
    pose_ji: Se3Pose  # host keyframe camera to frame camera
    pose: Se3Pose  # frame camera to world
    calib: PhotometricCalib
    energy: float  # mean Huber energy over valid points at level 0
    valid_fraction: float
    iterations: int
    # Total energy after every accepted step, per level (coarse first).
    history: list[list[float]] = field(default_factory=list)


class _LevelProblem:
    """Residual evaluation for one pyramid level with the host side precomputed."""

    def __init__(self, kf: Keyframe, frame: Frame, level: int, cam: PinholeCamera, cfg: TrackerConfig):
        self.cam = cam.averaged(level)
        self.stack = frame.stacks[level]
        self.cfg = cfg
        mask = kf.tracked_mask
        pix = level_pixels(kf.pixels[mask], level)
        host, ok = sample_bilinear_many(kf.frame.pyramid[level], pix[:, 0], pix[:, 1])
        self.bearings = bearing_many(kf.pixels[mask], cam)[ok]
        self.rho = kf.inv_depth[mask][ok]
        self.host = host[ok]
        self.b_i = kf.calib.affine_b
        self.n = len(self.rho)
        self.invalid_cost = float(huber(np.array([1.0]), cfg.huber)[0])
        self.active = np.ones(self.n, dtype=bool)

    def activate(self, pose_ji: Se3Pose, ratio: float, b_j: float) -> None:
        """Fix the point set for this level: points reprojecting at least ``margin`` inside.

        Afterwards an active point only counts as invalid once it leaves the
        image entirely, so points entering or brushing the border cannot bias
        the energy comparison of the line search.
        """
        self.active = np.ones(self.n, dtype=bool)
        q, uv, front = warp(self.bearings, self.rho, pose_ji, self.cam)
        self.active = residuals(self.host, self.stack, uv, front, ratio, self.b_i, b_j, self.cfg.margin)[3]

    def evaluate(self, pose_ji: Se3Pose, ratio: float, b_j: float):
        q, uv, front = warp(self.bearings, self.rho, pose_ji, self.cam)
        r, gx, gy, valid = residuals(self.host, self.stack, uv, front, ratio, self.b_i, b_j, 0.0)
        valid &= self.active
        lost = int(self.active.sum() - valid.sum())
        energy = float(huber(r[valid], self.cfg.huber).sum()) + self.invalid_cost * lost
        return energy, (q, r, gx, gy, valid)

    def step(self, pose_ji: Se3Pose, ratio: float, terms, affine: bool) -> np.ndarray:
        q, r, gx, gy, valid = terms
        q, r, gx, gy = q[valid], r[valid], gx[valid], gy[valid]
        c, X = pixel_jacobian(q, self.rho[valid], gx, gy, self.cam)
        cols = [pose_rows_left(c, X)]
        if affine:
            cols.append(np.stack([-ratio * (self.host[valid] - self.b_i), -np.ones(len(r))], axis=1))
        J = np.concatenate(cols, axis=1)
        w = huber_weight(r, self.cfg.huber)
        H = (J * w[:, None]).T @ J
        g = J.T @ (w * r)
        H += 1e-9 * np.eye(len(H)) * max(1.0, float(np.trace(H)) / len(H))
        return -np.linalg.solve(H, g)


def texture_fraction(frame: Frame, threshold: float) -> float:
    _, gx, gy = np.moveaxis(frame.stacks[0], 2, 0)
    return float(np.mean(np.hypot(gx, gy) > threshold))


def track_frame(frame: Frame, window: KeyframeWindow, cam: PinholeCamera,
                cfg: TrackerConfig = TrackerConfig(), init: Se3Pose | list[Se3Pose] | None = None,
                prev_energy: float | None = None, calib_init: PhotometricCalib | None = None) -> TrackResult:
    """Estimate the frame pose relative to the latest keyframe with a fixed map.

    ``init`` is one or more guesses for ``T_ji``; the one with the lowest
    coarse-level energy seeds the optimization.
    """
    if len(window) == 0:
        raise ValueError("cannot track against an empty window")
    kf = window.latest
    if kf.n_tracked < cfg.min_points:
        raise TrackingLost(f"keyframe {kf.id} hosts only {kf.n_tracked} tracked points")
    if texture_fraction(frame, cfg.texture_threshold) < cfg.min_texture_fraction:
        raise TrackingLost("frame has too little texture to track")
    levels = min(cfg.levels, kf.frame.levels, frame.levels)
    while levels > 1 and min(frame.pyramid[levels - 1].shape) < cfg.min_level_size:
        levels -= 1
    problems = [_LevelProblem(kf, frame, lvl, cam, cfg) for lvl in range(levels)]

    calib0 = calib_init or PhotometricCalib(frame.calib.exposure, kf.calib.affine_a, kf.calib.affine_b)
    base_ratio = affine_ratio(kf.calib, PhotometricCalib(frame.calib.exposure, 1.0, 0.0))
    log_a = math.log(calib0.affine_a)
    b_j = calib0.affine_b

    guesses = [Se3Pose.identity()] if init is None else ([init] if isinstance(init, Se3Pose) else list(init))
    coarse = problems[-1]

    def coarse_energy(p: Se3Pose) -> float:
        coarse.activate(p, base_ratio * math.exp(log_a), b_j)
        e, terms = coarse.evaluate(p, base_ratio * math.exp(log_a), b_j)
        return e / max(int(terms[4].sum()), 1) if terms[4].any() else math.inf

    pose = min(guesses, key=coarse_energy)

    history: list[list[float]] = []
    iterations = 0
    for lvl in reversed(range(levels)):
        prob = problems[lvl]
        if prob.n == 0:
            continue
        prob.activate(pose, base_ratio * math.exp(log_a), b_j)
        energy, terms = prob.evaluate(pose, base_ratio * math.exp(log_a), b_j)
        trace = [energy]
        for _ in range(cfg.max_iterations):
            if not terms[4].any():
                break
            ratio = base_ratio * math.exp(log_a)
            delta = prob.step(pose, ratio, terms, cfg.estimate_affine)
            iterations += 1
            scale = 1.0
            accepted = False
            for _ in range(cfg.max_halvings + 1):
                d = scale * delta
                cand_pose = Se3Pose.exp(d[:6]) @ pose
                cand_log_a = log_a + (d[6] if cfg.estimate_affine else 0.0)
                cand_b = b_j + (d[7] if cfg.estimate_affine else 0.0)
                cand_energy, cand_terms = prob.evaluate(cand_pose, base_ratio * math.exp(cand_log_a), cand_b)
                if cand_energy <= energy:
                    accepted = True
                    break
                scale *= 0.5
            if not accepted:
                break
            pose, log_a, b_j, energy, terms = cand_pose, cand_log_a, cand_b, cand_energy, cand_terms
            trace.append(energy)
            if np.linalg.norm(d[:6]) < cfg.convergence:
                break
        history.append(trace)

    r, valid = terms[1], terms[4]
    n = problems[0].n
    valid_fraction = float(valid.sum()) / max(n, 1)
    mean_energy = float(huber(r[valid], cfg.huber).mean()) if valid.any() else math.inf
    if valid_fraction < cfg.min_valid_fraction:
        raise TrackingLost(f"only {valid_fraction:.0%} of tracked points remain valid")
    # The relative energy test needs a converged reference; the first frame after a keyframe has none.
    ref = max(prev_energy if prev_energy is not None else 0.0, cfg.energy_floor)
    if prev_energy is not None and mean_energy > cfg.energy_factor * ref:
        raise TrackingLost(f"mean energy {mean_energy:.3g} exceeds {cfg.energy_factor} x {ref:.3g}")
    calib = PhotometricCalib(frame.calib.exposure, math.exp(log_a), b_j)
    return TrackResult(pose, kf.pose @ pose.inverse(), calib, mean_energy, valid_fraction, iterations, history)
