"""Initial inverse depths for the points of a new keyframe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from ..geometry import PinholeCamera, Se3Pose, bearing_many, sample_bilinear_many
from .residual import warp

# Offsets of the comparison pattern around each point, in pixels.
PATTERN = np.array([[0, 0], [-2, 0], [2, 0], [0, -2], [0, 2], [-1, -1], [1, 1], [-1, 1], [1, -1]], dtype=np.float64)


@dataclass(frozen=True)
class DepthInitConfig:
    mode: str = "search"  # "search" or "oracle"
    # Relative standard deviation of multiplicative noise applied to oracle inverse depths.
    oracle_noise: float = 0.0
    # Oracle points whose 3x3 neighborhood spans a larger relative depth jump sit on an
    # occlusion edge; their depth is ambiguous, so they are dropped.
    oracle_edge: float = 0.02
    min_depth: float = 0.5
    max_depth: float = 10.0
    samples: int = 96
    # A match must beat the best sample outside its neighborhood by this SSD factor.
    uniqueness: float = 0.8
    min_baseline: float = 1e-3

    def __post_init__(self):
        if self.mode not in ("search", "oracle"):
            raise ValueError("depth init mode must be 'search' or 'oracle'")
        if not 0 < self.min_depth < self.max_depth:
            raise ValueError("need 0 < min_depth < max_depth")

    @property
    def inv_range(self) -> tuple[float, float]:
        return 1.0 / self.max_depth, 1.0 / self.min_depth


def oracle_inverse_depth(pixels: np.ndarray, depth: np.ndarray, noise: float,
                         rng: np.random.Generator, edge: float = 0.02) -> np.ndarray:
    """Ground-truth inverse depth at integer pixels, optionally noised; NaN where depth is unusable."""
    px = np.rint(pixels).astype(np.int64)
    depth = np.asarray(depth, dtype=np.float64)
    finite = np.where(np.isfinite(depth) & (depth > 0), depth, np.inf)
    hi = maximum_filter(finite, 3, mode="nearest")
    lo = minimum_filter(finite, 3, mode="nearest")
    with np.errstate(invalid="ignore"):
        smooth = np.isfinite(hi) & (hi <= lo * (1.0 + edge))
    z = finite[px[:, 1], px[:, 0]]
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(np.isfinite(z) & smooth[px[:, 1], px[:, 0]], 1.0 / z, np.nan)
    if noise > 0:
        rho = rho * np.exp(noise * rng.standard_normal(len(rho)))
    return rho


def prior_inverse_depth(n: int, cfg: DepthInitConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Inverse depths drawn uniformly from the prior range, or its midpoint without a generator."""
    lo, hi = cfg.inv_range
    if rng is None:
        return np.full(n, 0.5 * (lo + hi))
    return rng.uniform(lo, hi, n)


def epipolar_search(pixels: np.ndarray, host_gray: np.ndarray, host_pose: Se3Pose,
                    references: list[tuple[np.ndarray, Se3Pose, float]], cam: PinholeCamera,
                    cfg: DepthInitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Search the prior inverse-depth range for the best patch match.

    ``references`` holds ``(gray image, camera-to-world pose, intensity ratio)``
    per reference frame, the ratio mapping host intensities to the reference.
    Returns ``(inv_depth, confident)``; unconfident points keep the best
    sample anyway so callers may choose a fallback.
    """
    n = len(pixels)
    lo, hi = cfg.inv_range
    grid = np.linspace(lo, hi, cfg.samples)
    if n == 0:
        return np.zeros(0), np.zeros(0, dtype=bool)
    pat_u = pixels[:, 0:1] + PATTERN[None, :, 0]
    pat_v = pixels[:, 1:2] + PATTERN[None, :, 1]
    host, host_ok = sample_bilinear_many(host_gray, pat_u.ravel(), pat_v.ravel())
    host = host.reshape(n, -1)
    host_ok = host_ok.reshape(n, -1).all(axis=1)
    f = bearing_many(pixels, cam)
    cost = np.zeros((n, cfg.samples))
    seen = np.zeros((n, cfg.samples))
    for img, pose, ratio in references:
        pose_rh = pose.inverse() @ host_pose
        if np.linalg.norm(pose_rh.translation) < cfg.min_baseline:
            continue
        for s, rho in enumerate(grid):
            _, uv, front = warp(f, np.full(n, rho), pose_rh, cam)
            su = uv[:, 0:1] + PATTERN[None, :, 0]
            sv = uv[:, 1:2] + PATTERN[None, :, 1]
            vals, ok = sample_bilinear_many(img, su.ravel(), sv.ravel())
            vals = vals.reshape(n, -1)
            ok = ok.reshape(n, -1).all(axis=1) & front
            ssd = np.sum((vals - ratio * host) ** 2, axis=1)
            cost[ok, s] += ssd[ok]
            seen[ok, s] += 1
    usable = seen == seen.max(axis=1, keepdims=True)
    usable &= seen > 0
    cost = np.where(usable, cost / np.maximum(seen, 1), np.inf)
    best = np.argmin(cost, axis=1)
    rho = grid[best]
    # Uniqueness: the best cost outside a +-2 sample neighborhood must be clearly worse.
    idx = np.arange(cfg.samples)
    far = np.abs(idx[None, :] - best[:, None]) > 2
    second = np.where(far, cost, np.inf).min(axis=1)
    best_cost = cost[np.arange(n), best]
    confident = host_ok & np.isfinite(best_cost) & (best_cost < cfg.uniqueness * second)
    # Parabolic refinement between neighboring samples.
    inner = confident & (best > 0) & (best < cfg.samples - 1)
    b = best[inner]
    c0, c1, c2 = cost[inner, b - 1], cost[inner, b], cost[inner, b + 1]
    denom = c0 - 2 * c1 + c2
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where((denom > 0) & np.isfinite(denom), 0.5 * (c0 - c2) / denom, 0.0)
    rho[inner] = grid[b] + np.clip(off, -0.5, 0.5) * (grid[1] - grid[0])
    return rho, confident
