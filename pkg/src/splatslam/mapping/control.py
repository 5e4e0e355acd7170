"""Adaptive density control: clone, split and prune Gaussians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import quat_to_matrix
from .gaussians import GaussianMap


@dataclass(frozen=True)
class AdaptiveControlConfig:
    interval: int = 1000
    grad_threshold: float = 4e-4
    # Gaussians whose largest scale exceeds this fraction of the scene extent are split.
    scale_split_threshold: float = 0.01
    opacity_prune_threshold: float = 0.005
    split_count: int = 2
    split_scale_shrink: float = 1.6

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError("interval must be >= 1")
        if min(self.grad_threshold, self.scale_split_threshold, self.opacity_prune_threshold) <= 0:
            raise ValueError("thresholds must be positive")
        if self.split_count < 2 or self.split_scale_shrink <= 1:
            raise ValueError("split_count must be >= 2 and split_scale_shrink > 1")


@dataclass(frozen=True)
class ControlResult:
    cloned: int
    split: int
    pruned: int
    # For each surviving Gaussian, the index it was copied from before the
    # event, or -1 for freshly created split children.
    source: np.ndarray


def mean_gradient(gmap: GaussianMap) -> np.ndarray:
    """Mean homo-directional gradient per Gaussian over the views it was visible in."""
    out = np.zeros(len(gmap))
    seen = gmap.grad_count > 0
    out[seen] = gmap.abs_grad_accum[seen] / gmap.grad_count[seen]
    return out


def adaptive_control(gmap: GaussianMap, cfg: AdaptiveControlConfig, scene_extent: float,
                     rng: np.random.Generator) -> ControlResult:
    n = len(gmap)
    grads = mean_gradient(gmap)
    hot = grads > cfg.grad_threshold
    big = gmap.scales.max(axis=1) > cfg.scale_split_threshold * scene_extent if n else np.zeros(0, bool)
    clone_idx = np.flatnonzero(hot & ~big)
    split_idx = np.flatnonzero(hot & big)

    new_means = [gmap.means[clone_idx]]
    new_quats = [gmap.quats[clone_idx]]
    new_logs = [gmap.log_scales[clone_idx]]
    new_ops = [gmap.opacity_logits[clone_idx]]
    new_cols = [gmap.colors[clone_idx]]
    if len(split_idx):
        k = cfg.split_count
        s = np.repeat(gmap.scales[split_idx], k, axis=0)
        R = quat_to_matrix(np.repeat(gmap.quats[split_idx] / np.linalg.norm(gmap.quats[split_idx], axis=1,
                                                                            keepdims=True), k, axis=0))
        offsets = np.einsum("nij,nj->ni", R, rng.normal(size=s.shape) * s)
        new_means.append(np.repeat(gmap.means[split_idx], k, axis=0) + offsets)
        new_quats.append(np.repeat(gmap.quats[split_idx], k, axis=0))
        new_logs.append(np.log(s / cfg.split_scale_shrink))
        new_ops.append(np.repeat(gmap.opacity_logits[split_idx], k))
        new_cols.append(np.repeat(gmap.colors[split_idx], k, axis=0))
    source = np.concatenate([np.arange(n), clone_idx, np.full(len(split_idx) * cfg.split_count, -1)])
    gmap.append(np.concatenate(new_means), np.concatenate(new_quats), np.concatenate(new_logs),
                np.concatenate(new_ops), np.concatenate(new_cols))
    keep = np.ones(len(gmap), dtype=bool)
    keep[split_idx] = False
    keep &= gmap.opacities >= cfg.opacity_prune_threshold
    pruned = int(n + len(clone_idx) + len(split_idx) * cfg.split_count - len(split_idx) - keep.sum())
    gmap.select(np.flatnonzero(keep))
    gmap.reset_accumulators()
    return ControlResult(len(clone_idx), len(split_idx), pruned, source[keep])
