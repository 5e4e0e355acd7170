"""Gaussian map training loop: keyframe sampling, pyramid schedule, Adam and density control."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import EmptyMap
from ..geometry import PinholeCamera, Se3Pose
from ..packet import KeyframePacket
from ..raster import RasterConfig, render, render_backward
from .control import AdaptiveControlConfig, ControlResult, adaptive_control
from .gaussians import GaussianMap, InitConfig, init_from_packet
from .loss import LossConfig, build_pyramid, map_loss_and_grad

PARAM_GROUPS = ("means", "colors", "opacity_logits", "log_scales", "quats")


@dataclass(frozen=True)
class LearningRates:
    # The location rate is multiplied by the scene extent.
    means: float = 1.6e-4
    means_final: float = 1.6e-6
    means_decay_steps: int = 30000
    colors: float = 2.5e-3
    opacity_logits: float = 5e-2
    log_scales: float = 5e-3
    quats: float = 1e-3


@dataclass(frozen=True)
class PyramidSchedule:
    levels: int = 3
    # Fractions of a keyframe's lifetime after which training moves one level finer.
    thresholds: tuple[float, ...] = (0.3, 0.6)
    lifetime: int = 100

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if len(self.thresholds) != self.levels - 1:
            raise ValueError("need one threshold per level transition")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")

    def level(self, uses: int) -> int:
        frac = uses / self.lifetime
        passed = sum(frac >= t for t in self.thresholds)
        return self.levels - 1 - passed


@dataclass(frozen=True)
class MapperConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    control: AdaptiveControlConfig = field(default_factory=AdaptiveControlConfig)
    init: InitConfig = field(default_factory=InitConfig)
    raster: RasterConfig = field(default_factory=lambda: RasterConfig(cap_gradient="straight_through"))
    lr: LearningRates = field(default_factory=LearningRates)
    pyramid: PyramidSchedule = field(default_factory=PyramidSchedule)
    newest_weight: float = 2.0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-15
    extent_margin: float = 1.1


class Adam:
    """Adam over the named parameter arrays of a :class:`GaussianMap`."""

    def __init__(self, betas=(0.9, 0.999), eps=1e-15):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps = 0

    def sync(self, gmap: GaussianMap) -> None:
        """Append zero state for Gaussians added since the last step."""
        for name in PARAM_GROUPS:
            p = getattr(gmap, name)
            m = self.m.get(name)
            if m is None:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            elif len(m) < len(p):
                pad = np.zeros((len(p) - len(m),) + p.shape[1:])
                self.m[name] = np.concatenate([m, pad])
                self.v[name] = np.concatenate([self.v[name], pad])

    def remap(self, source: np.ndarray) -> None:
        """Reorder state after density control; ``-1`` entries start from zero."""
        fresh = source < 0
        src = np.where(fresh, 0, source)
        for store in (self.m, self.v):
            for name, arr in store.items():
                new = arr[src] if len(arr) else np.zeros((len(source),) + arr.shape[1:])
                new[fresh] = 0.0
                store[name] = new

    def step(self, gmap: GaussianMap, grads: dict[str, np.ndarray], lrs: dict[str, float]) -> None:
        self.sync(gmap)
        self.steps += 1
        # Per-parameter bias correction is approximated by the global step count, as is usual.
        c1 = 1.0 - self.b1**self.steps
        c2 = 1.0 - self.b2**self.steps
        for name in PARAM_GROUPS:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = lrs[name] * (m / c1) / (np.sqrt(v / c2) + self.eps)
            setattr(gmap, name, getattr(gmap, name) - update)
        gmap.colors = np.clip(gmap.colors, 0.0, 1.0)
        gmap.quats = gmap.quats / np.linalg.norm(gmap.quats, axis=1, keepdims=True)
        gmap.touch()


@dataclass
class MapKeyframe:
    keyframe_id: int
    pose: Se3Pose
    pyramid: list[np.ndarray]
    uses: int = 0


def scene_extent(centers: np.ndarray, points: np.ndarray | None = None, margin: float = 1.1) -> float:
    """Scene radius: the larger of the camera-center spread and the median camera-to-point distance.

    A small-baseline camera barely moves relative to what it sees, so the
    camera spread alone would freeze positions and split almost everything.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    radius = float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()) if len(centers) else 0.0
    if points is not None and len(points) and len(centers):
        radius = max(radius, float(np.median(np.linalg.norm(points - centers.mean(axis=0), axis=1))))
    return margin * radius if radius > 1e-6 else 1.0


class MapOptimizer:
    """Owns the Gaussian map and trains it against the keyframes received so far."""

    def __init__(self, cam: PinholeCamera, cfg: MapperConfig = MapperConfig(), seed: int = 0,
                 log_path: str | Path | None = None):
        self.cam = cam
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.map = GaussianMap()
        self.adam = Adam(cfg.adam_betas, cfg.adam_eps)
        self.keyframes: dict[int, MapKeyframe] = {}
        self.iteration = 0
        self.extent = 1.0
        self.control_events: list[ControlResult] = []
        self._log_file = None
        self._log = None
        if log_path is not None:
            self._log_file = open(log_path, "w", newline="")
            self._log = csv.writer(self._log_file)
            self._log.writerow(["iter", "loss", "gaussian_count", "level"])

    def close(self) -> None:
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    def add_packet(self, packet: KeyframePacket) -> int:
        """Register the packet's keyframe, refresh window poses and seed new Gaussians."""
        for kid, pose in packet.poses.items():
            if kid in self.keyframes:
                self.keyframes[kid].pose = pose
        self.keyframes[packet.keyframe_id] = MapKeyframe(
            packet.keyframe_id, packet.pose, build_pyramid(packet.image, self.cfg.pyramid.levels))
        added = init_from_packet(self.map, packet, self.cfg.init)
        self.adam.sync(self.map)
        centers = np.array([kf.pose.translation for kf in self.keyframes.values()])
        self.extent = scene_extent(centers, self.map.means, self.cfg.extent_margin)
        return added

    def _pick_keyframe(self) -> MapKeyframe:
        ids = sorted(self.keyframes)
        w = np.ones(len(ids))
        w[-1] = self.cfg.newest_weight
        return self.keyframes[ids[int(self.rng.choice(len(ids), p=w / w.sum()))]]

    def learning_rates(self) -> dict[str, float]:
        lr = self.cfg.lr
        t = min(self.iteration / max(lr.means_decay_steps, 1), 1.0)
        if lr.means > 0 and lr.means_final > 0:
            means = math.exp((1 - t) * math.log(lr.means) + t * math.log(lr.means_final)) * self.extent
        else:
            means = ((1 - t) * lr.means + t * lr.means_final) * self.extent
        return {"means": means, "colors": lr.colors, "opacity_logits": lr.opacity_logits,
                "log_scales": lr.log_scales, "quats": lr.quats}

    def optimize_iteration(self, keyframe_id: int | None = None) -> float:
        if len(self.map) == 0:
            raise EmptyMap("cannot optimize an empty map")
        if not self.keyframes:
            raise EmptyMap("no keyframes available")
        # Control runs before the step so a run of N * interval iterations ends with a trained map.
        if self.iteration > 0 and self.iteration % self.cfg.control.interval == 0:
            self.densify_and_prune()
        kf = self.keyframes[keyframe_id] if keyframe_id is not None else self._pick_keyframe()
        level = self.cfg.pyramid.level(kf.uses)
        kf.uses += 1
        cam = self.cam.decimated(level)
        gt = kf.pyramid[level]
        out = render(self.map, kf.pose, cam, self.cfg.raster)
        loss, g_img = map_loss_and_grad(out.image, gt, self.cfg.loss)
        grads = render_backward(out, g_img, self.map)
        self._accumulate(grads, cam)
        self.adam.step(self.map, {"means": grads.means, "colors": grads.colors,
                                  "opacity_logits": grads.opacity_logits,
                                  "log_scales": grads.log_scales, "quats": grads.quats},
                       self.learning_rates())
        self.iteration += 1
        if self._log is not None:
            self._log.writerow([self.iteration, f"{loss:.8g}", len(self.map), level])
        return loss

    def _accumulate(self, grads, cam: PinholeCamera) -> None:
        vis = grads.visible
        # Screen-space statistics are expressed in normalized device units as in the reference 3DGS code.
        ndc = np.array([0.5 * cam.width, 0.5 * cam.height])
        self.map.abs_grad_accum[vis] += np.linalg.norm(grads.abs_mean2d[vis] * ndc, axis=1)
        self.map.signed_grad_accum[vis] += grads.mean2d[vis] * ndc
        self.map.grad_count[vis] += 1

    def densify_and_prune(self) -> ControlResult:
        res = adaptive_control(self.map, self.cfg.control, self.extent, self.rng)
        self.adam.remap(res.source)
        self.control_events.append(res)
        return res

    def render_view(self, pose: Se3Pose, cam: PinholeCamera | None = None) -> np.ndarray:
        return render(self.map, pose, cam or self.cam, self.cfg.raster).image
