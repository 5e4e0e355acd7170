"""The tracking front-end: per-frame tracking, keyframe management and point-cloud packets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..densifier import InterpolatedPoints, interpolate, low_gradient_mask, triangulate
from ..errors import DivergedRefinement, TrackingLost
from ..geometry import PhotometricCalib, PinholeCamera, Se3Pose, backproject_many
from ..packet import KeyframePacket
from ..selection import (INTERPOLATED, TRACKED, SelectionConfig, compute_gradients, select_extra_points,
                         select_pixels)
from .depth_init import DepthInitConfig, epipolar_search, oracle_inverse_depth, prior_inverse_depth
from .frames import Frame, Keyframe, KeyframeWindow
from .refine import RefineConfig, refine_window
from .residual import affine_ratio
from .tracker import TrackerConfig, TrackResult, track_frame
from .window import KeyframeConfig, marginalize_keyframe, need_new_keyframe

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrontEndConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    keyframe: KeyframeConfig = field(default_factory=KeyframeConfig)
    selection: SelectionConfig = field(default_factory=lambda: SelectionConfig(base_block=6))
    depth: DepthInitConfig = field(default_factory=DepthInitConfig)
    window_size: int = 8
    densify: bool = True
    densify_stride: int = 4
    low_gradient_threshold: float = 3.0 / 255.0
    densify_average_space: str = "inverse"
    # Keep extra untracked points out of the packets (ablation switch).
    emit_extra: bool = True

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")


@dataclass
class FrameResult:
    index: int
    timestamp: float
    pose: Se3Pose
    keyframe_id: int | None = None
    packet: KeyframePacket | None = None
    lost: bool = False
    track: TrackResult | None = None


@dataclass
class FrontEndStats:
    frames: int = 0
    insertions: int = 0
    marginalizations: int = 0
    lost_frames: int = 0
    diverged_refinements: int = 0
    max_window_size: int = 0
    window_sizes: list[int] = field(default_factory=list)


def _rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.repeat(img[..., None], 3, axis=2) if img.ndim == 2 else img


def emit_packet(window: KeyframeWindow, kf: Keyframe, cam: PinholeCamera, include_extra: bool = True) -> KeyframePacket:
    """World-space colored cloud of ``kf`` (hosted plus interpolated points) and all window poses."""
    keep = np.ones(len(kf.inv_depth), dtype=bool) if include_extra else kf.roles == TRACKED
    pixels = [kf.pixels[keep]]
    rho = [kf.inv_depth[keep]]
    colors = [kf.colors[keep]]
    roles = [kf.roles[keep]]
    if len(kf.interpolated):
        pixels.append(kf.interpolated.pixels)
        rho.append(kf.interpolated.inv_depth)
        colors.append(kf.interpolated.colors)
        roles.append(np.full(len(kf.interpolated), INTERPOLATED))
    pixels, rho = np.concatenate(pixels), np.concatenate(rho)
    ok = np.isfinite(rho) & (rho > 0)
    pts = kf.pose.apply(backproject_many(pixels[ok], rho[ok], cam)) if ok.any() else np.zeros((0, 3))
    return KeyframePacket(kf.id, kf.frame.index, kf.frame.timestamp, window.poses(), pts,
                          np.clip(np.concatenate(colors)[ok], 0.0, 1.0), _rgb(kf.frame.rgb),
                          np.concatenate(roles)[ok])


class FrontEnd:
    """Consumes frames in order and produces poses plus one packet per new keyframe."""

    def __init__(self, cam: PinholeCamera, cfg: FrontEndConfig = FrontEndConfig(), seed: int = 0):
        self.cam = cam
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.window = KeyframeWindow(max_size=cfg.window_size)
        self.stats = FrontEndStats()
        self._next_kf = 0
        # Final pose of every keyframe ever created; window members are refreshed after refinement.
        self.keyframe_poses: dict[int, Se3Pose] = {}
        # Per frame: timestamp, host keyframe id and the pose of the frame relative to that host.
        self._frames: list[tuple[float, int, Se3Pose]] = []
        self._prev_energy: float | None = None
        self._last_calib: PhotometricCalib | None = None

    # Trajectory -----------------------------------------------------------------

    def frame_pose(self, k: int) -> Se3Pose:
        _, host, pose_ji = self._frames[k]
        return self.keyframe_poses[host] @ pose_ji.inverse()

    def trajectory(self) -> list[tuple[float, Se3Pose]]:
        return [(ts, self.frame_pose(k)) for k, (ts, _, _) in enumerate(self._frames)]

    # Frame processing -------------------------------------------------------------

    def _guesses(self) -> list[Se3Pose]:
        kf_pose = self.window.latest.pose
        out = [Se3Pose.identity()]
        if self._frames:
            last = self.frame_pose(len(self._frames) - 1)
            out.append(last.inverse() @ kf_pose)
            if len(self._frames) > 1:
                prev = self.frame_pose(len(self._frames) - 2)
                predicted = last @ (prev.inverse() @ last)
                out.append(predicted.inverse() @ kf_pose)
        return out

    def _predicted_pose(self) -> Se3Pose:
        g = self._guesses()
        return self.window.latest.pose @ g[-1].inverse()

    def process(self, index: int, timestamp: float, image: np.ndarray, depth: np.ndarray | None = None,
                exposure: float = 1.0) -> FrameResult:
        frame = Frame(index, timestamp, image, self.cfg.tracker.levels, PhotometricCalib(exposure), depth)
        self.stats.frames += 1
        if len(self.window) == 0:
            kf = self._make_keyframe(frame, Se3Pose.identity(), PhotometricCalib(exposure))
            return self._insert(kf, FrameResult(index, timestamp, kf.pose))
        try:
            res = track_frame(frame, self.window, self.cam, self.cfg.tracker, self._guesses(),
                              self._prev_energy, self._last_calib)
        except TrackingLost as exc:
            self.stats.lost_frames += 1
            pose = self._predicted_pose()
            log.warning("frame %d: tracking lost (%s); keeping predicted pose", index, exc)
            kf = self.window.latest
            self._frames.append((frame.timestamp, kf.id, pose.inverse() @ kf.pose))
            self._record_window()
            return FrameResult(index, timestamp, pose, lost=True)
        self._prev_energy = res.energy
        self._last_calib = res.calib
        host = self.window.latest
        result = FrameResult(index, timestamp, res.pose, track=res)
        ratio = res.calib.affine_a / host.calib.affine_a
        if need_new_keyframe(res.pose, self.window, self.cam, ratio, self.cfg.keyframe):
            kf = self._make_keyframe(frame, res.pose, res.calib)
            return self._insert(kf, result)
        self._frames.append((frame.timestamp, host.id, res.pose_ji))
        self._record_window()
        return result

    def _record_window(self) -> None:
        self.stats.window_sizes.append(len(self.window))
        self.stats.max_window_size = max(self.stats.max_window_size, len(self.window))

    def _insert(self, kf: Keyframe, result: FrameResult) -> FrameResult:
        self.window.insert(kf)
        self.stats.insertions += 1
        if len(self.window) > 1:
            try:
                refine_window(self.window, self.cam, self.cfg.refine)
            except DivergedRefinement as exc:
                self.stats.diverged_refinements += 1
                log.warning("keyframe %d: %s", kf.id, exc)
        if len(self.window) > self.window.max_size:
            marginalize_keyframe(self.window, self.cfg.keyframe)
            self.stats.marginalizations += 1
        for member in self.window:
            self.keyframe_poses[member.id] = member.pose
        if self.cfg.densify:
            kf.interpolated = self._densify(kf)
        self._frames.append((kf.frame.timestamp, kf.id, Se3Pose.identity()))
        self._record_window()
        # A fresh keyframe resets the energy reference for the loss test.
        self._prev_energy = None
        result.pose = kf.pose
        result.keyframe_id = kf.id
        result.packet = emit_packet(self.window, kf, self.cam, self.cfg.emit_extra)
        return result

    # Keyframe construction ----------------------------------------------------------

    def _make_keyframe(self, frame: Frame, pose: Se3Pose, calib: PhotometricCalib) -> Keyframe:
        cfg = self.cfg
        grad = compute_gradients(frame.gray)
        sel = select_extra_points(grad, select_pixels(grad, cfg.selection), cfg.selection)
        pixels = sel.pixels.astype(np.float64)
        rho, var = self._initial_depths(frame, pose, calib, pixels)
        ok = np.isfinite(rho) & (rho > 0)
        rgb = _rgb(frame.rgb)
        px = sel.pixels[ok]
        kf = Keyframe(self._next_kf, frame, pose, pixels[ok], rho[ok], var[ok], rgb[px[:, 1], px[:, 0]],
                      sel.roles[ok])
        frame.calib = calib
        self._next_kf += 1
        return kf

    def _initial_depths(self, frame: Frame, pose: Se3Pose, calib: PhotometricCalib, pixels: np.ndarray):
        dcfg = self.cfg.depth
        n = len(pixels)
        lo, hi = dcfg.inv_range
        if dcfg.mode == "oracle":
            if frame.depth is None:
                raise ValueError("oracle depth initialization needs a depth map for every frame")
            rho = oracle_inverse_depth(pixels, frame.depth, dcfg.oracle_noise, self.rng, dcfg.oracle_edge)
            return rho, np.full(n, (dcfg.oracle_noise * np.nanmedian(rho)) ** 2 if n else 0.0)
        prior_var = np.full(n, (hi - lo) ** 2 / 12.0)
        if len(self.window) == 0:
            # No reference yet: every point starts at the middle of the prior range.
            return prior_inverse_depth(n, dcfg), prior_var
        refs = [(kf.frame.gray, kf.pose, affine_ratio(calib, kf.calib)) for kf in self.window]
        rho, confident = epipolar_search(pixels, frame.gray, pose, refs, self.cam, dcfg)
        if confident.any():
            rho[~confident] = np.median(rho[confident])
        else:
            rho = prior_inverse_depth(n, dcfg, self.rng)
        var = np.where(confident, ((hi - lo) / dcfg.samples) ** 2, prior_var)
        return rho, var

    def _densify(self, kf: Keyframe):
        if len(kf.pixels) < 3:
            return InterpolatedPoints.empty()
        tri = triangulate(kf.pixels)
        mask = low_gradient_mask(compute_gradients(kf.frame.gray), self.cfg.low_gradient_threshold)
        return interpolate(tri, kf.inv_depth, mask, self.cfg.densify_stride, _rgb(kf.frame.rgb),
                           self.cfg.densify_average_space)

