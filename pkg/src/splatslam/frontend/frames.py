"""Frames, keyframes, tracked points and the sliding keyframe window."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..densifier import InterpolatedPoints
from ..geometry import PhotometricCalib, PinholeCamera, Se3Pose, backproject_many
from ..images import average_pyramid, central_gradients, to_gray
from ..selection import TRACKED


@dataclass(frozen=True)
class TrackedPoint:
    host_keyframe: int
    pixel: np.ndarray
    inv_depth: float
    inv_depth_variance: float
    color: np.ndarray
    role: int = TRACKED

    def __post_init__(self):
        if not self.inv_depth > 0:
            raise ValueError("inverse depth must be positive")
        if self.inv_depth_variance < 0:
            raise ValueError("variance must be non-negative")


class Frame:
    """One input image with its grayscale pyramid and gradient images."""

    def __init__(self, index: int, timestamp: float, rgb: np.ndarray, levels: int,
                 calib: PhotometricCalib = PhotometricCalib(), depth: np.ndarray | None = None):
        self.index = index
        self.timestamp = float(timestamp)
        self.rgb = np.asarray(rgb, dtype=np.float64)
        gray = to_gray(self.rgb) if self.rgb.ndim == 3 else self.rgb
        self.pyramid = average_pyramid(gray, levels)
        # Per level: intensity, d/du and d/dv stacked for a single bilinear lookup.
        self.stacks = [np.dstack([level, *central_gradients(level)]) for level in self.pyramid]
        self.calib = calib
        self.depth = depth

    @property
    def gray(self) -> np.ndarray:
        return self.pyramid[0]

    @property
    def levels(self) -> int:
        return len(self.pyramid)


@dataclass
class Keyframe:
    """A frame kept in the window, together with the points it hosts.

    Point arrays are parallel; ``roles`` holds TRACKED or EXTRA_UNTRACKED.
    """

    id: int
    frame: Frame
    pose: Se3Pose
    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    inv_depth: np.ndarray = field(default_factory=lambda: np.zeros(0))
    inv_var: np.ndarray = field(default_factory=lambda: np.zeros(0))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    roles: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    interpolated: InterpolatedPoints = field(default_factory=InterpolatedPoints.empty)

    @property
    def calib(self) -> PhotometricCalib:
        return self.frame.calib

    @property
    def tracked_mask(self) -> np.ndarray:
        return self.roles == TRACKED

    @property
    def n_tracked(self) -> int:
        return int(np.count_nonzero(self.roles == TRACKED))

    @property
    def points(self) -> list[TrackedPoint]:
        return [TrackedPoint(self.id, self.pixels[k].copy(), float(self.inv_depth[k]),
                             float(self.inv_var[k]), self.colors[k].copy(), int(self.roles[k]))
                for k in range(len(self.inv_depth))]

    def world_points(self, cam: PinholeCamera) -> np.ndarray:
        return self.pose.apply(backproject_many(self.pixels, self.inv_depth, cam))


@dataclass
class KeyframeWindow:
    keyframes: list[Keyframe] = field(default_factory=list)
    max_size: int = 8

    def __len__(self) -> int:
        return len(self.keyframes)

    def __iter__(self):
        return iter(self.keyframes)

    @property
    def latest(self) -> Keyframe:
        return self.keyframes[-1]

    @property
    def first(self) -> Keyframe:
        return self.keyframes[0]

    def insert(self, kf: Keyframe) -> None:
        self.keyframes.append(kf)

    def by_id(self, kid: int) -> Keyframe:
        for kf in self.keyframes:
            if kf.id == kid:
                return kf
        raise KeyError(kid)

    def poses(self) -> dict[int, Se3Pose]:
        return {kf.id: kf.pose for kf in self.keyframes}
