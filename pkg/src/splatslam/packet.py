"""Message passed from the tracking front-end to the mapper."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Se3Pose
from .selection import EXTRA_UNTRACKED, INTERPOLATED, TRACKED


def _frozen(a, dtype, shape) -> np.ndarray:
    arr = np.array(a, dtype=dtype).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class KeyframePacket:
    """Window poses, the new keyframe's colored world-space cloud, and its ground-truth image.

    Arrays are copied and made read-only at construction so a packet can be
    handed across threads safely.
    """

    keyframe_id: int
    frame_index: int
    timestamp: float
    poses: dict[int, Se3Pose]
    points: np.ndarray
    colors: np.ndarray
    image: np.ndarray
    roles: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = _frozen(self.points, np.float64, (-1, 3))
        cols = _frozen(self.colors, np.float64, (-1, 3))
        if len(pts) != len(cols):
            raise ValueError("points and colors differ in length")
        if not np.isfinite(pts).all():
            raise ValueError("packet points must be finite")
        if len(cols) and (cols.min() < 0 or cols.max() > 1):
            raise ValueError("packet colors must lie in [0, 1]")
        roles = np.zeros(len(pts), dtype=np.int64) if self.roles is None else self.roles
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", cols)
        object.__setattr__(self, "roles", _frozen(roles, np.int64, (-1,)))
        object.__setattr__(self, "image", _frozen(self.image, np.float64, np.shape(self.image)))
        object.__setattr__(self, "poses", dict(self.poses))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def pose(self) -> Se3Pose:
        return self.poses[self.keyframe_id]


def reduced_density(packet: KeyframePacket, rng: np.random.Generator, tracked_fraction: float = 0.5,
                    keep_extra: bool = False) -> KeyframePacket:
    """Sparser copy of a packet for the initialization-density ablation.

    Keeps a random ``tracked_fraction`` of the tracked points, drops the extra
    untracked points unless ``keep_extra``, and keeps every interpolated point.
    """
    if not 0.0 <= tracked_fraction <= 1.0:
        raise ValueError("tracked_fraction must lie in [0, 1]")
    roles = packet.roles
    keep = (roles == INTERPOLATED) | ((roles == TRACKED) & (rng.random(len(roles)) < tracked_fraction))
    if keep_extra:
        keep |= roles == EXTRA_UNTRACKED
    return KeyframePacket(packet.keyframe_id, packet.frame_index, packet.timestamp, packet.poses,
                          packet.points[keep], packet.colors[keep], packet.image, roles[keep])
