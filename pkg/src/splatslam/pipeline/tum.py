"""Reader for TUM RGB-D style sequence directories."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import MissingIndexFile, UnparseableLine, UnsortedTimestamps
from ..geometry import PinholeCamera, Se3Pose
from ..images import load_png

ASSOCIATION_WINDOW = 0.02  # seconds

# Default intrinsics of the TUM tooling for 640x480 Kinect images; rescaled for other sizes.
TUM_DEFAULT = {"fx": 525.0, "fy": 525.0, "cx": 319.5, "cy": 239.5, "width": 640, "height": 480}


@dataclass
class Sequence:
    root: Path
    timestamps: np.ndarray
    image_paths: list[Path]
    cam: PinholeCamera
    # Ground-truth pose associated to every frame, or None where none lies within the window.
    groundtruth: list[Se3Pose | None] = field(default_factory=list)
    gt_trajectory: list[tuple[float, Se3Pose]] = field(default_factory=list)
    depths: np.ndarray | None = None
    # Per-frame exposure times when the directory provides them.
    exposures: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.image_paths)

    def image(self, i: int) -> np.ndarray:
        return load_png(self.image_paths[i])

    def depth(self, i: int) -> np.ndarray | None:
        return None if self.depths is None else self.depths[i]

    @property
    def has_groundtruth(self) -> bool:
        return bool(self.gt_trajectory)


def _data_lines(path: Path):
    for no, raw in enumerate(path.read_text().splitlines(), start=1):
        text = raw.strip()
        if text and not text.startswith("#"):
            yield no, text


def read_rgb_index(path: Path) -> list[tuple[float, str, int]]:
    out = []
    for no, text in _data_lines(path):
        parts = text.split()
        if len(parts) != 2:
            raise UnparseableLine(path, no, text)
        try:
            ts = float(parts[0])
        except ValueError:
            raise UnparseableLine(path, no, text) from None
        out.append((ts, parts[1], no))
    return out


def read_trajectory(path: str | Path) -> list[tuple[float, Se3Pose]]:
    """Parse ``timestamp tx ty tz qx qy qz qw`` lines."""
    path = Path(path)
    out = []
    for no, text in _data_lines(path):
        parts = text.split()
        if len(parts) != 8:
            raise UnparseableLine(path, no, text)
        try:
            vals = [float(p) for p in parts]
            pose = Se3Pose.from_tum(vals[1:])
        except ValueError:
            raise UnparseableLine(path, no, text) from None
        out.append((vals[0], pose))
    return out


def write_trajectory(path: str | Path, trajectory: list[tuple[float, Se3Pose]]) -> None:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    lines += [f"{ts:.6f} " + " ".join(f"{v:.9f}" for v in pose.to_tum()) for ts, pose in trajectory]
    Path(path).write_text("\n".join(lines) + "\n")


def associate(times: np.ndarray, ref_times: np.ndarray, window: float = ASSOCIATION_WINDOW) -> np.ndarray:
    """Index of the nearest reference time for each time, or -1 if none lies within ``window``."""
    times = np.asarray(times, dtype=np.float64)
    ref_times = np.asarray(ref_times, dtype=np.float64)
    if len(ref_times) == 0:
        return np.full(len(times), -1, dtype=np.int64)
    order = np.argsort(ref_times, kind="stable")
    sorted_ref = ref_times[order]
    pos = np.searchsorted(sorted_ref, times)
    lo = np.clip(pos - 1, 0, len(sorted_ref) - 1)
    hi = np.clip(pos, 0, len(sorted_ref) - 1)
    pick = np.where(np.abs(sorted_ref[hi] - times) < np.abs(sorted_ref[lo] - times), hi, lo)
    ok = np.abs(sorted_ref[pick] - times) <= window
    return np.where(ok, order[pick], -1)


def _camera(root: Path, first_image: Path | None) -> PinholeCamera:
    cam_file = root / "camera.json"
    if cam_file.exists():
        return PinholeCamera.from_dict(json.loads(cam_file.read_text()))
    d = dict(TUM_DEFAULT)
    if first_image is not None and first_image.exists():
        h, w = load_png(first_image, "L").shape
        s = w / d["width"]
        d = {"fx": d["fx"] * s, "fy": d["fy"] * s, "cx": (d["cx"] + 0.5) * s - 0.5,
             "cy": (d["cy"] + 0.5) * s - 0.5, "width": w, "height": h}
    return PinholeCamera.from_dict(d)


def load_tum_sequence(root: str | Path, sort: bool = False, cam: PinholeCamera | None = None) -> Sequence:
    """Load ``rgb.txt`` (and ``groundtruth.txt`` when present) from a sequence directory.

    Out-of-order timestamps raise :class:`UnsortedTimestamps` unless ``sort``
    is set.  Intrinsics come from ``cam``, else ``camera.json``, else the TUM
    defaults scaled to the image width.
    """
    root = Path(root)
    index = root / "rgb.txt"
    if not index.exists():
        raise MissingIndexFile(f"{index} not found")
    entries = read_rgb_index(index)
    for (t0, _, _), (t1, _, no) in zip(entries, entries[1:]):
        if t1 <= t0 and not sort:
            raise UnsortedTimestamps(f"{index}:{no}: timestamp {t1} does not follow {t0}")
    order = sorted(range(len(entries)), key=lambda k: entries[k][0]) if sort else list(range(len(entries)))
    entries = [entries[k] for k in order]
    times = np.array([e[0] for e in entries], dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise UnsortedTimestamps(f"{index}: duplicate timestamps")
    paths = [root / e[1] for e in entries]
    if cam is None:
        cam = _camera(root, paths[0] if paths else None)
    gt_traj: list[tuple[float, Se3Pose]] = []
    gt_file = root / "groundtruth.txt"
    if gt_file.exists():
        gt_traj = read_trajectory(gt_file)
    match = associate(times, np.array([t for t, _ in gt_traj]))
    groundtruth = [gt_traj[m][1] if m >= 0 else None for m in match]
    depths = None
    depth_file = root / "depth.npy"
    if depth_file.exists():
        arr = np.load(depth_file)
        if arr.ndim == 3 and len(arr) == len(entries):
            depths = arr[np.array(order, dtype=np.int64)] if len(order) else arr
    return Sequence(root, times, paths, cam, groundtruth, gt_traj, depths, _exposures(root, order))


def _exposures(root: Path, order: list[int]) -> np.ndarray | None:
    """Exposures from a ``times.txt`` with ``id timestamp exposure`` lines, one per frame."""
    path = root / "times.txt"
    if not path.exists():
        return None
    vals = []
    for no, text in _data_lines(path):
        parts = text.split()
        if len(parts) < 3:
            raise UnparseableLine(path, no, text)
        try:
            vals.append(float(parts[2]))
        except ValueError:
            raise UnparseableLine(path, no, text) from None
    if len(vals) != len(order) or min(vals, default=1.0) <= 0:
        return None
    return np.asarray(vals)[np.array(order, dtype=np.int64)]
