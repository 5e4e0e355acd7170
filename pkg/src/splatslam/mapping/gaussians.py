"""Gaussian map storage, seeding from keyframe point clouds, and PLY persistence."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..errors import MalformedPly, VersionMismatch
from ..geometry import quat_to_matrix

PLY_VERSION = 1
PLY_PROPERTIES = ("x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3",
                  "scale_0", "scale_1", "scale_2", "opacity", "red", "green", "blue")
BYTES_PER_GAUSSIAN = 4 * len(PLY_PROPERTIES)

_revision = itertools.count(1)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class Gaussian3D:
    location: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    log_scale: np.ndarray = field(default_factory=lambda: np.zeros(3))
    opacity_logit: float = 0.0
    color: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


def covariance_3d(g: Gaussian3D) -> np.ndarray:
    """``R diag(exp(log_scale))^2 R^T``."""
    R = quat_to_matrix(np.asarray(g.rotation, dtype=np.float64) / np.linalg.norm(g.rotation))
    s2 = np.exp(2.0 * np.asarray(g.log_scale, dtype=np.float64))
    return (R * s2) @ R.T


def covariances(quats: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    q = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    R = quat_to_matrix(q)
    s2 = np.exp(2.0 * log_scales)
    return np.einsum("nij,nj,nkj->nik", R, s2, R)


class GaussianMap:
    """Structure-of-arrays Gaussian map with densification accumulators.

    ``revision`` changes on every mutation; renders remember it so that a
    backward pass against a different map state can be rejected.
    """

    def __init__(self, means=None, quats=None, log_scales=None, opacity_logits=None, colors=None):
        n = 0 if means is None else len(means)
        self.means = np.zeros((0, 3)) if means is None else np.array(means, dtype=np.float64).reshape(n, 3)
        self.quats = (np.tile([1.0, 0, 0, 0], (n, 1)) if quats is None
                      else np.array(quats, dtype=np.float64).reshape(n, 4))
        self.log_scales = (np.zeros((n, 3)) if log_scales is None
                           else np.array(log_scales, dtype=np.float64).reshape(n, 3))
        self.opacity_logits = (np.zeros(n) if opacity_logits is None
                               else np.array(opacity_logits, dtype=np.float64).reshape(n))
        self.colors = (np.full((n, 3), 0.5) if colors is None
                       else np.array(colors, dtype=np.float64).reshape(n, 3))
        self.reset_accumulators()
        self.revision = next(_revision)

    def __len__(self) -> int:
        return len(self.means)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def touch(self) -> None:
        self.revision = next(_revision)

    def reset_accumulators(self) -> None:
        n = len(self.means)
        self.abs_grad_accum = np.zeros(n)
        self.signed_grad_accum = np.zeros((n, 2))
        self.grad_count = np.zeros(n, dtype=np.int64)

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.means[i].copy(), self.quats[i].copy(), self.log_scales[i].copy(),
                          float(self.opacity_logits[i]), self.colors[i].copy())

    def snapshot(self) -> GaussianMap:
        """Independent copy; shares the revision so renders of either are interchangeable."""
        out = GaussianMap(self.means, self.quats, self.log_scales, self.opacity_logits, self.colors)
        out.abs_grad_accum = self.abs_grad_accum.copy()
        out.signed_grad_accum = self.signed_grad_accum.copy()
        out.grad_count = self.grad_count.copy()
        out.revision = self.revision
        return out

    def append(self, means, quats, log_scales, opacity_logits, colors) -> None:
        self.means = np.concatenate([self.means, np.asarray(means, dtype=np.float64).reshape(-1, 3)])
        self.quats = np.concatenate([self.quats, np.asarray(quats, dtype=np.float64).reshape(-1, 4)])
        self.log_scales = np.concatenate([self.log_scales, np.asarray(log_scales, dtype=np.float64).reshape(-1, 3)])
        self.opacity_logits = np.concatenate([self.opacity_logits, np.asarray(opacity_logits, dtype=np.float64).reshape(-1)])
        self.colors = np.concatenate([self.colors, np.asarray(colors, dtype=np.float64).reshape(-1, 3)])
        k = len(self.means) - len(self.abs_grad_accum)
        self.abs_grad_accum = np.concatenate([self.abs_grad_accum, np.zeros(k)])
        self.signed_grad_accum = np.concatenate([self.signed_grad_accum, np.zeros((k, 2))])
        self.grad_count = np.concatenate([self.grad_count, np.zeros(k, dtype=np.int64)])
        self.touch()

    def select(self, index: np.ndarray) -> None:
        """Keep (and reorder to) the Gaussians at ``index``."""
        for name in ("means", "quats", "log_scales", "opacity_logits", "colors",
                     "abs_grad_accum", "signed_grad_accum", "grad_count"):
            setattr(self, name, getattr(self, name)[index])
        self.touch()

    def size_bytes(self) -> int:
        return BYTES_PER_GAUSSIAN * len(self) + len(ply_header(len(self)))


@dataclass(frozen=True)
class InitConfig:
    initial_opacity: float = 0.5
    neighbors: int = 3
    # Used when a packet holds a single point.
    fallback_scale: float = 0.01
    min_scale: float = 1e-7
    # Dedup radius as a fraction of the local initial scale.
    dedup_fraction: float = 0.5


def init_from_packet(gmap: GaussianMap, packet, cfg: InitConfig = InitConfig()) -> int:
    """Seed Gaussians from a packet's colored point cloud; returns the number added.

    Points within ``dedup_fraction`` of their own initial scale from an
    existing Gaussian are skipped, so resending a packet adds nothing.
    """
    pts = np.asarray(packet.points, dtype=np.float64).reshape(-1, 3)
    cols = np.asarray(packet.colors, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return 0
    if len(pts) == 1:
        scale = np.array([cfg.fallback_scale])
    else:
        k = min(cfg.neighbors, len(pts) - 1)
        d, _ = cKDTree(pts).query(pts, k=k + 1)
        scale = np.asarray(d, dtype=np.float64).reshape(len(pts), -1)[:, 1:].mean(axis=1)
    scale = np.maximum(scale, cfg.min_scale)
    keep = np.ones(len(pts), dtype=bool)
    if len(gmap):
        nearest, _ = cKDTree(gmap.means).query(pts, k=1)
        keep = nearest >= cfg.dedup_fraction * scale
    n = int(keep.sum())
    if n == 0:
        return 0
    gmap.append(pts[keep], np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
                np.repeat(np.log(scale[keep])[:, None], 3, axis=1),
                np.full(n, float(logit(cfg.initial_opacity))), np.clip(cols[keep], 0.0, 1.0))
    return n


def ply_header(count: int) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0",
             f"comment splatslam_map_version {PLY_VERSION}", f"element vertex {count}"]
    lines += [f"property float {p}" for p in PLY_PROPERTIES]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def export_ply(gmap: GaussianMap, path: str | Path, config: dict | None = None) -> int:
    """Write the map as binary PLY; returns the file size in bytes.

    Stored fields are the raw parameters (normalized quaternion, log scale,
    opacity logit, RGB).  ``config`` is written to a ``.json`` sidecar.
    """
    path = Path(path)
    q = gmap.quats / np.linalg.norm(gmap.quats, axis=1, keepdims=True) if len(gmap) else gmap.quats
    data = np.concatenate([gmap.means, q, gmap.log_scales, gmap.opacity_logits[:, None], gmap.colors], axis=1)
    body = data.astype("<f4").tobytes()
    header = ply_header(len(gmap))
    path.write_bytes(header + body)
    if config is not None:
        path.with_suffix(".json").write_text(json.dumps(config, indent=2, sort_keys=True))
    return len(header) + len(body)


def import_ply(path: str | Path) -> GaussianMap:
    raw = Path(path).read_bytes()
    marker = b"end_header\n"
    end = raw.find(marker)
    if not raw.startswith(b"ply\n") or end < 0:
        raise MalformedPly(f"{path}: missing PLY header")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(marker):]
    count = None
    props = []
    version = None
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1:2] != ["binary_little_endian"]:
            raise MalformedPly(f"{path}: unsupported format {line!r}")
        if parts[0] == "comment" and len(parts) == 3 and parts[1] == "splatslam_map_version":
            version = int(parts[2])
        elif parts[0] == "element":
            if parts[1] != "vertex" or count is not None:
                raise MalformedPly(f"{path}: unexpected element {line!r}")
            count = int(parts[2])
        elif parts[0] == "property":
            if parts[1] != "float":
                raise MalformedPly(f"{path}: property {parts[-1]} is not float32")
            props.append(parts[2])
    if version is None:
        raise MalformedPly(f"{path}: not a splatslam map (no version comment)")
    if version != PLY_VERSION:
        raise VersionMismatch(f"{path}: map version {version}, expected {PLY_VERSION}")
    if count is None or tuple(props) != PLY_PROPERTIES:
        raise MalformedPly(f"{path}: unexpected property layout {props}")
    if len(body) != count * BYTES_PER_GAUSSIAN:
        raise MalformedPly(f"{path}: body holds {len(body)} bytes, expected {count * BYTES_PER_GAUSSIAN}")
    data = np.frombuffer(body, dtype="<f4").reshape(count, len(PLY_PROPERTIES)).astype(np.float64)
    return GaussianMap(data[:, 0:3], data[:, 3:7], data[:, 7:10], data[:, 10], data[:, 11:14])


def export_point_cloud_ply(points: np.ndarray, colors: np.ndarray, path: str | Path) -> None:
    """Plain colored point cloud (x, y, z float, uchar rgb) readable by common viewers."""
    n = len(points)
    header = "\n".join(["ply", "format binary_little_endian 1.0", f"element vertex {n}",
                        "property float x", "property float y", "property float z",
                        "property uchar red", "property uchar green", "property uchar blue",
                        "end_header"]) + "\n"
    rec = np.zeros(n, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                             ("r", "u1"), ("g", "u1"), ("b", "u1")])
    rec["x"], rec["y"], rec["z"] = np.asarray(points, dtype=np.float64).T
    c = np.clip(np.rint(np.asarray(colors) * 255), 0, 255).astype(np.uint8)
    rec["r"], rec["g"], rec["b"] = c.T
    Path(path).write_bytes(header.encode("ascii") + rec.tobytes())
