"""Rigid transforms, pinhole projection, photometric calibration and image sampling.

Conventions used throughout the package:

* Quaternions are stored scalar-first ``(w, x, y, z)``.
* A keyframe or frame pose is camera-to-world: ``x_world = R @ x_cam + t``.
* Pixel ``(u, v)`` is ``(column, row)`` with pixel centers on integer coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth, NonPositiveInverseDepth, OutOfBounds

_SMALL_ANGLE = 1e-8


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of one quaternion ``(4,)`` or a batch ``(N, 4)``."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    # Shepperd's method; picks the largest diagonal term for stability.
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = quat_normalize(np.array(q))
    return q if q[0] >= 0 else -q


def skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def so3_exp_quat(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    if theta < _SMALL_ANGLE:
        return quat_normalize(np.array([1.0, 0.5 * omega[0], 0.5 * omega[1], 0.5 * omega[2]]))
    axis = omega / theta
    return np.concatenate([[math.cos(theta / 2)], math.sin(theta / 2) * axis])


@dataclass(frozen=True, eq=False)
class Se3Pose:
    """Rigid transform stored as a unit quaternion and a translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Se3Pose:
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> Se3Pose:
        T = np.asarray(T, dtype=np.float64)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> Se3Pose:
        return cls(matrix_to_quat(R), t)

    @classmethod
    def exp(cls, twist: np.ndarray) -> Se3Pose:
        """Exponential map of a twist ``(v, omega)``: translation part first."""
        twist = np.asarray(twist, dtype=np.float64)
        v, omega = twist[:3], twist[3:]
        theta = float(np.linalg.norm(omega))
        W = skew(omega)
        if theta < 1e-5:
            V = np.eye(3) + 0.5 * W + W @ W / 6.0
        else:
            V = (np.eye(3)
                 + (1 - math.cos(theta)) / theta**2 * W
                 + (theta - math.sin(theta)) / theta**3 * (W @ W))
        return cls(so3_exp_quat(omega), V @ v)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform a point ``(3,)`` or points ``(N, 3)``."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.translation

    def inverse(self) -> Se3Pose:
        q = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return Se3Pose(q, -(quat_to_matrix(q) @ self.translation))

    def compose(self, other: Se3Pose) -> Se3Pose:
        return compose(self, other)

    def __matmul__(self, other: Se3Pose) -> Se3Pose:
        return compose(self, other)

    def rotation_angle_to(self, other: Se3Pose) -> float:
        """Angle in radians of the rotation taking ``self`` to ``other``."""
        d = abs(float(np.dot(self.rotation, other.rotation)))
        return 2.0 * math.acos(min(1.0, d))

    def to_tum(self) -> tuple[float, ...]:
        """``(tx, ty, tz, qx, qy, qz, qw)`` as written in TUM trajectory files."""
        w, x, y, z = self.rotation
        return (*map(float, self.translation), float(x), float(y), float(z), float(w))

    @classmethod
    def from_tum(cls, values) -> Se3Pose:
        tx, ty, tz, qx, qy, qz, qw = (float(v) for v in values)
        return cls(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]))

    def __repr__(self) -> str:
        q = np.array2string(self.rotation, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"Se3Pose(q={q}, t={t})"


def compose(a: Se3Pose, b: Se3Pose) -> Se3Pose:
    """Pose applying ``b`` first, then ``a``."""
    return Se3Pose(quat_multiply(a.rotation, b.rotation), a.R @ b.translation + a.translation)


def invert(p: Se3Pose) -> Se3Pose:
    return p.inverse()


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def decimated(self, level: int) -> PinholeCamera:
        """Camera of an image decimated ``level`` times by keeping every other pixel."""
        f = 2.0**level
        w, h = self.width, self.height
        for _ in range(level):
            w, h = (w + 1) // 2, (h + 1) // 2
        return PinholeCamera(self.fx / f, self.fy / f, self.cx / f, self.cy / f, w, h)

    def averaged(self, level: int) -> PinholeCamera:
        """Camera of an image downsampled ``level`` times by 2x2 block averaging."""
        f = 2.0**level
        w, h = self.width, self.height
        for _ in range(level):
            w, h = w // 2, h // 2
        return PinholeCamera(self.fx / f, self.fy / f,
                             (self.cx + 0.5) / f - 0.5, (self.cy + 0.5) / f - 0.5, w, h)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> PinholeCamera:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class PhotometricCalib:
    """Exposure time and affine brightness parameters of one frame."""

    exposure: float = 1.0
    affine_a: float = 1.0
    affine_b: float = 0.0

    def __post_init__(self):
        if not self.exposure > 0:
            raise ValueError("exposure must be positive")
        if not self.affine_a > 0:
            raise ValueError("affine gain must be positive")


def project(point: np.ndarray, cam: PinholeCamera) -> np.ndarray:
    x, y, z = (float(c) for c in point)
    if z <= 0:
        raise NonPositiveDepth(f"point depth {z} is not positive")
    return np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])


def backproject(pixel: np.ndarray, inv_depth: float, cam: PinholeCamera) -> np.ndarray:
    if not inv_depth > 0:
        raise NonPositiveInverseDepth(f"inverse depth {inv_depth} is not positive")
    u, v = float(pixel[0]), float(pixel[1])
    z = 1.0 / inv_depth
    return np.array([(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z])


def project_many(points: np.ndarray, cam: PinholeCamera) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns ``(uv (N, 2), z > 0 mask)``.

    Pixels of points with non-positive depth are NaN.
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    ok = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        iz = np.where(ok, 1.0 / z, np.nan)
    uv = np.stack([cam.fx * points[:, 0] * iz + cam.cx, cam.fy * points[:, 1] * iz + cam.cy], axis=1)
    return uv, ok


def backproject_many(pixels: np.ndarray, inv_depth: np.ndarray, cam: PinholeCamera) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    inv_depth = np.asarray(inv_depth, dtype=np.float64)
    if np.any(inv_depth <= 0):
        raise NonPositiveInverseDepth("inverse depths must be positive")
    z = 1.0 / inv_depth
    return np.stack([(pixels[:, 0] - cam.cx) / cam.fx * z,
                     (pixels[:, 1] - cam.cy) / cam.fy * z, z], axis=1)


def bearing_many(pixels: np.ndarray, cam: PinholeCamera) -> np.ndarray:
    """Rays ``K^-1 [u, v, 1]`` scaled to unit depth."""
    pixels = np.asarray(pixels, dtype=np.float64)
    return np.stack([(pixels[:, 0] - cam.cx) / cam.fx,
                     (pixels[:, 1] - cam.cy) / cam.fy, np.ones(len(pixels))], axis=1)


def sample_bilinear(img: np.ndarray, subpixel) -> float:
    """Bilinear interpolation of a single-channel image at ``(u, v)``."""
    rows, cols = img.shape[:2]
    u, v = float(subpixel[0]), float(subpixel[1])
    if not (0.0 <= u <= cols - 1 and 0.0 <= v <= rows - 1):
        raise OutOfBounds(f"subpixel ({u}, {v}) outside a {cols}x{rows} image")
    u0 = min(int(math.floor(u)), cols - 2) if cols > 1 else 0
    v0 = min(int(math.floor(v)), rows - 2) if rows > 1 else 0
    du, dv = u - u0, v - v0
    u1 = min(u0 + 1, cols - 1)
    v1 = min(v0 + 1, rows - 1)
    top = (1 - du) * img[v0, u0] + du * img[v0, u1]
    bot = (1 - du) * img[v1, u0] + du * img[v1, u1]
    return float((1 - dv) * top + dv * bot)


def sample_bilinear_many(img: np.ndarray, u: np.ndarray, v: np.ndarray, margin: float = 0.0):
    """Vectorized bilinear sampling.

    Returns ``(values, valid)`` where ``valid`` marks samples at least
    ``margin`` pixels inside ``[0, cols-1] x [0, rows-1]``.  Invalid samples
    read 0.  ``img`` may carry trailing channels.
    """
    rows, cols = img.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    valid = ((u >= margin) & (u <= cols - 1 - margin) & (v >= margin) & (v <= rows - 1 - margin)
             & np.isfinite(u) & np.isfinite(v))
    uc = np.where(valid, u, 0.0)
    vc = np.where(valid, v, 0.0)
    u0 = np.clip(np.floor(uc).astype(np.int64), 0, max(cols - 2, 0))
    v0 = np.clip(np.floor(vc).astype(np.int64), 0, max(rows - 2, 0))
    du = uc - u0
    dv = vc - v0
    u1 = np.minimum(u0 + 1, cols - 1)
    v1 = np.minimum(v0 + 1, rows - 1)
    if img.ndim == 3:
        du = du[:, None]
        dv = dv[:, None]
    top = (1 - du) * img[v0, u0] + du * img[v0, u1]
    bot = (1 - du) * img[v1, u0] + du * img[v1, u1]
    out = (1 - dv) * top + dv * bot
    mask = valid if img.ndim == 2 else valid[:, None]
    return np.where(mask, out, 0.0), valid
