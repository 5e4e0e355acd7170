"""EWA projection of 3D Gaussians to screen-space splats, and its adjoint."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..geometry import PinholeCamera, Se3Pose


@dataclass(frozen=True)
class RasterConfig:
    tile: int = 16
    z_near: float = 0.01
    alpha_cap: float = 0.99
    min_transmittance: float = 1e-4
    cov_floor: float = 0.3
    # Splat support in standard deviations; pixels beyond it are skipped.
    extent_sigma: float = 3.0
    # "exact" gives capped contributions no opacity or shape gradient. "straight_through" ignores the
    # cap in the backward pass, as the reference 3DGS kernels do, so a saturated splat can still fade.
    cap_gradient: str = "exact"

    def __post_init__(self):
        if self.cap_gradient not in ("exact", "straight_through"):
            raise ValueError("cap_gradient must be 'exact' or 'straight_through'")
        if self.tile < 1:
            raise ValueError("tile must be positive")
        if not 0 < self.alpha_cap < 1:
            raise ValueError("alpha_cap must lie in (0, 1)")

    @property
    def power_cutoff(self) -> float:
        return -0.5 * self.extent_sigma**2


@dataclass(frozen=True)
class SplatProjection:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    alpha_peak: float


@dataclass
class ProjectedSplats:
    """Batched projection of a whole map; rows of culled Gaussians are unused."""

    visible: np.ndarray  # (N,) bool
    mean2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 3) packed (xx, xy, yy) including the floor
    conic: np.ndarray  # (N, 3) packed inverse covariance (a, b, c)
    depth: np.ndarray  # (N,)
    radius: np.ndarray  # (N, 2) half extents of the support box in pixels


def world_to_camera(pose: Se3Pose) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation mapping world points into the camera frame of a camera-to-world pose."""
    Rcw = pose.R.T
    return np.ascontiguousarray(Rcw), -Rcw @ pose.translation


@njit(cache=True)
def _rotation(q, R):
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    w, x, y, z = q[0] / n, q[1] / n, q[2] / n, q[3] / n
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)
    return n


@njit(cache=True)
def _camera_cov(q, log_s, Rcw, R, M, Sc):
    """Fill ``R``, ``M = Rcw R diag(s)`` and the camera-frame covariance ``Sc = M M^T``."""
    n = _rotation(q, R)
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += Rcw[i, k] * R[k, j]
            M[i, j] = acc * math.exp(log_s[j])
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += M[i, k] * M[j, k]
            Sc[i, j] = acc
    return n


@njit(cache=True)
def project_kernel(means, quats, log_scales, Rcw, tcw, fx, fy, cx, cy, width, height,
                   z_near, cov_floor, extent_sigma):
    n = means.shape[0]
    visible = np.zeros(n, dtype=np.bool_)
    mean2d = np.zeros((n, 2))
    cov2d = np.zeros((n, 3))
    conic = np.zeros((n, 3))
    depth = np.zeros(n)
    radius = np.zeros((n, 2))
    R = np.empty((3, 3))
    M = np.empty((3, 3))
    Sc = np.empty((3, 3))
    for g in range(n):
        p0 = Rcw[0, 0] * means[g, 0] + Rcw[0, 1] * means[g, 1] + Rcw[0, 2] * means[g, 2] + tcw[0]
        p1 = Rcw[1, 0] * means[g, 0] + Rcw[1, 1] * means[g, 1] + Rcw[1, 2] * means[g, 2] + tcw[1]
        p2 = Rcw[2, 0] * means[g, 0] + Rcw[2, 1] * means[g, 1] + Rcw[2, 2] * means[g, 2] + tcw[2]
        depth[g] = p2
        if not p2 > z_near:
            continue
        _camera_cov(quats[g], log_scales[g], Rcw, R, M, Sc)
        j00 = fx / p2
        j02 = -fx * p0 / (p2 * p2)
        j11 = fy / p2
        j12 = -fy * p1 / (p2 * p2)
        # cov2d = J Sc J^T with J = [[j00, 0, j02], [0, j11, j12]].
        a0 = j00 * Sc[0, 0] + j02 * Sc[2, 0]
        a1 = j00 * Sc[0, 1] + j02 * Sc[2, 1]
        a2 = j00 * Sc[0, 2] + j02 * Sc[2, 2]
        b1 = j11 * Sc[1, 1] + j12 * Sc[2, 1]
        b2 = j11 * Sc[1, 2] + j12 * Sc[2, 2]
        A = a0 * j00 + a2 * j02 + cov_floor
        B = a1 * j11 + a2 * j12
        C = b1 * j11 + b2 * j12 + cov_floor
        det = A * C - B * B
        if not det > 0:
            continue
        mx = fx * p0 / p2 + cx
        my = fy * p1 / p2 + cy
        rx = extent_sigma * math.sqrt(A)
        ry = extent_sigma * math.sqrt(C)
        mean2d[g, 0] = mx
        mean2d[g, 1] = my
        cov2d[g, 0] = A
        cov2d[g, 1] = B
        cov2d[g, 2] = C
        conic[g, 0] = C / det
        conic[g, 1] = -B / det
        conic[g, 2] = A / det
        radius[g, 0] = rx
        radius[g, 1] = ry
        if mx + rx < 0 or my + ry < 0 or mx - rx > width - 1 or my - ry > height - 1:
            continue
        visible[g] = math.isfinite(conic[g, 0]) and math.isfinite(conic[g, 1]) and math.isfinite(conic[g, 2])
    return visible, mean2d, cov2d, conic, depth, radius


def project_splats(means, quats, log_scales, pose: Se3Pose, cam: PinholeCamera,
                   cfg: RasterConfig = RasterConfig()) -> ProjectedSplats:
    Rcw, tcw = world_to_camera(pose)
    out = project_kernel(np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 3),
                         np.ascontiguousarray(quats, dtype=np.float64).reshape(-1, 4),
                         np.ascontiguousarray(log_scales, dtype=np.float64).reshape(-1, 3),
                         Rcw, tcw, cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                         cfg.z_near, cfg.cov_floor, cfg.extent_sigma)
    return ProjectedSplats(*out)


def project_gaussian(g, view: Se3Pose, cam: PinholeCamera,
                     cfg: RasterConfig = RasterConfig()) -> SplatProjection | None:
    """Single-Gaussian projection; ``None`` when culled."""
    proj = project_splats(np.asarray(g.location)[None], np.asarray(g.rotation)[None],
                          np.asarray(g.log_scale)[None], view, cam, cfg)
    if not proj.visible[0]:
        return None
    A, B, C = proj.cov2d[0]
    return SplatProjection(proj.mean2d[0].copy(), np.array([[A, B], [B, C]]), float(proj.depth[0]),
                           np.asarray(g.color, dtype=np.float64), g.opacity)


@njit(cache=True)
def vjp_kernel(visible, conic, means, quats, log_scales, Rcw, tcw, fx, fy, g_mean2d, g_conic):
    """Chain screen-space gradients back through conic, EWA covariance and pinhole projection.

    ``g_conic`` holds derivatives w.r.t. ``(a, b, c)`` of the quadratic form
    ``a dx^2 + 2 b dx dy + c dy^2``, so ``b`` counts once.
    """
    n = means.shape[0]
    g_means = np.zeros((n, 3))
    g_quats = np.zeros((n, 4))
    g_logs = np.zeros((n, 3))
    R = np.empty((3, 3))
    M = np.empty((3, 3))
    Sc = np.empty((3, 3))
    J = np.zeros((2, 3))
    Gcov = np.empty((2, 2))
    Gsc = np.empty((3, 3))
    GJ = np.empty((2, 3))
    GM = np.empty((3, 3))
    G3M = np.empty((3, 3))
    GR = np.empty((3, 3))
    for g in range(n):
        if not visible[g]:
            continue
        a, b, c = conic[g, 0], conic[g, 1], conic[g, 2]
        ga, gb, gc = g_conic[g, 0], 0.5 * g_conic[g, 1], g_conic[g, 2]
        # Gcov = -Q GQ Q with Q = [[a, b], [b, c]] and GQ = [[ga, gb], [gb, gc]].
        t00 = a * ga + b * gb
        t01 = a * gb + b * gc
        t10 = b * ga + c * gb
        t11 = b * gb + c * gc
        Gcov[0, 0] = -(t00 * a + t01 * b)
        Gcov[0, 1] = -(t00 * b + t01 * c)
        Gcov[1, 0] = -(t10 * a + t11 * b)
        Gcov[1, 1] = -(t10 * b + t11 * c)

        m = means[g]
        p0 = Rcw[0, 0] * m[0] + Rcw[0, 1] * m[1] + Rcw[0, 2] * m[2] + tcw[0]
        p1 = Rcw[1, 0] * m[0] + Rcw[1, 1] * m[1] + Rcw[1, 2] * m[2] + tcw[1]
        p2 = Rcw[2, 0] * m[0] + Rcw[2, 1] * m[1] + Rcw[2, 2] * m[2] + tcw[2]
        qn = _camera_cov(quats[g], log_scales[g], Rcw, R, M, Sc)
        J[0, 0] = fx / p2
        J[0, 2] = -fx * p0 / (p2 * p2)
        J[1, 1] = fy / p2
        J[1, 2] = -fy * p1 / (p2 * p2)

        # Gsc = J^T Gcov J and GJ = 2 Gcov J Sc.
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for k in range(2):
                    for l in range(2):
                        acc += J[k, i] * Gcov[k, l] * J[l, j]
                Gsc[i, j] = acc
        for i in range(2):
            for j in range(3):
                acc = 0.0
                for k in range(2):
                    for l in range(3):
                        acc += Gcov[i, k] * J[k, l] * Sc[l, j]
                GJ[i, j] = 2.0 * acc

        # Sc = M M^T with M = Rcw R S, so dL/dM = 2 Gsc M.
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for k in range(3):
                    acc += Gsc[i, k] * M[k, j]
                GM[i, j] = 2.0 * acc
        # Pull back through Rcw: dL/d(R S) = Rcw^T GM.
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for k in range(3):
                    acc += Rcw[k, i] * GM[k, j]
                G3M[i, j] = acc
        for j in range(3):
            s = math.exp(log_scales[g, j])
            acc = 0.0
            for i in range(3):
                acc += G3M[i, j] * R[i, j]
                GR[i, j] = G3M[i, j] * s
            g_logs[g, j] = acc * s

        w, x, y, z = quats[g, 0] / qn, quats[g, 1] / qn, quats[g, 2] / qn, quats[g, 3] / qn
        dw = 2 * (-z * GR[0, 1] + y * GR[0, 2] + z * GR[1, 0] - x * GR[1, 2] - y * GR[2, 0] + x * GR[2, 1])
        dx = 2 * (y * GR[0, 1] + z * GR[0, 2] + y * GR[1, 0] - 2 * x * GR[1, 1] - w * GR[1, 2]
                  + z * GR[2, 0] + w * GR[2, 1] - 2 * x * GR[2, 2])
        dy = 2 * (-2 * y * GR[0, 0] + x * GR[0, 1] + w * GR[0, 2] + x * GR[1, 0] + z * GR[1, 2]
                  - w * GR[2, 0] + z * GR[2, 1] - 2 * y * GR[2, 2])
        dz = 2 * (-2 * z * GR[0, 0] - w * GR[0, 1] + x * GR[0, 2] + w * GR[1, 0] - 2 * z * GR[1, 1]
                  + y * GR[1, 2] + x * GR[2, 0] + y * GR[2, 1])
        # Project out the radial component introduced by normalization.
        dot = dw * w + dx * x + dy * y + dz * z
        g_quats[g, 0] = (dw - dot * w) / qn
        g_quats[g, 1] = (dx - dot * x) / qn
        g_quats[g, 2] = (dy - dot * y) / qn
        g_quats[g, 3] = (dz - dot * z) / qn

        gmx, gmy = g_mean2d[g, 0], g_mean2d[g, 1]
        iz = 1.0 / p2
        gp0 = gmx * fx * iz - GJ[0, 2] * fx * iz * iz
        gp1 = gmy * fy * iz - GJ[1, 2] * fy * iz * iz
        gp2 = (-gmx * fx * p0 * iz * iz - gmy * fy * p1 * iz * iz
               - GJ[0, 0] * fx * iz * iz + GJ[0, 2] * 2 * fx * p0 * iz * iz * iz
               - GJ[1, 1] * fy * iz * iz + GJ[1, 2] * 2 * fy * p1 * iz * iz * iz)
        for i in range(3):
            g_means[g, i] = Rcw[0, i] * gp0 + Rcw[1, i] * gp1 + Rcw[2, i] * gp2
    return g_means, g_quats, g_logs


def project_splats_vjp(proj: ProjectedSplats, means, quats, log_scales, pose: Se3Pose,
                       cam: PinholeCamera, g_mean2d: np.ndarray, g_conic: np.ndarray):
    """Pull screen-space gradients back to means, quaternions and log scales."""
    Rcw, tcw = world_to_camera(pose)
    return vjp_kernel(proj.visible, proj.conic, np.ascontiguousarray(means, dtype=np.float64),
                      np.ascontiguousarray(quats, dtype=np.float64),
                      np.ascontiguousarray(log_scales, dtype=np.float64), Rcw, tcw, cam.fx, cam.fy,
                      g_mean2d, g_conic)
