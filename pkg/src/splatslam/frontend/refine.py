"""Window refinement alternating between point inverse depths and keyframe poses.

Every point hosted in a window keyframe is compared against every other
window keyframe with the same affine-compensated residual used for tracking.
Depth updates run a 1-D Gauss-Newton per point; pose updates run a joint
Gauss-Newton over all keyframes except the first, which fixes the gauge.
Only tracked points contribute to the pose system.  Affine parameters stay
fixed during refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergedRefinement
from ..geometry import PinholeCamera, Se3Pose, bearing_many, sample_bilinear_many
from ..selection import TRACKED
from .frames import KeyframeWindow
from .residual import (HUBER_THRESHOLD, affine_ratio, huber, huber_weight, inv_depth_rows, pixel_jacobian,
                       residuals, warp)


@dataclass(frozen=True)
class RefineConfig:
    rounds: int = 2
    depth_iterations: int = 3
    pose_iterations: int = 2
    huber: float = HUBER_THRESHOLD
    margin: float = 1.0
    max_halvings: int = 8
    min_inv_depth: float = 1e-4
    refine_extra: bool = True

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


@dataclass
class RefineReport:
    window: KeyframeWindow
    initial_energy: float
    round_energies: list[float] = field(default_factory=list)

    @property
    def final_energy(self) -> float:
        return self.round_energies[-1] if self.round_energies else self.initial_energy


class _WindowProblem:
    def __init__(self, window: KeyframeWindow, cam: PinholeCamera, cfg: RefineConfig):
        self.kfs = list(window)
        self.cam = cam
        self.cfg = cfg
        self.invalid_cost = float(huber(np.array([1.0]), cfg.huber)[0])
        self.bearings = [bearing_many(kf.pixels, cam) for kf in self.kfs]
        self.host = []
        for kf in self.kfs:
            vals, _ = sample_bilinear_many(kf.frame.gray, kf.pixels[:, 0], kf.pixels[:, 1])
            self.host.append(vals)
        self.tracked = [kf.roles == TRACKED for kf in self.kfs]
        self.ratio = {(h, t): affine_ratio(self.kfs[h].calib, self.kfs[t].calib)
                      for h in range(len(self.kfs)) for t in range(len(self.kfs)) if h != t}
        self.pairs = list(self.ratio)
        self.active: dict[tuple[int, int], np.ndarray] = {}

    def activate(self, poses: list[Se3Pose], rhos: list[np.ndarray]) -> None:
        """Observations used for the whole refinement: those landing ``margin`` inside the target."""
        for h, t in self.pairs:
            q, uv, front = warp(self.bearings[h], rhos[h], poses[t].inverse() @ poses[h], self.cam)
            self.active[h, t] = self._residuals(h, t, uv, front, self.cfg.margin)[3]

    def _residuals(self, h, t, uv, front, margin, idx=None):
        host = self.host[h] if idx is None else self.host[h][idx]
        return residuals(host, self.kfs[t].frame.stacks[0], uv, front, self.ratio[h, t],
                         self.kfs[h].calib.affine_b, self.kfs[t].calib.affine_b, margin)

    def pair_terms(self, h, t, poses, rho, idx=None):
        """Residual terms of host ``h`` points (optionally the subset ``idx``) seen from ``t``."""
        pose_th = poses[t].inverse() @ poses[h]
        bearings = self.bearings[h] if idx is None else self.bearings[h][idx]
        q, uv, front = warp(bearings, rho, pose_th, self.cam)
        r, gx, gy, valid = self._residuals(h, t, uv, front, 0.0, idx)
        valid &= self.active[h, t] if idx is None else self.active[h, t][idx]
        return pose_th, q, r, gx, gy, valid

    def point_energies(self, h: int, poses, rho, idx=None) -> np.ndarray:
        e = np.zeros(len(rho))
        for t in range(len(self.kfs)):
            if t == h:
                continue
            _, _, r, _, _, valid = self.pair_terms(h, t, poses, rho, idx)
            act = self.active[h, t] if idx is None else self.active[h, t][idx]
            e += np.where(valid, huber(r, self.cfg.huber), np.where(act, self.invalid_cost, 0.0))
        return e

    def energy(self, poses, rhos) -> float:
        return float(sum(self.point_energies(h, poses, rhos[h]).sum() for h in range(len(self.kfs))))

    def depth_pass(self, poses, rhos) -> list[np.ndarray]:
        cfg = self.cfg
        out = []
        for h in range(len(self.kfs)):
            rho = rhos[h]
            n = len(rho)
            Hd = np.zeros(n)
            gd = np.zeros(n)
            for t in range(len(self.kfs)):
                if t == h:
                    continue
                pose_th, q, r, gx, gy, valid = self.pair_terms(h, t, poses, rho)
                J = np.zeros(n)
                J[valid] = inv_depth_rows(q[valid], gx[valid], gy[valid], pose_th, self.cam)
                w = huber_weight(r, cfg.huber) * valid
                Hd += w * J * J
                gd += w * J * r
            movable = Hd > 0
            if not cfg.refine_extra:
                movable &= self.tracked[h]
            delta = np.where(movable, -gd / np.where(movable, Hd, 1.0), 0.0)
            e0 = self.point_energies(h, poses, rho)
            new = rho.copy()
            step = 1.0
            pending = np.flatnonzero(movable & (delta != 0))
            for _ in range(cfg.max_halvings + 1):
                if len(pending) == 0:
                    break
                cand = rho[pending] + step * delta[pending]
                positive = cand > cfg.min_inv_depth
                e1 = self.point_energies(h, poses, np.where(positive, cand, rho[pending]), pending)
                ok = positive & (e1 <= e0[pending])
                new[pending[ok]] = cand[ok]
                pending = pending[~ok]
                step *= 0.5
            out.append(new)
        return out

    def pose_pass(self, poses, rhos) -> list[Se3Pose]:
        k = len(self.kfs)
        if k < 2:
            return poses
        dim = 6 * (k - 1)
        H = np.zeros((dim, dim))
        g = np.zeros(dim)
        for h, t in self.pairs:
            pose_th, q, r, gx, gy, valid = self.pair_terms(h, t, poses, rhos[h])
            use = valid & self.tracked[h]
            if not use.any():
                continue
            rho = rhos[h][use]
            c, X_t = pixel_jacobian(q[use], rho, gx[use], gy[use], self.cam)
            X_h = self.bearings[h][use] / rho[:, None]
            J = np.zeros((int(use.sum()), dim))
            if h > 0:
                ch = c @ pose_th.R
                J[:, 6 * (h - 1):6 * h] = np.concatenate([ch, np.cross(X_h, ch)], axis=1)
            if t > 0:
                J[:, 6 * (t - 1):6 * t] = -np.concatenate([c, np.cross(X_t, c)], axis=1)
            w = huber_weight(r[use], self.cfg.huber)
            H += (J * w[:, None]).T @ J
            g += J.T @ (w * r[use])
        diag = np.diag(H).copy()
        if not np.any(diag > 0):
            return poses
        H += np.diag(1e-9 * np.maximum(diag, 1e-12 * diag.max()))
        delta = -np.linalg.solve(H, g)
        e0 = self.energy(poses, rhos)
        scale = 1.0
        for _ in range(self.cfg.max_halvings + 1):
            d = scale * delta
            cand = [poses[0]] + [poses[i] @ Se3Pose.exp(d[6 * (i - 1):6 * i]) for i in range(1, k)]
            if self.energy(cand, rhos) <= e0:
                return cand
            scale *= 0.5
        return poses


def refine_window(window: KeyframeWindow, cam: PinholeCamera, cfg: RefineConfig = RefineConfig()) -> RefineReport:
    """Refine point depths and keyframe poses in place.

    Raises :class:`DivergedRefinement` after restoring the original state if
    the window energy rises in two consecutive rounds.
    """
    prob = _WindowProblem(window, cam, cfg)
    poses = [kf.pose for kf in prob.kfs]
    rhos = [kf.inv_depth.copy() for kf in prob.kfs]
    saved = (list(poses), [r.copy() for r in rhos])
    prob.activate(poses, rhos)
    e_prev = prob.energy(poses, rhos)
    report = RefineReport(window, e_prev)
    rises = 0
    for _ in range(cfg.rounds):
        for _ in range(cfg.depth_iterations):
            rhos = prob.depth_pass(poses, rhos)
        for _ in range(cfg.pose_iterations):
            poses = prob.pose_pass(poses, rhos)
        e = prob.energy(poses, rhos)
        report.round_energies.append(e)
        rises = rises + 1 if e > e_prev else 0
        if rises >= 2 or not math.isfinite(e):
            poses, rhos = saved
            _store(prob.kfs, poses, rhos)
            raise DivergedRefinement(f"window energy rose in consecutive rounds ({e_prev:.4g} -> {e:.4g})")
        e_prev = e
    _store(prob.kfs, poses, rhos)
    return report


def _store(kfs, poses, rhos) -> None:
    for kf, pose, rho in zip(kfs, poses, rhos):
        kf.pose = pose
        kf.inv_depth = rho
