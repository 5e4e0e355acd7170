"""Ray-cast textured-plane scenes with exact poses and depth maps."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import PinholeCamera, Se3Pose, so3_exp_quat
from ..images import save_png


@dataclass(frozen=True)
class TexturedPlane:
    """Rectangle ``origin + s*axis_u + t*axis_v`` with |s| <= half_u and |t| <= half_v.

    Color at plane coordinates ``(s, t)`` is ``base + sum_k amp_k * sin(2 pi (fs_k s + ft_k t) + phase_k)``
    per channel; ``waves`` rows are ``(fs, ft, phase, amp_r, amp_g, amp_b)``.
    """

    origin: tuple[float, float, float]
    axis_u: tuple[float, float, float]
    axis_v: tuple[float, float, float]
    half_u: float = np.inf
    half_v: float = np.inf
    base: tuple[float, float, float] = (0.5, 0.5, 0.5)
    waves: tuple[tuple[float, ...], ...] = ()
    # Inside this radius around the origin the texture fades to the base color.
    flat_radius: float = 0.0

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.axis_u, self.axis_v)
        return n / np.linalg.norm(n)

    def texture(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(np.asarray(self.base, dtype=np.float64), s.shape + (3,)).copy()
        for fs, ft, ph, ar, ag, ab in self.waves:
            w = np.sin(2.0 * np.pi * (fs * s + ft * t) + ph)
            out += w[..., None] * np.array([ar, ag, ab])
        out = np.clip(out, 0.0, 1.0)
        if self.flat_radius > 0:
            # Smoothstep blend keeps the image free of hard edges.
            r = np.sqrt(s * s + t * t)
            w = np.clip((r - self.flat_radius) / (0.3 * self.flat_radius), 0.0, 1.0)
            w = (w * w * (3 - 2 * w))[..., None]
            out = w * out + (1 - w) * np.asarray(self.base)
        return out


@dataclass(frozen=True)
class SceneSpec:
    planes: tuple[TexturedPlane, ...]
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)


def random_waves(rng: np.random.Generator, count: int, fmin: float, fmax: float,
                 amp: float) -> tuple[tuple[float, ...], ...]:
    waves = []
    for _ in range(count):
        f = rng.uniform(fmin, fmax)
        ang = rng.uniform(0, np.pi)
        a = rng.uniform(0.3, 1.0, 3) * amp / np.sqrt(count)
        waves.append((f * np.cos(ang), f * np.sin(ang), rng.uniform(0, 2 * np.pi), *a))
    return tuple(waves)


def fronto_parallel_plane(depth: float = 2.0, seed: int = 0, n_waves: int = 6, fmin: float = 0.5,
                          fmax: float = 3.0, amp: float = 0.35, flat_center: float = 0.0) -> SceneSpec:
    """Single infinite plane at ``z = depth`` facing the origin camera.

    ``flat_center`` > 0 blanks the texture within that radius around the optical axis.
    """
    rng = np.random.default_rng(seed)
    base = tuple(rng.uniform(0.35, 0.65, 3))
    plane = TexturedPlane((0.0, 0.0, depth), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), base=base,
                          waves=random_waves(rng, n_waves, fmin, fmax, amp), flat_radius=flat_center)
    return SceneSpec((plane,))


def desk_scene(seed: int = 0, n_waves: int = 8, fmin: float = 0.4, fmax: float = 2.5,
               amp: float = 0.4) -> SceneSpec:
    """Back wall, desk top and a tilted board: three planes at different depths and slants."""
    rng = np.random.default_rng(seed)

    def plane(origin, u, v, hu=np.inf, hv=np.inf):
        return TexturedPlane(origin, u, v, hu, hv, tuple(rng.uniform(0.3, 0.7, 3)),
                             random_waves(rng, n_waves, fmin, fmax, amp))

    c, s = np.cos(0.5), np.sin(0.5)
    return SceneSpec((
        plane((0.0, 0.0, 4.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
        plane((0.0, 1.0, 2.5), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
        plane((0.4, -0.1, 2.6), (c, 0.0, -s), (0.0, 1.0, 0.0), 0.5, 0.45),
    ))


def ray_cast(scene: SceneSpec, pose: Se3Pose, cam: PinholeCamera) -> tuple[np.ndarray, np.ndarray]:
    """RGB image and z-depth map of ``scene`` seen from camera-to-world ``pose``.

    Pixels that hit nothing get the background color and depth ``inf``.
    """
    u, v = np.meshgrid(np.arange(cam.width, dtype=np.float64), np.arange(cam.height, dtype=np.float64))
    rays_c = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    rays_w = rays_c @ pose.R.T
    o = pose.translation
    best = np.full(u.shape, np.inf)
    image = np.broadcast_to(np.asarray(scene.background, dtype=np.float64), u.shape + (3,)).copy()
    for pl in scene.planes:
        n = pl.normal
        denom = rays_w @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = ((np.asarray(pl.origin) - o) @ n) / denom
        hit = np.isfinite(lam) & (lam > 1e-9)
        x = o + lam[..., None] * rays_w
        rel = x - np.asarray(pl.origin)
        au, av = np.asarray(pl.axis_u, dtype=np.float64), np.asarray(pl.axis_v, dtype=np.float64)
        s = rel @ au / (au @ au)
        t = rel @ av / (av @ av)
        hit &= (np.abs(s) <= pl.half_u) & (np.abs(t) <= pl.half_v) & (lam < best)
        if not hit.any():
            continue
        best = np.where(hit, lam, best)
        image[hit] = pl.texture(s[hit], t[hit])
    # Rays have unit camera z, so the ray parameter equals the z-depth.
    return image, best


def smooth_trajectory(n_frames: int, seed: int = 0, radius: float = 0.15, max_angle_deg: float = 4.0,
                      static: bool = False) -> list[Se3Pose]:
    """Camera-to-world poses moving smoothly around the origin while looking down +z."""
    if static or n_frames <= 1:
        return [Se3Pose.identity() for _ in range(max(n_frames, 0))]
    rng = np.random.default_rng(seed)
    ph = rng.uniform(0, 2 * np.pi, 6)
    s = np.linspace(0.0, 1.0, n_frames)
    a = np.deg2rad(max_angle_deg)
    poses = []
    for si in s:
        t = radius * np.array([np.sin(2 * np.pi * si + ph[0]) - np.sin(ph[0]),
                               0.5 * (np.sin(2 * np.pi * si + ph[1]) - np.sin(ph[1])),
                               0.5 * (np.sin(np.pi * si + ph[2]) - np.sin(ph[2]))])
        w = a * np.array([np.sin(2 * np.pi * si + ph[3]) - np.sin(ph[3]),
                          np.sin(2 * np.pi * si + ph[4]) - np.sin(ph[4]),
                          0.5 * (np.sin(2 * np.pi * si + ph[5]) - np.sin(ph[5]))])
        poses.append(Se3Pose(so3_exp_quat(w), t))
    return poses


def default_camera(width: int, height: int, fov_deg: float = 70.0) -> PinholeCamera:
    f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2)
    return PinholeCamera(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


@dataclass
class SyntheticSequence:
    cam: PinholeCamera
    timestamps: np.ndarray
    images: list[np.ndarray]
    depths: list[np.ndarray]
    poses: list[Se3Pose]
    scene: SceneSpec = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.images)

    def image(self, i: int) -> np.ndarray:
        return self.images[i]

    def depth(self, i: int) -> np.ndarray:
        return self.depths[i]

    @property
    def gt_trajectory(self) -> list[tuple[float, Se3Pose]]:
        return [(float(t), p) for t, p in zip(self.timestamps, self.poses)]


def generate_synthetic(scene: SceneSpec, n_frames: int, width: int, height: int,
                       poses: list[Se3Pose] | None = None, fps: float = 30.0, seed: int = 0,
                       cam: PinholeCamera | None = None, noise: float = 0.0) -> SyntheticSequence:
    """Ray-cast every pose. ``noise`` adds clipped Gaussian sensor noise of that std, drawn from ``seed``."""
    if noise < 0:
        raise ValueError("noise must be non-negative")
    cam = cam or default_camera(width, height)
    poses = poses if poses is not None else smooth_trajectory(n_frames, seed)
    if len(poses) != n_frames:
        raise ValueError("need exactly one pose per frame")
    images, depths = [], []
    rng = np.random.default_rng(seed)
    for p in poses:
        img, d = ray_cast(scene, p, cam)
        if noise > 0:
            img = np.clip(img + noise * rng.standard_normal(img.shape), 0.0, 1.0)
        images.append(img)
        depths.append(d)
    return SyntheticSequence(cam, np.arange(n_frames) / fps, images, depths, list(poses), scene)


def write_sequence(seq: SyntheticSequence, out_dir: str | Path) -> Path:
    """Write the sequence as a TUM-style directory plus ``camera.json``."""
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    rgb_lines = ["# timestamp filename"]
    gt_lines = ["# timestamp tx ty tz qx qy qz qw"]
    for ts, img, pose in zip(seq.timestamps, seq.images, seq.poses):
        name = f"rgb/{ts:.6f}.png"
        save_png(out / name, img)
        rgb_lines.append(f"{ts:.6f} {name}")
        gt_lines.append(f"{ts:.6f} " + " ".join(f"{x:.9f}" for x in pose.to_tum()))
    (out / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (out / "groundtruth.txt").write_text("\n".join(gt_lines) + "\n")
    (out / "camera.json").write_text(json.dumps(seq.cam.to_dict(), indent=2))
    np.save(out / "depth.npy", np.stack(seq.depths) if seq.depths else np.zeros((0,)))
    return out
