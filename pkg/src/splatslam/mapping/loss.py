"""Photometric mapping loss: L1 blended with structural dissimilarity, plus its gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from ..errors import DimensionMismatch, ImageTooSmall, TooManyLevels


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.2
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be a positive odd integer")


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _corr_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    # Separable valid-mode correlation over the first two axes (odd-length kernel).
    h = len(k) // 2
    out = correlate1d(correlate1d(img, k, axis=0, mode="constant"), k, axis=1, mode="constant")
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def _corr_valid_adjoint(grad: np.ndarray, k: np.ndarray) -> np.ndarray:
    # Transpose of _corr_valid: scatter back onto the full image.
    h = len(k) // 2
    full = np.zeros((grad.shape[0] + 2 * h, grad.shape[1] + 2 * h) + grad.shape[2:])
    full[h:-h or None, h:-h or None] = grad
    kr = k[::-1].copy()
    return correlate1d(correlate1d(full, kr, axis=0, mode="constant"), kr, axis=1, mode="constant")


def _as_hwc(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")


def _ssim_terms(a, b, cfg):
    k = gaussian_kernel_1d(cfg.ssim_window, cfg.ssim_sigma)
    if a.shape[0] < cfg.ssim_window or a.shape[1] < cfg.ssim_window:
        raise ImageTooSmall(f"SSIM needs at least {cfg.ssim_window}x{cfg.ssim_window}, got {a.shape[:2]}")
    mu_a = _corr_valid(a, k)
    mu_b = _corr_valid(b, k)
    e_aa = _corr_valid(a * a, k)
    e_bb = _corr_valid(b * b, k)
    e_ab = _corr_valid(a * b, k)
    a1 = 2.0 * mu_a * mu_b + cfg.ssim_c1
    a2 = 2.0 * (e_ab - mu_a * mu_b) + cfg.ssim_c2
    b1 = mu_a * mu_a + mu_b * mu_b + cfg.ssim_c1
    b2 = (e_aa - mu_a * mu_a) + (e_bb - mu_b * mu_b) + cfg.ssim_c2
    smap = (a1 * a2) / (b1 * b2)
    return k, mu_a, mu_b, a1, a2, b1, b2, smap


def ssim(a: np.ndarray, b: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    """Mean local SSIM over valid windows, averaged over channels."""
    a, b = _as_hwc(a), _as_hwc(b)
    _check_pair(a, b)
    return float(_ssim_terms(a, b, cfg)[-1].mean())


def ssim_and_grad(a: np.ndarray, b: np.ndarray, cfg: LossConfig = LossConfig()):
    """SSIM and its gradient with respect to ``a``."""
    squeeze = np.asarray(a).ndim == 2
    a, b = _as_hwc(a), _as_hwc(b)
    _check_pair(a, b)
    k, mu_a, mu_b, a1, a2, b1, b2, smap = _ssim_terms(a, b, cfg)
    scale = 1.0 / smap.size
    d_mu = scale * smap * (2.0 * mu_b / a1 - 2.0 * mu_b / a2 - 2.0 * mu_a / b1 + 2.0 * mu_a / b2)
    d_eaa = -scale * smap / b2
    d_eab = 2.0 * scale * smap / a2
    grad = (_corr_valid_adjoint(d_mu, k) + 2.0 * a * _corr_valid_adjoint(d_eaa, k)
            + b * _corr_valid_adjoint(d_eab, k))
    return float(smap.mean()), (grad[..., 0] if squeeze else grad)


def map_loss(rendered: np.ndarray, gt: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    """``(1 - lam) * L1 + lam * (1 - SSIM) / 2``."""
    rendered = np.asarray(rendered, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_pair(rendered, gt)
    l1 = float(np.abs(rendered - gt).mean())
    if cfg.lam == 0.0:
        return (1.0 - cfg.lam) * l1
    return (1.0 - cfg.lam) * l1 + cfg.lam * 0.5 * (1.0 - ssim(rendered, gt, cfg))


def map_loss_and_grad(rendered: np.ndarray, gt: np.ndarray, cfg: LossConfig = LossConfig()):
    rendered = np.asarray(rendered, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_pair(rendered, gt)
    if np.array_equal(rendered, gt):
        return 0.0, np.zeros_like(rendered)
    diff = rendered - gt
    loss = (1.0 - cfg.lam) * float(np.abs(diff).mean())
    grad = (1.0 - cfg.lam) * np.sign(diff) / diff.size
    if cfg.lam > 0.0:
        s, g = ssim_and_grad(rendered, gt, cfg)
        loss += cfg.lam * 0.5 * (1.0 - s)
        grad -= 0.5 * cfg.lam * g
    return loss, grad


def blur5(img: np.ndarray) -> np.ndarray:
    """5x5 binomial blur with reflected borders."""
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    pad = [(2, 2), (2, 2)] + [(0, 0)] * (img.ndim - 2)
    return _corr_valid(np.pad(img, pad, mode="reflect"), k)


def build_pyramid(img: np.ndarray, levels: int, min_size: int = LossConfig.ssim_window) -> list[np.ndarray]:
    """Level 0 is the input; each further level blurs then keeps every other pixel."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    out = [np.asarray(img, dtype=np.float64)]
    for lvl in range(1, levels):
        prev = out[-1]
        h, w = (prev.shape[0] + 1) // 2, (prev.shape[1] + 1) // 2
        if min(h, w) < min_size:
            raise TooManyLevels(f"level {lvl} would be {h}x{w}, below the {min_size}px SSIM window")
        out.append(blur5(prev)[::2, ::2])
    return out
