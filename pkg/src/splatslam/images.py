"""PNG input/output and small image utilities on [0, 1] float images."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

LUMA = np.array([0.299, 0.587, 0.114])


def load_png(path: str | Path, mode: str = "RGB") -> np.ndarray:
    """Decode an 8-bit PNG into a float64 array scaled to [0, 1].

    ``mode`` is ``"RGB"`` (H, W, 3) or ``"L"`` (H, W).
    """
    with Image.open(path) as im:
        arr = np.asarray(im.convert(mode), dtype=np.float64)
    return arr / 255.0


def save_png(path: str | Path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def to_gray(rgb: np.ndarray) -> np.ndarray:
    if rgb.ndim == 2:
        return rgb
    return rgb @ LUMA


def halve_average(img: np.ndarray) -> np.ndarray:
    """2x2 block average; odd trailing rows/columns are dropped."""
    h, w = img.shape[0] // 2, img.shape[1] // 2
    x = img[: 2 * h, : 2 * w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def average_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    out = [np.asarray(img, dtype=np.float64)]
    for _ in range(1, levels):
        out.append(halve_average(out[-1]))
    return out


def central_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference ``d/du`` and ``d/dv`` with zero borders."""
    gx = np.zeros_like(img, dtype=np.float64)
    gy = np.zeros_like(img, dtype=np.float64)
    gx[1:-1, 1:-1] = 0.5 * (img[1:-1, 2:] - img[1:-1, :-2])
    gy[1:-1, 1:-1] = 0.5 * (img[2:, 1:-1] - img[:-2, 1:-1])
    return gx, gy
