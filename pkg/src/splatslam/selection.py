"""Multi-pass block-wise gradient pixel selection.

Each pass tiles the image with square blocks and keeps a block's strongest
gradient pixel when it clears the pass threshold.  Later passes use larger
blocks and lower thresholds so that weakly textured regions still receive
points.  An optional extra pass with smaller blocks adds points that feed the
dense map but never enter pose estimation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ImageTooSmall
from .images import central_gradients

TRACKED = 0
EXTRA_UNTRACKED = 1
INTERPOLATED = 2

ROLE_NAMES = {TRACKED: "tracked", EXTRA_UNTRACKED: "extra_untracked", INTERPOLATED: "interpolated"}


@dataclass(frozen=True)
class GradientImage:
    magnitude: np.ndarray
    gx: np.ndarray | None = None
    gy: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.magnitude.shape


@dataclass(frozen=True)
class SelectionConfig:
    base_block: int = 16
    num_passes: int = 3
    # None selects an adaptive threshold: median gradient plus ``threshold_offset``.
    threshold_0: float | None = None
    threshold_offset: float = 7.0 / 255.0
    threshold_decay: float = 0.5
    block_growth: int = 2
    extra_point_multiplier: float = 2.0

    def __post_init__(self):
        if self.base_block < 1 or self.num_passes < 1:
            raise ValueError("base_block and num_passes must be positive")
        if not 0 < self.threshold_decay < 1:
            raise ValueError("threshold_decay must lie in (0, 1)")
        if self.block_growth < 2:
            raise ValueError("block_growth must be at least 2")
        if self.extra_point_multiplier < 1:
            raise ValueError("extra_point_multiplier must be >= 1")
        if self.threshold_0 is not None and self.threshold_0 <= 0:
            raise ValueError("threshold_0 must be positive")


@dataclass(frozen=True)
class SelectedPixels:
    """Selected pixel coordinates ``(u, v)`` with their pass index and role."""

    pixels: np.ndarray  # (N, 2) int, (column, row)
    passes: np.ndarray  # (N,) int
    roles: np.ndarray  # (N,) int

    def __len__(self) -> int:
        return len(self.pixels)

    @classmethod
    def empty(cls) -> SelectedPixels:
        return cls(np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=np.int64))

    def with_role(self, role: int) -> SelectedPixels:
        m = self.roles == role
        return SelectedPixels(self.pixels[m], self.passes[m], self.roles[m])

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.pixels}


def compute_gradients(img: np.ndarray) -> GradientImage:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ImageTooSmall(f"gradient needs a 2-D image of at least 3x3, got {img.shape}")
    gx, gy = central_gradients(img)
    return GradientImage(np.sqrt(gx * gx + gy * gy), gx, gy)


def pass_thresholds(grad: GradientImage, cfg: SelectionConfig) -> list[float]:
    t0 = cfg.threshold_0
    if t0 is None:
        t0 = float(np.median(grad.magnitude)) + cfg.threshold_offset
    return [t0 * cfg.threshold_decay**k for k in range(cfg.num_passes)]


def _block_argmax(mag: np.ndarray, block: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-major first maximum of every ``block``-sized tile (partial edge tiles included).

    Returns the maxima and their row and column indices, one entry per tile.
    """
    rows, cols = mag.shape
    nby, nbx = -(-rows // block), -(-cols // block)
    padded = np.full((nby * block, nbx * block), -np.inf)
    padded[:rows, :cols] = mag
    tiles = padded.reshape(nby, block, nbx, block).transpose(0, 2, 1, 3).reshape(nby, nbx, block * block)
    # argmax returns the first occurrence, which is row-major order inside a tile.
    flat = np.argmax(tiles, axis=2)
    best = np.take_along_axis(tiles, flat[..., None], axis=2)[..., 0]
    by, bx = np.meshgrid(np.arange(nby), np.arange(nbx), indexing="ij")
    r = by * block + flat // block
    c = bx * block + flat % block
    return best.ravel(), r.ravel(), c.ravel()


def _run_passes(mag: np.ndarray, blocks: list[int], thresholds: list[float],
                taken: np.ndarray) -> tuple[list[tuple[int, int]], list[int]]:
    picks: list[tuple[int, int]] = []
    pass_ids: list[int] = []
    for k, (block, thr) in enumerate(zip(blocks, thresholds)):
        best, r, c = _block_argmax(mag, block)
        newly = []
        for val, rr, cc in zip(best, r, c):
            if val > thr and not taken[rr, cc]:
                newly.append((int(cc), int(rr)))
        # Marking after the pass keeps each pass independent of its own scan order.
        for cc, rr in newly:
            taken[rr, cc] = True
        picks.extend(newly)
        pass_ids.extend([k] * len(newly))
    return picks, pass_ids


def _sorted(picks, pass_ids, role) -> SelectedPixels:
    if not picks:
        return SelectedPixels.empty()
    px = np.array(picks, dtype=np.int64)
    ps = np.array(pass_ids, dtype=np.int64)
    order = np.lexsort((px[:, 0], px[:, 1], ps))
    return SelectedPixels(px[order], ps[order], np.full(len(px), role, dtype=np.int64))


def select_pixels(grad: GradientImage, cfg: SelectionConfig = SelectionConfig()) -> SelectedPixels:
    """Tracked pixels: per pass, each block's argmax if above threshold and not already taken."""
    mag = grad.magnitude
    thresholds = pass_thresholds(grad, cfg)
    blocks = [cfg.base_block * cfg.block_growth**k for k in range(cfg.num_passes)]
    taken = np.zeros(mag.shape, dtype=bool)
    picks, pass_ids = _run_passes(mag, blocks, thresholds, taken)
    return _sorted(picks, pass_ids, TRACKED)


def select_extra_points(grad: GradientImage, base: SelectedPixels,
                        cfg: SelectionConfig = SelectionConfig()) -> SelectedPixels:
    """Union of ``base`` with additional untracked picks from a denser block grid.

    The extra pass uses blocks ``base_block / extra_point_multiplier`` wide and
    the lowest pass threshold.  A multiplier of 1 adds nothing.
    """
    if cfg.extra_point_multiplier <= 1.0:
        return base
    block = max(1, int(round(cfg.base_block / cfg.extra_point_multiplier)))
    thr = pass_thresholds(grad, cfg)[-1]
    taken = np.zeros(grad.magnitude.shape, dtype=bool)
    if len(base):
        taken[base.pixels[:, 1], base.pixels[:, 0]] = True
    picks, _ = _run_passes(grad.magnitude, [block], [thr], taken)
    extra = _sorted(picks, [cfg.num_passes] * len(picks), EXTRA_UNTRACKED)
    return SelectedPixels(np.concatenate([base.pixels, extra.pixels]),
                          np.concatenate([base.passes, extra.passes]),
                          np.concatenate([base.roles, extra.roles]))


def selection_mask(sel: SelectedPixels, shape: tuple[int, int]) -> np.ndarray:
    """Debug overlay: 0 background, 1 tracked, 2 extra (uint8, PNG friendly after scaling)."""
    mask = np.zeros(shape, dtype=np.uint8)
    for (u, v), role in zip(sel.pixels, sel.roles):
        mask[v, u] = 1 + role
    return mask
