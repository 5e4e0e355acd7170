"""Numba kernels for tile binning, front-to-back blending and its reverse pass.

All kernels are serial so that per-Gaussian reductions happen in a fixed order
and results are bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _pixel_span(center, radius, size):
    # Pixel index range touched by [center - radius, center + radius], padded by one.
    lo = center - radius - 1.0
    hi = center + radius + 1.0
    if hi < 0.0 or lo > size - 1.0:
        return 0, -1
    lo = max(lo, 0.0)
    hi = min(hi, size - 1.0)
    return int(math.floor(lo)), int(math.ceil(hi))


@njit(cache=True)
def bin_tiles(order, mean2d, radius, width, height, tile):
    """Per-tile lists of Gaussian ids, each in the global depth order of ``order``.

    Returns ``(tile_ptr, tile_ids)`` in CSR layout over row-major tiles.
    """
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    counts = np.zeros(ntx * nty + 1, dtype=np.int64)
    for k in range(order.shape[0]):
        g = order[k]
        c0, c1 = _pixel_span(mean2d[g, 0], radius[g, 0], width)
        r0, r1 = _pixel_span(mean2d[g, 1], radius[g, 1], height)
        if c1 < c0 or r1 < r0:
            continue
        for ty in range(r0 // tile, r1 // tile + 1):
            for tx in range(c0 // tile, c1 // tile + 1):
                counts[ty * ntx + tx + 1] += 1
    ptr = np.cumsum(counts)
    fill = ptr[:-1].copy()
    ids = np.empty(ptr[-1], dtype=np.int64)
    for k in range(order.shape[0]):
        g = order[k]
        c0, c1 = _pixel_span(mean2d[g, 0], radius[g, 0], width)
        r0, r1 = _pixel_span(mean2d[g, 1], radius[g, 1], height)
        if c1 < c0 or r1 < r0:
            continue
        for ty in range(r0 // tile, r1 // tile + 1):
            for tx in range(c0 // tile, c1 // tile + 1):
                t = ty * ntx + tx
                ids[fill[t]] = g
                fill[t] += 1
    return ptr, ids


@njit(cache=True)
def _blend_pixel(px, py, ids, start, end, mean2d, conic, colors, opac, cutoff, cap, t_min, out):
    T = 1.0
    last = 0
    r = 0.0
    gch = 0.0
    bch = 0.0
    for k in range(start, end):
        g = ids[k]
        dx = px - mean2d[g, 0]
        dy = py - mean2d[g, 1]
        power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) - conic[g, 1] * dx * dy
        if power < cutoff:
            continue
        alpha = min(cap, opac[g] * math.exp(power))
        w = T * alpha
        r += w * colors[g, 0]
        gch += w * colors[g, 1]
        bch += w * colors[g, 2]
        T = T * (1.0 - alpha)
        last = k - start + 1
        if T < t_min:
            break
    out[0] = r
    out[1] = gch
    out[2] = bch
    return T, last


@njit(cache=True)
def forward_tiled(tile_ptr, tile_ids, mean2d, radius, conic, colors, opac, width, height, tile,
                  cutoff, cap, t_min):
    """Tiled blend, splat-major inside each tile.

    Each splat only visits the tile pixels inside its padded support box.
    Every pixel still sees its splats in global depth order with the same
    arithmetic as :func:`forward_reference`, so results are bit-identical.
    """
    image = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    last = np.zeros((height, width), dtype=np.int64)
    done = np.zeros((height, width), dtype=np.bool_)
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            x0 = tx * tile
            y0 = ty * tile
            x1 = min(x0 + tile, width) - 1
            y1 = min(y0 + tile, height) - 1
            remaining = (x1 - x0 + 1) * (y1 - y0 + 1)
            start = tile_ptr[t]
            for k in range(start, tile_ptr[t + 1]):
                g = tile_ids[k]
                mx = mean2d[g, 0]
                my = mean2d[g, 1]
                c0, c1 = _pixel_span(mx, radius[g, 0], width)
                r0, r1 = _pixel_span(my, radius[g, 1], height)
                c0 = max(c0, x0)
                c1 = min(c1, x1)
                r0 = max(r0, y0)
                r1 = min(r1, y1)
                a = conic[g, 0]
                b = conic[g, 1]
                c = conic[g, 2]
                o = opac[g]
                cr = colors[g, 0]
                cg = colors[g, 1]
                cb = colors[g, 2]
                for y in range(r0, r1 + 1):
                    dy = y - my
                    for x in range(c0, c1 + 1):
                        if done[y, x]:
                            continue
                        dx = x - mx
                        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                        if power < cutoff:
                            continue
                        alpha = min(cap, o * math.exp(power))
                        T = trans[y, x]
                        w = T * alpha
                        image[y, x, 0] += w * cr
                        image[y, x, 1] += w * cg
                        image[y, x, 2] += w * cb
                        T = T * (1.0 - alpha)
                        trans[y, x] = T
                        last[y, x] = k - start + 1
                        if T < t_min:
                            done[y, x] = True
                            remaining -= 1
                if remaining == 0:
                    break
    return image, trans, last


@njit(cache=True)
def forward_reference(order, mean2d, conic, colors, opac, width, height, cutoff, cap, t_min):
    """Untiled renderer: every pixel walks the full depth-sorted list."""
    image = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    buf = np.zeros(3)
    for y in range(height):
        for x in range(width):
            T, _ = _blend_pixel(float(x), float(y), order, 0, order.shape[0],
                                mean2d, conic, colors, opac, cutoff, cap, t_min, buf)
            image[y, x, 0] = buf[0]
            image[y, x, 1] = buf[1]
            image[y, x, 2] = buf[2]
            trans[y, x] = T
    return image, trans


@njit(cache=True)
def backward_tiled(tile_ptr, tile_ids, mean2d, radius, conic, colors, opac, trans, last, grad_image,
                   width, height, tile, cutoff, cap, straight_through):
    """Reverse blend, starting from the stored final transmittance of every pixel.

    Tiles and splats are visited in a fixed order, so the per-Gaussian sums are
    bit-reproducible.  Returns gradients w.r.t. mean2d, the packed conic
    ``(a, b, c)``, colors and opacity, plus the per-Gaussian sum of absolute
    per-pixel mean2d gradients.
    """
    n = mean2d.shape[0]
    g_mean = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_color = np.zeros((n, 3))
    g_opac = np.zeros(n)
    abs_mean = np.zeros((n, 2))
    T_cur = trans.copy()
    acc = np.zeros((height, width, 3))
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            x0 = tx * tile
            y0 = ty * tile
            x1 = min(x0 + tile, width) - 1
            y1 = min(y0 + tile, height) - 1
            start = tile_ptr[t]
            for k in range(tile_ptr[t + 1] - 1, start - 1, -1):
                g = tile_ids[k]
                mx = mean2d[g, 0]
                my = mean2d[g, 1]
                c0, c1 = _pixel_span(mx, radius[g, 0], width)
                r0, r1 = _pixel_span(my, radius[g, 1], height)
                c0 = max(c0, x0)
                c1 = min(c1, x1)
                r0 = max(r0, y0)
                r1 = min(r1, y1)
                a = conic[g, 0]
                b = conic[g, 1]
                c = conic[g, 2]
                o = opac[g]
                cr = colors[g, 0]
                cg = colors[g, 1]
                cb = colors[g, 2]
                pos = k - start
                for y in range(r0, r1 + 1):
                    dy = y - my
                    for x in range(c0, c1 + 1):
                        if pos >= last[y, x]:
                            continue
                        gr = grad_image[y, x, 0]
                        gg = grad_image[y, x, 1]
                        gb = grad_image[y, x, 2]
                        if gr == 0.0 and gg == 0.0 and gb == 0.0:
                            continue
                        dx = x - mx
                        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                        if power < cutoff:
                            continue
                        gauss = math.exp(power)
                        raw = o * gauss
                        alpha = min(cap, raw)
                        T = T_cur[y, x] / (1.0 - alpha)
                        T_cur[y, x] = T
                        w = T * alpha
                        g_color[g, 0] += w * gr
                        g_color[g, 1] += w * gg
                        g_color[g, 2] += w * gb
                        ar = acc[y, x, 0]
                        ag = acc[y, x, 1]
                        ab = acc[y, x, 2]
                        d_alpha = T * ((cr - ar) * gr + (cg - ag) * gg + (cb - ab) * gb)
                        acc[y, x, 0] = alpha * cr + (1.0 - alpha) * ar
                        acc[y, x, 1] = alpha * cg + (1.0 - alpha) * ag
                        acc[y, x, 2] = alpha * cb + (1.0 - alpha) * ab
                        if raw >= cap and not straight_through:
                            continue
                        g_opac[g] += d_alpha * gauss
                        d_power = d_alpha * raw
                        gmx = d_power * (a * dx + b * dy)
                        gmy = d_power * (b * dx + c * dy)
                        g_mean[g, 0] += gmx
                        g_mean[g, 1] += gmy
                        abs_mean[g, 0] += abs(gmx)
                        abs_mean[g, 1] += abs(gmy)
                        g_conic[g, 0] += -0.5 * d_power * dx * dx
                        g_conic[g, 1] += -d_power * dx * dy
                        g_conic[g, 2] += -0.5 * d_power * dy * dy
    return g_mean, g_conic, g_color, g_opac, abs_mean
