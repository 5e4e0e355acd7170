"""Delaunay-based depth interpolation for flat image regions.

The triangulation inserts points in lexicographic ``(x, y)`` order.  Each new
point lies outside the hull built so far, so it is joined to every hull edge
it can see and the new edges are legalized with Lawson flips.  In-circle ties
(four cocircular points) are broken by simulation of simplicity on the lifted
coordinate, ranking vertices lexicographically, which makes the output unique
for any input.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import sample_bilinear_many
from .selection import GradientImage

_REL_EPS = 1e-12


def orient2d(a, b, c) -> float:
    """Twice the signed area of ``abc``; positive when counterclockwise, 0 within rounding."""
    l = (b[0] - a[0]) * (c[1] - a[1])
    r = (b[1] - a[1]) * (c[0] - a[0])
    det = l - r
    if abs(det) <= _REL_EPS * (abs(l) + abs(r)):
        return 0.0
    return det


def incircle(a, b, c, d) -> float:
    """Positive when ``d`` is inside the circumcircle of counterclockwise ``abc``; 0 within rounding."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    al = adx * adx + ady * ady
    bl = bdx * bdx + bdy * bdy
    cl = cdx * cdx + cdy * cdy
    t1 = al * (bdx * cdy - bdy * cdx)
    t2 = bl * (cdx * ady - cdy * adx)
    t3 = cl * (adx * bdy - ady * bdx)
    det = t1 + t2 + t3
    if abs(det) <= _REL_EPS * (abs(t1) + abs(t2) + abs(t3)):
        return 0.0
    return det


def _incircle_sos(pts, rank, a: int, b: int, c: int, d: int) -> float:
    """Sign-resolved in-circle test: never 0 for four distinct non-collinear-triple points.

    The lifted coordinate of vertex ``i`` is perturbed by ``eps**rank[i]``, so
    the lowest-ranked vertex decides a tie.  ``incircle(a,b,c,d)`` equals
    ``det M`` with rows ``(x, y, x^2+y^2, 1)`` for ``a, b, c, d``; its derivative
    with respect to the lift of row ``k`` is ``(-1)**k`` times the orientation
    of the remaining rows, kept in order.
    """
    det = incircle(pts[a], pts[b], pts[c], pts[d])
    if det != 0.0:
        return det
    rows = [a, b, c, d]
    for k in sorted(range(4), key=lambda k: rank[rows[k]]):
        others = [rows[m] for m in range(4) if m != k]
        o = orient2d(pts[others[0]], pts[others[1]], pts[others[2]])
        if o != 0.0:
            return ((-1) ** k) * o
    return 0.0


@dataclass(frozen=True)
class Triangulation2D:
    vertices: np.ndarray  # (N, 2)
    triangles: np.ndarray  # (T, 3) int, counterclockwise

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def areas(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(0)
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def triangle_set(self) -> set[tuple[int, int, int]]:
        return {tuple(sorted(map(int, t))) for t in self.triangles}


class _Builder:
    def __init__(self, pts: np.ndarray, rank: np.ndarray):
        self.pts = pts
        self.rank = rank
        self.tris: list[list[int]] = []
        self.nbr: list[list[int]] = []
        # directed hull edge (a, b), counterclockwise, -> triangle holding it
        self.hull_tri: dict[tuple[int, int], int] = {}
        self.hull: list[int] = []

    def add_tri(self, a: int, b: int, c: int) -> int:
        self.tris.append([a, b, c])
        self.nbr.append([-1, -1, -1])
        return len(self.tris) - 1

    def set_nbr_across(self, t: int, u: int, v: int, other: int) -> None:
        """Record ``other`` as the neighbor of ``t`` across the edge ``{u, v}``."""
        tri = self.tris[t]
        for i in range(3):
            if tri[i] != u and tri[i] != v:
                self.nbr[t][i] = other
                return
        raise AssertionError("edge not in triangle")

    def legalize(self, t: int, p: int) -> None:
        stack = [(t, p)]
        pts, rank = self.pts, self.rank
        while stack:
            t, p = stack.pop()
            tri = self.tris[t]
            if p not in tri:
                continue
            i = tri.index(p)
            a, b = tri[(i + 1) % 3], tri[(i + 2) % 3]
            u = self.nbr[t][i]
            if u < 0:
                continue
            utri = self.tris[u]
            j = next(k for k in range(3) if utri[k] != a and utri[k] != b)
            d = utri[j]
            if _incircle_sos(pts, rank, p, a, b, d) <= 0:
                continue
            if orient2d(pts[p], pts[a], pts[d]) <= 0 or orient2d(pts[p], pts[d], pts[b]) <= 0:
                continue
            n_pa = self.nbr[t][tri.index(b)]
            n_bp = self.nbr[t][tri.index(a)]
            n_ad = self.nbr[u][utri.index(b)]
            n_db = self.nbr[u][utri.index(a)]
            self.tris[t] = [p, a, d]
            self.tris[u] = [p, d, b]
            self.nbr[t] = [n_ad, u, n_pa]
            self.nbr[u] = [n_db, n_bp, t]
            if n_ad >= 0:
                self.set_nbr_across(n_ad, a, d, t)
            else:
                self.hull_tri[(a, d)] = t
            if n_bp >= 0:
                self.set_nbr_across(n_bp, b, p, u)
            else:
                self.hull_tri[(b, p)] = u
            stack.append((t, p))
            stack.append((u, p))

    def seed(self, chain: list[int], p: int) -> None:
        """Fan from ``p`` to a collinear, lexicographically sorted chain."""
        pts = self.pts
        s = orient2d(pts[chain[0]], pts[chain[1]], pts[p])
        fan = []
        for c0, c1 in zip(chain[:-1], chain[1:]):
            fan.append(self.add_tri(c0, c1, p) if s > 0 else self.add_tri(c1, c0, p))
        for t0, t1, c in zip(fan[:-1], fan[1:], chain[1:-1]):
            self.set_nbr_across(t0, c, p, t1)
            self.set_nbr_across(t1, c, p, t0)
        self.hull = chain + [p] if s > 0 else chain[::-1] + [p]
        n = len(self.hull)
        for i in range(n):
            e = (self.hull[i], self.hull[(i + 1) % n])
            for t in fan:
                a, b, c = self.tris[t]
                if e in ((a, b), (b, c), (c, a)):
                    self.hull_tri[e] = t
                    break
        for t in fan:
            self.legalize(t, p)

    def insert(self, q: int) -> None:
        pts = self.pts
        hull = self.hull
        n = len(hull)
        vis = [orient2d(pts[hull[i]], pts[hull[(i + 1) % n]], pts[q]) < 0 for i in range(n)]
        # Rotate so the visible run is contiguous starting at index 0.
        start = next(i for i in range(n) if vis[i] and not vis[i - 1])
        run = []
        i = start
        while vis[i % n] and len(run) < n:
            run.append(i % n)
            i += 1
        new = []
        for k in run:
            a, b = hull[k], hull[(k + 1) % n]
            t_old = self.hull_tri.pop((a, b))
            t = self.add_tri(b, a, q)
            self.nbr[t][2] = t_old
            self.set_nbr_across(t_old, a, b, t)
            new.append(t)
        for t0, t1 in zip(new[:-1], new[1:]):
            shared = self.tris[t0][0]  # vertex b of t0 == vertex a of t1
            self.set_nbr_across(t0, shared, q, t1)
            self.set_nbr_across(t1, shared, q, t0)
        first_a = hull[run[0]]
        last_b = hull[(run[-1] + 1) % n]
        self.hull_tri[(first_a, q)] = new[0]
        self.hull_tri[(q, last_b)] = new[-1]
        # Replace the interior vertices of the visible chain by q.
        keep = []
        drop = {hull[(k + 1) % n] for k in run[:-1]}
        for v in hull:
            if v in drop:
                continue
            keep.append(v)
            if v == first_a:
                keep.append(q)
        self.hull = keep
        for t in new:
            self.legalize(t, q)


def triangulate(points) -> Triangulation2D:
    """Delaunay triangulation of 2-D points.

    Fewer than three distinct points, or all points collinear, give an empty
    triangulation.  Duplicate points are kept in ``vertices`` but only the
    first occurrence is used.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    empty = Triangulation2D(pts, np.zeros((0, 3), dtype=np.int64))
    if len(pts) < 3:
        return empty
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    uniq = [int(order[0])]
    for i in order[1:]:
        if not np.array_equal(pts[i], pts[uniq[-1]]):
            uniq.append(int(i))
    if len(uniq) < 3:
        return empty
    rank = np.empty(len(pts), dtype=np.int64)
    rank[:] = len(pts)
    rank[np.array(uniq)] = np.arange(len(uniq))
    plist = [tuple(p) for p in pts]

    k = 2
    while k < len(uniq) and orient2d(plist[uniq[0]], plist[uniq[1]], plist[uniq[k]]) == 0.0:
        k += 1
    if k == len(uniq):
        return empty
    b = _Builder(plist, rank)
    b.seed(uniq[:k], uniq[k])
    for q in uniq[k + 1:]:
        b.insert(q)
    tris = np.array(b.tris, dtype=np.int64).reshape(-1, 3)
    return Triangulation2D(pts, tris)


def low_gradient_mask(grad: GradientImage, threshold: float) -> np.ndarray:
    return grad.magnitude < threshold


@dataclass(frozen=True)
class InterpolatedPoints:
    pixels: np.ndarray  # (M, 2) float, (u, v)
    inv_depth: np.ndarray  # (M,)
    source_triangle: np.ndarray  # (M,) int
    colors: np.ndarray  # (M, 3)

    def __len__(self) -> int:
        return len(self.pixels)

    @classmethod
    def empty(cls) -> InterpolatedPoints:
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros((0, 3)))


def locate(tri: Triangulation2D, samples: np.ndarray) -> np.ndarray:
    """Index of the lowest-numbered triangle containing each sample (boundary inclusive), or -1."""
    samples = np.asarray(samples, dtype=np.float64)
    out = np.full(len(samples), -1, dtype=np.int64)
    if tri.is_empty or len(samples) == 0:
        return out
    V = tri.vertices
    for t, (i, j, k) in enumerate(tri.triangles):
        a, b, c = V[i], V[j], V[k]
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        cand = np.nonzero((out < 0) & np.all(samples >= lo - 1e-9, axis=1) & np.all(samples <= hi + 1e-9, axis=1))[0]
        if len(cand) == 0:
            continue
        s = samples[cand]
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        tol = 1e-9 * abs(area)
        w0 = (b[0] - s[:, 0]) * (c[1] - s[:, 1]) - (b[1] - s[:, 1]) * (c[0] - s[:, 0])
        w1 = (c[0] - s[:, 0]) * (a[1] - s[:, 1]) - (c[1] - s[:, 1]) * (a[0] - s[:, 0])
        w2 = (a[0] - s[:, 0]) * (b[1] - s[:, 1]) - (a[1] - s[:, 1]) * (b[0] - s[:, 0])
        inside = (w0 >= -tol) & (w1 >= -tol) & (w2 >= -tol)
        out[cand[inside]] = t
    return out


def interpolate(tri: Triangulation2D, depths: np.ndarray, mask: np.ndarray, stride: int,
                image: np.ndarray, average_space: str = "inverse") -> InterpolatedPoints:
    """Interpolated points on a ``stride`` grid where ``mask`` holds.

    Every sample inside a triangle receives the mean of that triangle's three
    vertex depths, independent of where in the triangle it falls.
    ``depths`` are inverse depths; ``average_space="metric"`` averages the
    corresponding metric depths instead.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if average_space not in ("inverse", "metric"):
        raise ValueError("average_space must be 'inverse' or 'metric'")
    depths = np.asarray(depths, dtype=np.float64)
    if tri.is_empty:
        return InterpolatedPoints.empty()
    rows, cols = mask.shape
    vv, uu = np.meshgrid(np.arange(0, rows, stride), np.arange(0, cols, stride), indexing="ij")
    uu, vv = uu.ravel(), vv.ravel()
    keep = mask[vv, uu]
    samples = np.stack([uu[keep], vv[keep]], axis=1).astype(np.float64)
    owner = locate(tri, samples)
    hit = owner >= 0
    samples, owner = samples[hit], owner[hit]
    corner = depths[tri.triangles[owner]]
    if average_space == "inverse":
        inv = corner.mean(axis=1)
    else:
        inv = 1.0 / (1.0 / corner).mean(axis=1)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    colors, _ = sample_bilinear_many(img, samples[:, 0], samples[:, 1])
    return InterpolatedPoints(samples, inv, owner, colors)


def write_svg(tri: Triangulation2D, path: str | Path, width: int, height: int) -> None:
    """Debug overlay of the triangulation in image pixel coordinates."""
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">']
    for i, j, k in tri.triangles:
        pts = " ".join(f"{tri.vertices[m][0]:.2f},{tri.vertices[m][1]:.2f}" for m in (i, j, k))
        lines.append(f'<polygon points="{pts}" fill="none" stroke="red" stroke-width="0.3"/>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines))
