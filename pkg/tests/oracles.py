"""Independent reference implementations used by several test modules."""

import itertools

import numpy as np

from splatslam.densifier import _incircle_sos, orient2d


def delaunay_oracle(points) -> set[tuple[int, int, int]]:
    """Exhaustive empty-circumcircle enumeration over all vertex triples.

    Ties between cocircular points use the same symbolic perturbation as the
    package (lexicographic vertex rank), so the answer is unique.
    """
    pts = [tuple(p) for p in np.asarray(points, dtype=np.float64)]
    n = len(pts)
    order = sorted(range(n), key=lambda i: (pts[i][0], pts[i][1]))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    out = set()
    for a, b, c in itertools.combinations(range(n), 3):
        o = orient2d(pts[a], pts[b], pts[c])
        if o == 0.0:
            continue
        if o < 0:
            b, c = c, b
        if all(_incircle_sos(pts, rank, a, b, c, d) < 0 for d in range(n) if d not in (a, b, c)):
            out.add(tuple(sorted((a, b, c))))
    return out


def ssim_oracle(a, b, window=11, sigma=1.5, c1=0.01**2, c2=0.03**2) -> float:
    """Sliding-window SSIM with explicit loops over every valid window position."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    x = np.arange(window) - (window - 1) / 2
    g = np.exp(-x * x / (2 * sigma * sigma))
    w = np.outer(g, g)
    w /= w.sum()
    h, wd, ch = a.shape
    vals = []
    for k in range(ch):
        for r in range(h - window + 1):
            for c in range(wd - window + 1):
                pa = a[r:r + window, c:c + window, k]
                pb = b[r:r + window, c:c + window, k]
                mu_a, mu_b = (w * pa).sum(), (w * pb).sum()
                va = (w * pa * pa).sum() - mu_a**2
                vb = (w * pb * pb).sum() - mu_b**2
                cov = (w * pa * pb).sum() - mu_a * mu_b
                vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                            / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def psnr_oracle(a, b) -> float:
    mse = sum((float(x) - float(y)) ** 2 for x, y in zip(np.ravel(a), np.ravel(b))) / np.size(a)
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)


def ate_oracle(est: np.ndarray, gt: np.ndarray) -> float:
    """Sim(3) alignment by Horn's closed-form quaternion method, then RMSE."""
    mu_e, mu_g = est.mean(axis=0), gt.mean(axis=0)
    e, g = est - mu_e, gt - mu_g
    S = e.T @ g
    N = np.array([
        [S[0, 0] + S[1, 1] + S[2, 2], S[1, 2] - S[2, 1], S[2, 0] - S[0, 2], S[0, 1] - S[1, 0]],
        [S[1, 2] - S[2, 1], S[0, 0] - S[1, 1] - S[2, 2], S[0, 1] + S[1, 0], S[2, 0] + S[0, 2]],
        [S[2, 0] - S[0, 2], S[0, 1] + S[1, 0], -S[0, 0] + S[1, 1] - S[2, 2], S[1, 2] + S[2, 1]],
        [S[0, 1] - S[1, 0], S[2, 0] + S[0, 2], S[1, 2] + S[2, 1], -S[0, 0] - S[1, 1] + S[2, 2]],
    ])
    vals, vecs = np.linalg.eigh(N)
    w, x, y, z = vecs[:, -1]
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    rotated = e @ R.T
    s = float((g * rotated).sum() / (e * e).sum())
    resid = g - s * rotated
    return float(np.sqrt((resid**2).sum(axis=1).mean()))
