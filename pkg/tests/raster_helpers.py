"""Scene builders and gradient checks shared by raster tests and the acceptance suite."""

import numpy as np

from splatslam.geometry import PinholeCamera, Se3Pose
from splatslam.mapping.gaussians import GaussianMap
from splatslam.raster import render, render_backward

PARAMS = ("means", "quats", "log_scales", "opacity_logits", "colors")


def random_scene(seed: int, n: int = 20, size: int = 32):
    rng = np.random.default_rng(seed)
    means = np.c_[rng.uniform(-0.6, 0.6, (n, 2)), rng.uniform(2, 4, n)]
    gmap = GaussianMap(means, rng.normal(size=(n, 4)), np.log(rng.uniform(0.05, 0.3, (n, 3))),
                       rng.normal(0, 1, n), rng.uniform(0, 1, (n, 3)))
    f = 30.0 * size / 32
    cam = PinholeCamera(f, f, (size - 1) / 2, (size - 1) / 2, size, size)
    pose = Se3Pose.exp(rng.normal(0, 0.05, 6))
    return gmap, cam, pose, rng


def gradient_check(gmap, cam, pose, weights, rel=1e-3, floor=1e-6):
    """Compare every analytic gradient with a central difference; returns the list of failures."""
    grads = render_backward(render(gmap, pose, cam), weights, gmap)
    failures = []
    for name in PARAMS:
        arr = getattr(gmap, name)
        analytic = getattr(grads, name)
        for i in np.ndindex(arr.shape):
            h = 1e-6 * max(1.0, abs(arr[i]))
            old = arr[i]
            arr[i] = old + h
            gmap.touch()
            fp = float((render(gmap, pose, cam).image * weights).sum())
            arr[i] = old - h
            gmap.touch()
            fm = float((render(gmap, pose, cam).image * weights).sum())
            arr[i] = old
            gmap.touch()
            fd = (fp - fm) / (2 * h)
            a = float(analytic[i])
            if abs(a - fd) > max(rel * max(abs(a), abs(fd)), floor):
                failures.append((name, i, a, fd))
    return failures
