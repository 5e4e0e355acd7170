"""Differentiable tile rasterization of a Gaussian map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import MismatchedSnapshot
from ..geometry import PinholeCamera, Se3Pose
from . import kernels
from .projection import ProjectedSplats, RasterConfig, project_splats, project_splats_vjp


@dataclass
class RenderOutput:
    """Rendered RGB image plus the state needed to replay the blend backwards."""

    image: np.ndarray  # (H, W, 3)
    final_transmittance: np.ndarray  # (H, W)
    contributors: np.ndarray  # (H, W) number of tile-list entries walked per pixel
    tile_ptr: np.ndarray
    tile_ids: np.ndarray
    projection: ProjectedSplats
    order: np.ndarray
    revision: int
    view: Se3Pose
    cam: PinholeCamera
    cfg: RasterConfig


@dataclass
class Gradients:
    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    # Screen-space statistics in pixel units.
    mean2d: np.ndarray
    abs_mean2d: np.ndarray
    visible: np.ndarray


def depth_order(proj: ProjectedSplats) -> np.ndarray:
    """Visible Gaussian ids sorted by depth, ties broken by index."""
    idx = np.flatnonzero(proj.visible)
    return idx[np.lexsort((idx, proj.depth[idx]))].astype(np.int64)


def _inputs(gmap, view, cam, cfg):
    proj = project_splats(gmap.means, gmap.quats, gmap.log_scales, view, cam, cfg)
    order = depth_order(proj)
    return proj, order, np.ascontiguousarray(gmap.colors), np.ascontiguousarray(gmap.opacities)


def render(gmap, view: Se3Pose, cam: PinholeCamera, cfg: RasterConfig = RasterConfig()) -> RenderOutput:
    """Render ``gmap`` from camera-to-world pose ``view`` over a black background."""
    proj, order, colors, opac = _inputs(gmap, view, cam, cfg)
    ptr, ids = kernels.bin_tiles(order, proj.mean2d, proj.radius, cam.width, cam.height, cfg.tile)
    image, trans, last = kernels.forward_tiled(ptr, ids, proj.mean2d, proj.radius, proj.conic, colors, opac,
                                               cam.width, cam.height, cfg.tile, cfg.power_cutoff,
                                               cfg.alpha_cap, cfg.min_transmittance)
    return RenderOutput(image, trans, last, ptr, ids, proj, order, gmap.revision, view, cam, cfg)


def render_reference(gmap, view: Se3Pose, cam: PinholeCamera,
                     cfg: RasterConfig = RasterConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Untiled brute-force renderer sharing only the projection step; returns image and transmittance."""
    proj, order, colors, opac = _inputs(gmap, view, cam, cfg)
    return kernels.forward_reference(order, proj.mean2d, proj.conic, colors, opac, cam.width,
                                     cam.height, cfg.power_cutoff, cfg.alpha_cap, cfg.min_transmittance)


def render_backward(out: RenderOutput, grad_image: np.ndarray, gmap, view: Se3Pose | None = None,
                    cam: PinholeCamera | None = None) -> Gradients:
    """Analytic gradients of ``sum(grad_image * image)`` w.r.t. every Gaussian parameter."""
    if gmap.revision != out.revision:
        raise MismatchedSnapshot("map changed since this render was produced")
    if view is not None and not np.allclose(view.matrix(), out.view.matrix(), rtol=0, atol=0):
        raise MismatchedSnapshot("backward view differs from the rendered view")
    if cam is not None and cam != out.cam:
        raise MismatchedSnapshot("backward camera differs from the rendered camera")
    grad_image = np.ascontiguousarray(grad_image, dtype=np.float64)
    if grad_image.shape != out.image.shape:
        raise ValueError(f"gradient shape {grad_image.shape} does not match image {out.image.shape}")
    proj, cfg = out.projection, out.cfg
    opac = gmap.opacities
    g_mean2d, g_conic, g_color, g_opac, abs_mean = kernels.backward_tiled(
        out.tile_ptr, out.tile_ids, proj.mean2d, proj.radius, proj.conic, np.ascontiguousarray(gmap.colors),
        np.ascontiguousarray(opac), out.final_transmittance, out.contributors, grad_image,
        out.cam.width, out.cam.height, cfg.tile, cfg.power_cutoff, cfg.alpha_cap,
        cfg.cap_gradient == "straight_through")
    g_means, g_quats, g_logs = project_splats_vjp(proj, gmap.means, gmap.quats, gmap.log_scales, out.view,
                                                  out.cam, g_mean2d, g_conic)
    return Gradients(g_means, g_quats, g_logs, g_opac * opac * (1.0 - opac), g_color,
                     g_mean2d, abs_mean, proj.visible.copy())
