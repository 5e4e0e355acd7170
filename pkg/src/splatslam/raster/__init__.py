"""Differentiable tile-based Gaussian rasterizer."""

from .projection import RasterConfig, SplatProjection, project_gaussian, project_splats
from .render import Gradients, RenderOutput, render, render_backward, render_reference

__all__ = ["Gradients", "RasterConfig", "RenderOutput", "SplatProjection", "project_gaussian",
           "project_splats", "render", "render_backward", "render_reference"]
