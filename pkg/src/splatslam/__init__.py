"""Photometric direct odometry feeding a differentiable Gaussian-splatting mapper."""

from .geometry import PhotometricCalib, PinholeCamera, Se3Pose, compose, invert

__version__ = "0.1.0"

__all__ = ["PhotometricCalib", "PinholeCamera", "Se3Pose", "compose", "invert", "__version__"]
