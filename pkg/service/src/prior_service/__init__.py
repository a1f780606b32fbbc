"""View-conditioned diffusion prior service speaking the image-to-3D wire protocol."""

__version__ = "0.1.0"
