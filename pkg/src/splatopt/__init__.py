"""Multi-view Gaussian splatting optimizer: image priors in, textured mesh out."""

__version__ = "0.1.0"
