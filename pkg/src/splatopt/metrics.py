"""Image-quality metrics (PSNR, single-scale SSIM) and view evaluation.

SSIM runs on Rec.601 luma with an 11x11 Gaussian window (sigma 1.5,
k1=0.01, k2=0.03), averaged over valid (fully-inside) windows so border
handling never enters the numbers.  PSNR is capped at 100 dB to keep CSV
tooling finite.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .camera import pose_matrix
from .meshing import TexturedMesh, render_textured
from .priors import PriorViewSet
from .rasterizer import rasterize
from .scene import GaussianCloud, Viewpoint

PSNR_CAP = 100.0


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(max_val * max_val / mse), PSNR_CAP)


def _luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # separable correlation, valid mode
    k = window.size
    out = np.apply_along_axis(lambda r: np.convolve(r, window[::-1], mode="valid"), 1, img)
    out = np.apply_along_axis(lambda c: np.convolve(c, window[::-1], mode="valid"), 0, out)
    return out


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0,
         window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    x = _luma(a)
    y = _luma(b)
    if x.shape[0] < window_size or x.shape[1] < window_size:
        raise ValueError(f"images smaller than the {window_size}x{window_size} window")
    w = _gaussian_window(window_size, sigma)
    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2

    mu_x = _filter_valid(x, w)
    mu_y = _filter_valid(y, w)
    xx = _filter_valid(x * x, w)
    yy = _filter_valid(y * y, w)
    xy = _filter_valid(x * y, w)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    view_ids: list
    psnr_per_view: list
    ssim_per_view: list

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_per_view))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_per_view))

    def to_dict(self) -> dict:
        return {
            "views": [
                {"view": v, "psnr_db": p, "ssim": s}
                for v, p, s in zip(self.view_ids, self.psnr_per_view, self.ssim_per_view)
            ],
            "mean_psnr_db": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
        }

    def write(self, json_path, csv_path=None) -> None:
        with open(json_path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        if csv_path is not None:
            with open(csv_path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["view", "psnr_db", "ssim"])
                for v, p, s in zip(self.view_ids, self.psnr_per_view, self.ssim_per_view):
                    writer.writerow([v, f"{p:.6g}", f"{s:.6g}"])


def evaluation_ring(
    count: int = 8, radius: float = 2.0, fov_y_deg: float = 30.0, elevation: float = 0.0
) -> list[Viewpoint]:
    """The default held-out ring: zero elevation, evenly spaced azimuths."""
    step = 360.0 / count
    return [Viewpoint(elevation, i * step, radius, fov_y_deg) for i in range(count)]


def evaluate_views(
    representation,
    gt_views: PriorViewSet,
    background=(1.0, 1.0, 1.0),
) -> EvalReport:
    """PSNR/SSIM of the representation rendered at each ground-truth view.

    Accepts a GaussianCloud (splat rasterizer) or a TexturedMesh (software
    mesh renderer); comparisons composite everything over one background.
    """
    bg = np.asarray(background, dtype=np.float64)
    h, w = gt_views.resolution
    targets = gt_views.rgb_over(bg)

    psnrs, ssims, ids = [], [], []
    for i, vp in enumerate(gt_views.viewpoints):
        if isinstance(representation, GaussianCloud):
            render = rasterize(representation, vp, w, h, background=bg).rgb
        elif isinstance(representation, TexturedMesh):
            cam = pose_matrix(vp, w, h)
            render = render_textured(representation, cam, background=bg)
        else:
            raise TypeError(f"cannot render a {type(representation).__name__}")
        psnrs.append(psnr(render, targets[i]))
        ssims.append(ssim(render, targets[i]))
        ids.append(i)
    return EvalReport(view_ids=ids, psnr_per_view=psnrs, ssim_per_view=ssims)
