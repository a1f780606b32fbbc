"""Model backends.

`ModelBackend` is the seam where real view-conditioned diffusion models
(a Zero123++-style multi-view generator for `generate_views`, a
Zero-1-to-3-style predictor for `predict_noise`) plug in: load weights in
`load()`, run inference in the two methods, keep sampling seeded.

`ProceduralBackend` is the deterministic placeholder shipped with the
service: it produces geometric re-arrangements of the condition image
instead of learned novel views, and predicts noise as the exact denoiser
toward the condition image.  It exists so the protocol, determinism, and
readiness behavior are exercisable without GPU weights.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _alphas_cumprod(steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02):
    betas = np.linspace(beta_start, beta_end, steps)
    return np.cumprod(1.0 - betas)


class ModelBackend:
    name_generator = "none"
    name_noise = "none"

    def load(self) -> None:
        raise NotImplementedError

    def generate_views(self, image: np.ndarray, viewpoints: list, seed: int) -> list[np.ndarray]:
        raise NotImplementedError

    def predict_noise(self, noised: np.ndarray, t: float, condition: np.ndarray,
                      d_azimuth_deg: float, d_elevation_deg: float, seed: int) -> np.ndarray:
        raise NotImplementedError


class ProceduralBackend(ModelBackend):
    name_generator = "procedural-placeholder"
    name_noise = "condition-denoiser-placeholder"

    def __init__(self, resolution: int = 256):
        self.resolution = resolution
        self._alphas = None

    def load(self) -> None:
        self._alphas = _alphas_cumprod()

    @property
    def ready(self) -> bool:
        return self._alphas is not None

    def generate_views(self, image, viewpoints, seed):
        h, w = image.shape[:2]
        out = []
        for i, vp in enumerate(viewpoints):
            rolled = np.roll(image, int(round(w * (vp["azimuth_deg"] % 360.0) / 360.0)), axis=1)
            rolled = np.roll(rolled, int(round(h * vp["elevation_deg"] / 360.0)), axis=0)
            # seeded per-view channel emphasis so distinct seeds are distinguishable
            digest = hashlib.sha256(f"{seed}:{i}".encode()).digest()
            tint = 0.9 + 0.2 * np.array([digest[0], digest[1], digest[2]]) / 255.0
            view = rolled.copy()
            view[..., :3] = np.clip(view[..., :3] * tint, 0.0, 1.0)
            out.append(view)
        return out

    def predict_noise(self, noised, t, condition, d_azimuth_deg, d_elevation_deg, seed):
        idx = min(max(int(t * len(self._alphas)), 0), len(self._alphas) - 1)
        a_bar = float(self._alphas[idx])
        cond_rgb = condition[..., :3] * condition[..., 3:4] + (1.0 - condition[..., 3:4])
        if cond_rgb.shape != noised.shape:
            raise ValueError(
                f"condition resolution {cond_rgb.shape} does not match noised {noised.shape}"
            )
        return (noised - np.sqrt(a_bar) * cond_rgb) / np.sqrt(1.0 - a_bar)
