"""Sources of multi-view prior images and SDS noise predictions.

Three providers behind one interface:

  * `FilePriorProvider`   — fixed images from a JSON manifest on disk;
  * `OraclePrior`         — renders a known reference scene, turning the SDS
                            gradient into an exact photometric pull (the
                            desk-scale stand-in for a diffusion prior);
  * `RemotePrior`         — HTTP client for a view-conditioned diffusion
                            service speaking the wire protocol below.

Wire protocol (shared with the companion service):
  POST /v1/generate_views  {"image_png_b64", "viewpoints": [{elevation_deg,
      azimuth_deg}], "seed"} -> {"images_png_b64": [...], "viewpoints": [...]}
  POST /v1/predict_noise   {"noised_png_b64", "t", "condition_png_b64",
      "d_azimuth_deg", "d_elevation_deg", "seed"} -> {"noise_png_b64"}

Noise-valued images (noised input and predicted noise) travel as 16-bit PNGs
under the affine map u16 = round(clamp(v * 0.25 + 0.5, 0, 1) * 65535);
condition images are ordinary 8-bit RGBA PNGs.
"""

from __future__ import annotations

import base64
import io
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import requests
from PIL import Image

from .camera import RelativeAngles, angular_distance
from .scene import GaussianCloud, Viewpoint

# fixed six-view schedule used by Zero123++-style multi-view generators,
# (elevation, azimuth) in degrees
DEFAULT_PRIOR_ANGLES = (
    (20.0, 30.0),
    (-10.0, 90.0),
    (20.0, 150.0),
    (-10.0, 210.0),
    (20.0, 270.0),
    (-10.0, 330.0),
)

DEFAULT_RESOLUTION = 256


class PriorError(Exception):
    pass


class PriorServiceError(PriorError):
    """Base for remote-provider failures (CLI exit code 3)."""


class PriorServiceConnectionError(PriorServiceError):
    pass


class PriorServiceTimeout(PriorServiceError):
    pass


class PriorServiceHTTPError(PriorServiceError):
    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"service returned HTTP {status}: {detail}")
        self.status = status


class PriorServiceSchemaError(PriorServiceError):
    pass


@dataclass
class PriorViewSet:
    """The N fixed-viewpoint prior images with their viewpoints."""

    viewpoints: list[Viewpoint]
    images: list[np.ndarray]        # (H, W, 4) float in [0, 1], straight alpha
    source_tag: str

    def __post_init__(self):
        if len(self.viewpoints) != len(self.images):
            raise ValueError("viewpoint/image count mismatch")
        if len(self.viewpoints) < 1:
            raise ValueError("prior set needs at least one view")
        shapes = {im.shape for im in self.images}
        if len(shapes) != 1:
            raise ValueError(f"prior images disagree on resolution: {sorted(shapes)}")
        shape = next(iter(shapes))
        if len(shape) != 3 or shape[2] != 4:
            raise ValueError(f"prior images must be HxWx4 RGBA, got {shape}")
        for i in range(len(self.viewpoints)):
            for j in range(i + 1, len(self.viewpoints)):
                if angular_distance(self.viewpoints[i], self.viewpoints[j]) <= 0.0:
                    raise ValueError(f"duplicate viewpoints at indices {i} and {j}")

    def __len__(self) -> int:
        return len(self.viewpoints)

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.images[0].shape[:2]
        return (h, w)

    def rgb_over(self, background) -> list[np.ndarray]:
        """Composite each RGBA image over a solid background."""
        bg = np.asarray(background, dtype=np.float64)
        out = []
        for im in self.images:
            a = im[..., 3:4]
            out.append(im[..., :3] * a + bg * (1.0 - a))
        return out

    def alphas(self) -> list[np.ndarray]:
        return [im[..., 3] for im in self.images]


@dataclass
class SdsContext:
    """Side information an in-process prior may use (remote providers ignore
    it): the sampled viewpoint, the clean render, and the injected noise."""

    viewpoint: Viewpoint
    clean_rgb: np.ndarray
    noise: np.ndarray


class SdsPrior(ABC):
    """Noise predictor conditioned on an image and relative view angles."""

    can_generate_views: bool = False

    @abstractmethod
    def predict_noise(
        self,
        noised: np.ndarray,
        t: float,
        condition: np.ndarray,
        d_angles: RelativeAngles,
        context: SdsContext | None = None,
    ) -> np.ndarray:
        """Predicted per-pixel noise; output shape equals `noised`'s."""

    def generate_views(self, image: np.ndarray, viewpoints, seed: int = 0):
        raise NotImplementedError(f"{type(self).__name__} cannot generate views")


# image helpers ------------------------------------------------------------


def load_rgba(path) -> np.ndarray:
    img = Image.open(path).convert("RGBA")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_rgba(arr: np.ndarray, path) -> None:
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGBA").save(path)


def save_rgb(arr: np.ndarray, path) -> None:
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def resize_rgba(arr: np.ndarray, size: int) -> np.ndarray:
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    img = Image.fromarray(u8, mode="RGBA").resize((size, size), Image.LANCZOS)
    return np.asarray(img, dtype=np.float64) / 255.0


def encode_rgba_png(arr: np.ndarray) -> bytes:
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def decode_rgba_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGBA")
    return np.asarray(img, dtype=np.float64) / 255.0


def encode_noise_png(arr: np.ndarray) -> bytes:
    """(H, W, 3) real-valued -> 16-bit PNG under v*0.25+0.5, clamped."""
    mapped = np.clip(arr * 0.25 + 0.5, 0.0, 1.0)
    u16 = np.round(mapped * 65535.0).astype(np.uint16)
    ok, buf = cv2.imencode(".png", u16[..., ::-1])  # RGB -> BGR
    if not ok:
        raise ValueError("16-bit PNG encoding failed")
    return buf.tobytes()


def decode_noise_png(data: bytes) -> np.ndarray:
    img = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None or img.dtype != np.uint16 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected a 16-bit 3-channel PNG")
    return (img[..., ::-1].astype(np.float64) / 65535.0 - 0.5) * 4.0


# file provider ------------------------------------------------------------


def load_prior_set(
    manifest_path,
    resolution: int | None = None,
    fov_y_deg: float = 30.0,
    radius: float | None = None,
    resize: bool = True,
) -> PriorViewSet:
    """Load a prior view set from a JSON manifest.

    The manifest holds a nominal resolution and per-view entries
    {elevation_deg, azimuth_deg, radius, image}; image paths are relative to
    the manifest.  Images are straight-alpha RGBA; nothing is premultiplied.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        manifest = json.load(f)
    if "views" not in manifest or not manifest["views"]:
        raise PriorError(f"{manifest_path}: manifest has no views")
    target = resolution or int(manifest.get("resolution", DEFAULT_RESOLUTION))

    viewpoints, images = [], []
    for i, entry in enumerate(manifest["views"]):
        try:
            vp = Viewpoint(
                elevation_deg=float(entry["elevation_deg"]),
                azimuth_deg=float(entry["azimuth_deg"]),
                radius=float(radius if radius is not None else entry.get("radius", 2.0)),
                fov_y_deg=fov_y_deg,
            )
        except KeyError as e:
            raise PriorError(f"{manifest_path}: view {i} missing field {e}") from e
        img_path = manifest_path.parent / entry["image"]
        if not img_path.exists():
            raise PriorError(f"{manifest_path}: view {i} image not found: {img_path}")
        img = load_rgba(img_path)
        if img.shape[0] != target or img.shape[1] != target:
            if not resize:
                raise PriorError(
                    f"{manifest_path}: view {i} is {img.shape[1]}x{img.shape[0]}, "
                    f"expected {target}x{target} and resize is disabled"
                )
            img = resize_rgba(img, target)
        viewpoints.append(vp)
        images.append(img)

    return PriorViewSet(viewpoints=viewpoints, images=images, source_tag=str(manifest_path))


def save_prior_set(priors: PriorViewSet, directory) -> Path:
    """Write images + manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    views = []
    for i, (vp, img) in enumerate(zip(priors.viewpoints, priors.images)):
        name = f"view_{i:02d}.png"
        save_rgba(img, directory / name)
        views.append(
            {
                "elevation_deg": vp.elevation_deg,
                "azimuth_deg": vp.azimuth_deg,
                "radius": vp.radius,
                "image": name,
            }
        )
    manifest = {"resolution": priors.images[0].shape[0], "views": views}
    path = directory / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


class FilePriorProvider(SdsPrior):
    """Prior views from disk; cannot predict noise (reconstruction-only runs)."""

    can_generate_views = False

    def __init__(self, manifest_path, **kwargs):
        self.view_set = load_prior_set(manifest_path, **kwargs)

    def predict_noise(self, noised, t, condition, d_angles, context=None):
        raise PriorError("file provider has no diffusion model; disable the SDS term")


# oracle provider ----------------------------------------------------------


class OraclePrior(SdsPrior):
    """Renders a known reference cloud; the SDS gradient becomes an exact
    photometric pull of strength gamma toward the reference."""

    can_generate_views = True

    def __init__(
        self,
        reference: GaussianCloud,
        gamma: float = 1.0,
        resolution: int = DEFAULT_RESOLUTION,
        background=(1.0, 1.0, 1.0),
    ):
        self.reference = reference
        self.gamma = gamma
        self.resolution = resolution
        self.background = np.asarray(background, dtype=np.float64)
        self._cache: dict = {}

    def _render(self, viewpoint: Viewpoint):
        key = (viewpoint.elevation_deg, viewpoint.azimuth_deg, viewpoint.radius,
               viewpoint.fov_y_deg)
        if key not in self._cache:
            from .rasterizer import rasterize

            self._cache[key] = rasterize(
                self.reference, viewpoint, self.resolution, self.resolution,
                background=self.background,
            )
        return self._cache[key]

    def reference_rgb(self, viewpoint: Viewpoint) -> np.ndarray:
        return self._render(viewpoint).rgb

    def predict_noise(self, noised, t, condition, d_angles, context=None):
        if context is None:
            raise PriorError("oracle prior needs the SdsContext side channel")
        ref = self.reference_rgb(context.viewpoint)
        return context.noise + self.gamma * (context.clean_rgb - ref)

    def generate_views(self, image=None, viewpoints=None, seed: int = 0) -> PriorViewSet:
        """Render the reference at the requested viewpoints as RGBA priors.

        The RGBA images un-premultiply the composited render, so compositing
        them back over the same background reproduces the render exactly.
        """
        if viewpoints is None:
            raise ValueError("oracle generate_views needs explicit viewpoints")
        imgs = []
        for vp in viewpoints:
            out = self._render(vp)
            a = out.alpha[..., None]
            fg = np.where(a > 1e-12, (out.rgb - (1.0 - a) * self.background) / np.maximum(a, 1e-12), 0.0)
            imgs.append(np.concatenate([np.clip(fg, 0.0, 1.0), a], axis=-1))
        return PriorViewSet(viewpoints=list(viewpoints), images=imgs, source_tag="oracle")


# remote provider ----------------------------------------------------------


def _canonical_json(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def build_generate_views_request(image: np.ndarray, viewpoints, seed: int) -> bytes:
    """Canonical request bytes for POST /v1/generate_views."""
    return _canonical_json(
        {
            "image_png_b64": base64.b64encode(encode_rgba_png(image)).decode(),
            "seed": seed,
            "viewpoints": [
                {"elevation_deg": float(vp[0]) if isinstance(vp, (tuple, list)) else vp.elevation_deg,
                 "azimuth_deg": float(vp[1]) if isinstance(vp, (tuple, list)) else vp.azimuth_deg}
                for vp in viewpoints
            ],
        }
    )


def build_predict_noise_request(
    noised: np.ndarray, t: float, condition: np.ndarray, d_angles: RelativeAngles, seed: int
) -> bytes:
    """Canonical request bytes for POST /v1/predict_noise."""
    if condition.shape[-1] == 3:
        condition = np.concatenate([condition, np.ones_like(condition[..., :1])], axis=-1)
    return _canonical_json(
        {
            "condition_png_b64": base64.b64encode(encode_rgba_png(condition)).decode(),
            "d_azimuth_deg": d_angles.d_azimuth_deg,
            "d_elevation_deg": d_angles.d_elevation_deg,
            "noised_png_b64": base64.b64encode(encode_noise_png(noised)).decode(),
            "seed": seed,
            "t": float(t),
        }
    )


class RemotePrior(SdsPrior):
    """Client for the view-conditioned diffusion service."""

    can_generate_views = True

    def __init__(
        self,
        endpoint_url: str,
        timeout_generate: float = 120.0,
        timeout_predict: float = 10.0,
        seed: int = 0,
        default_radius: float = 2.0,
        fov_y_deg: float = 30.0,
        retries: int = 2,
    ):
        self.endpoint_url = endpoint_url.rstrip("/")
        self.timeout_generate = timeout_generate
        self.timeout_predict = timeout_predict
        self.seed = seed
        self.default_radius = default_radius
        self.fov_y_deg = fov_y_deg
        self.retries = retries
        self.session = requests.Session()

    def _post(self, route: str, body: bytes, timeout: float) -> dict:
        url = f"{self.endpoint_url}{route}"
        last_exc = None
        for _ in range(self.retries + 1):
            try:
                resp = self.session.post(
                    url, data=body, timeout=timeout,
                    headers={"Content-Type": "application/json"},
                )
            except requests.Timeout as e:
                last_exc = PriorServiceTimeout(f"timeout after {timeout}s calling {url}")
                continue
            except requests.ConnectionError as e:
                last_exc = PriorServiceConnectionError(f"cannot reach {url}: {e}")
                continue
            if resp.status_code >= 500:
                last_exc = PriorServiceHTTPError(resp.status_code, resp.text[:200])
                continue
            if resp.status_code != 200:
                raise PriorServiceHTTPError(resp.status_code, resp.text[:200])
            try:
                return resp.json()
            except ValueError as e:
                raise PriorServiceSchemaError(f"{url}: response is not JSON: {e}") from e
        raise last_exc

    def generate_views(self, image: np.ndarray, viewpoints, seed: int | None = None) -> PriorViewSet:
        viewpoints = list(viewpoints)
        body = build_generate_views_request(
            image, viewpoints, self.seed if seed is None else seed
        )
        data = self._post("/v1/generate_views", body, self.timeout_generate)
        try:
            images_b64 = data["images_png_b64"]
        except (KeyError, TypeError) as e:
            raise PriorServiceSchemaError(f"response missing images_png_b64: {e}") from e
        if not isinstance(images_b64, list) or len(images_b64) != len(viewpoints):
            raise PriorServiceSchemaError(
                f"expected {len(viewpoints)} images, got "
                f"{len(images_b64) if isinstance(images_b64, list) else type(images_b64)}"
            )
        imgs = []
        for i, b in enumerate(images_b64):
            try:
                imgs.append(decode_rgba_png(base64.b64decode(b)))
            except Exception as e:
                raise PriorServiceSchemaError(f"image {i} is not a decodable PNG: {e}") from e
        vps = [
            Viewpoint(vp.elevation_deg, vp.azimuth_deg, self.default_radius, self.fov_y_deg)
            for vp in viewpoints
        ]
        return PriorViewSet(viewpoints=vps, images=imgs, source_tag=self.endpoint_url)

    def predict_noise(self, noised, t, condition, d_angles, context=None):
        body = build_predict_noise_request(noised, t, condition, d_angles, self.seed)
        data = self._post("/v1/predict_noise", body, self.timeout_predict)
        try:
            noise = decode_noise_png(base64.b64decode(data["noise_png_b64"]))
        except (KeyError, TypeError) as e:
            raise PriorServiceSchemaError(f"response missing noise_png_b64: {e}") from e
        except ValueError as e:
            raise PriorServiceSchemaError(str(e)) from e
        if noise.shape != noised.shape:
            raise PriorServiceSchemaError(
                f"noise shape {noise.shape} does not match input {noised.shape}"
            )
        return noise
