"""Image codecs for the wire protocol.

Condition images are 8-bit RGBA PNGs.  Noise-valued images (the noised
render and the predicted noise) are 16-bit PNGs under the affine map
u16 = round(clamp(v * 0.25 + 0.5, 0, 1) * 65535), decoded exactly.
"""

from __future__ import annotations

import io

import cv2
import numpy as np
from PIL import Image


def encode_rgba_png(arr: np.ndarray) -> bytes:
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def decode_rgba_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGBA")
    return np.asarray(img, dtype=np.float64) / 255.0


def encode_noise_png(arr: np.ndarray) -> bytes:
    mapped = np.clip(arr * 0.25 + 0.5, 0.0, 1.0)
    u16 = np.round(mapped * 65535.0).astype(np.uint16)
    ok, buf = cv2.imencode(".png", u16[..., ::-1])
    if not ok:
        raise ValueError("16-bit PNG encoding failed")
    return buf.tobytes()


def decode_noise_png(data: bytes) -> np.ndarray:
    img = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None or img.dtype != np.uint16 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected a 16-bit 3-channel PNG")
    return (img[..., ::-1].astype(np.float64) / 65535.0 - 0.5) * 4.0
