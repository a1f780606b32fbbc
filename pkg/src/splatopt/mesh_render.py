"""Minimal depth-buffered software mesh rasterizer (one sample per pixel).

Used for texture baking visibility, textured-mesh evaluation renders, and
the texel-to-pixel sampling maps.  Barycentrics are perspective-correct.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .camera import CameraMatrices


@njit(cache=True, fastmath=True)
def _raster_tris(verts_cam, tris, fx, fy, cx, cy, H, W, depth, triid, bary):
    big = 1.0e30
    for i in range(H):
        for j in range(W):
            depth[i, j] = big
            triid[i, j] = -1

    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        z0 = verts_cam[i0, 2]
        z1 = verts_cam[i1, 2]
        z2 = verts_cam[i2, 2]
        if z0 <= 1e-6 or z1 <= 1e-6 or z2 <= 1e-6:
            continue
        u0 = fx * verts_cam[i0, 0] / z0 + cx
        v0 = fy * verts_cam[i0, 1] / z0 + cy
        u1 = fx * verts_cam[i1, 0] / z1 + cx
        v1 = fy * verts_cam[i1, 1] / z1 + cy
        u2 = fx * verts_cam[i2, 0] / z2 + cx
        v2 = fy * verts_cam[i2, 1] / z2 + cy

        area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if area == 0.0:
            continue
        xmin = int(np.floor(min(u0, min(u1, u2)) - 0.5))
        xmax = int(np.ceil(max(u0, max(u1, u2)) - 0.5))
        ymin = int(np.floor(min(v0, min(v1, v2)) - 0.5))
        ymax = int(np.ceil(max(v0, max(v1, v2)) - 0.5))
        if xmin < 0:
            xmin = 0
        if ymin < 0:
            ymin = 0
        if xmax > W - 1:
            xmax = W - 1
        if ymax > H - 1:
            ymax = H - 1

        inv_area = 1.0 / area
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                x = px + 0.5
                y = py + 0.5
                a = ((u1 - x) * (v2 - y) - (u2 - x) * (v1 - y)) * inv_area
                b = ((u2 - x) * (v0 - y) - (u0 - x) * (v2 - y)) * inv_area
                c = 1.0 - a - b
                if a < 0.0 or b < 0.0 or c < 0.0:
                    continue
                inv_z = a / z0 + b / z1 + c / z2
                z = 1.0 / inv_z
                if z < depth[py, px]:
                    depth[py, px] = z
                    triid[py, px] = t
                    bary[py, px, 0] = (a / z0) * z
                    bary[py, px, 1] = (b / z1) * z
                    bary[py, px, 2] = (c / z2) * z


def render_geometry(vertices: np.ndarray, triangles: np.ndarray, cam: CameraMatrices):
    """Rasterize the mesh; returns (depth, tri_id, perspective barycentrics).

    Background pixels carry depth 0 and tri_id -1.
    """
    verts_cam = np.ascontiguousarray(cam.world_to_cam_points(vertices))
    h, w = cam.height, cam.width
    depth = np.empty((h, w))
    triid = np.empty((h, w), dtype=np.int64)
    bary = np.zeros((h, w, 3))
    _raster_tris(
        verts_cam, np.ascontiguousarray(triangles, dtype=np.int64),
        cam.fx, cam.fy, cam.cx, cam.cy, h, w, depth, triid, bary,
    )
    depth[triid < 0] = 0.0
    return depth, triid, bary


def sample_texture_bilinear(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear texture lookup; uv in [0,1]^2 with (0,0) the top-left texel
    corner.  uv may be any leading shape (..., 2)."""
    th, tw = texture.shape[:2]
    x = np.clip(uv[..., 0] * tw - 0.5, 0.0, tw - 1.0)
    y = np.clip(uv[..., 1] * th - 0.5, 0.0, th - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, tw - 1)
    y1 = np.minimum(y0 + 1, th - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    c00 = texture[y0, x0]
    c10 = texture[y0, x1]
    c01 = texture[y1, x0]
    c11 = texture[y1, x1]
    return (
        c00 * (1 - fx) * (1 - fy)
        + c10 * fx * (1 - fy)
        + c01 * (1 - fx) * fy
        + c11 * fx * fy
    )


def bilinear_taps(uv: np.ndarray, th: int, tw: int):
    """Texel indices (flat, 4 per sample) and weights for bilinear lookups."""
    x = np.clip(uv[..., 0] * tw - 0.5, 0.0, tw - 1.0)
    y = np.clip(uv[..., 1] * th - 0.5, 0.0, th - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, tw - 1)
    y1 = np.minimum(y0 + 1, th - 1)
    fx = x - x0
    fy = y - y0
    idx = np.stack(
        [y0 * tw + x0, y0 * tw + x1, y1 * tw + x0, y1 * tw + x1], axis=-1
    )
    wts = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1
    )
    return idx, wts
