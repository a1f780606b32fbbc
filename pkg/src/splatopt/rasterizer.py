"""Differentiable splat rasterization: forward images and analytic gradients.

Forward pipeline: activate parameters, build 3D covariances, project to 2D
via the local affine (EWA) approximation, bin into 16x16 tiles sorted by
depth, then front-to-back alpha compositing (numba kernels).  The backward
pass chains per-pixel compositing gradients through the projection,
covariance, activation, and quaternion math back to every raw parameter.

`rasterize_reference` is the naive full-sort per-pixel oracle the tile path
is tested against; both apply identical per-contribution rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import ALPHA_MAX, ALPHA_MIN, DEPTH_EPS, NORM_FLOOR, SIGMA_CUT, T_MIN
from .camera import CameraMatrices, pose_matrix
from .scene import GaussianCloud, Viewpoint, logistic

TILE = 16
Z_NEAR = 0.01
DILATION = 0.3           # pixel-footprint low-pass added to 2D covariance
JACOBIAN_CLAMP = 1.3     # frustum multiple at which the EWA Jacobian saturates


@dataclass
class RenderOutput:
    """One rasterization: images plus saved intermediates for backward."""

    rgb: np.ndarray                 # (H, W, 3) in [0, 1]
    alpha: np.ndarray               # (H, W) in [0, 1]
    depth: np.ndarray               # (H, W) alpha-weighted expected depth
    normal: np.ndarray              # (H, W, 3) camera space, z toward camera
    dist_value: np.ndarray | None   # (H, W) per-pixel pairwise depth distortion
    dist_stats: np.ndarray          # (H, W, 3) = (sum w, sum w*d, sum w*d^2)
    viewpoint: Viewpoint
    cam: CameraMatrices
    _ctx: dict = field(repr=False, default=None)

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]


@dataclass
class ParamGrads:
    """Gradients w.r.t. the raw cloud parameters (float64)."""

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    colors_raw: np.ndarray
    opacities_raw: np.ndarray

    @staticmethod
    def zeros(n: int) -> "ParamGrads":
        return ParamGrads(
            positions=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            log_scales=np.zeros((n, 3)),
            colors_raw=np.zeros((n, 3)),
            opacities_raw=np.zeros(n),
        )

    def add_(self, other: "ParamGrads") -> "ParamGrads":
        self.positions += other.positions
        self.rotations += other.rotations
        self.log_scales += other.log_scales
        self.colors_raw += other.colors_raw
        self.opacities_raw += other.opacities_raw
        return self

    def scale_(self, c: float) -> "ParamGrads":
        self.positions *= c
        self.rotations *= c
        self.log_scales *= c
        self.colors_raw *= c
        self.opacities_raw *= c
        return self


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(N, 4) unit quaternions (w, x, y, z) -> (N, 3, 3) rotation matrices."""
    r, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - r * z)
    R[:, 0, 2] = 2 * (x * z + r * y)
    R[:, 1, 0] = 2 * (x * y + r * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - r * x)
    R[:, 2, 0] = 2 * (x * z - r * y)
    R[:, 2, 1] = 2 * (y * z + r * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _preprocess(cloud: GaussianCloud, cam: CameraMatrices, sigma_cut: float = SIGMA_CUT) -> dict:
    n = len(cloud)
    pos = cloud.positions.astype(np.float64)
    q = cloud.rotations.astype(np.float64)
    qnorm = np.linalg.norm(q, axis=1)
    qnorm = np.maximum(qnorm, 1e-12)
    qh = q / qnorm[:, None]
    R = quat_to_rotmat(qh)
    s = np.exp(cloud.log_scales.astype(np.float64))
    L = R * s[:, None, :]
    sigma = np.einsum("nij,nkj->nik", L, L)

    M = cam.rotation
    t = pos @ M.T + cam.translation
    visible = t[:, 2] > Z_NEAR
    tz = np.where(visible, t[:, 2], 1.0)

    txz = t[:, 0] / tz
    tyz = t[:, 1] / tz
    lim_x = JACOBIAN_CLAMP * (cam.cx / cam.fx)
    lim_y = JACOBIAN_CLAMP * (cam.cy / cam.fy)
    inside_x = np.abs(txz) <= lim_x
    inside_y = np.abs(tyz) <= lim_y
    txz_c = np.clip(txz, -lim_x, lim_x)
    tyz_c = np.clip(tyz, -lim_y, lim_y)

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / tz
    J[:, 0, 2] = -cam.fx * txz_c / tz
    J[:, 1, 1] = cam.fy / tz
    J[:, 1, 2] = -cam.fy * tyz_c / tz

    V = np.einsum("ij,njk,lk->nil", M, sigma, M)
    cov2d = np.einsum("nij,njk,nlk->nil", J, V, J)
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    det = np.maximum(det, 1e-12)
    conics = np.stack(
        [cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det, cov2d[:, 0, 0] / det], axis=1
    )

    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = np.ceil(np.sqrt(2.0 * sigma_cut) * np.sqrt(lam_max))
    radii[~visible] = 0.0

    means2d = np.stack(
        [cam.fx * txz + cam.cx, cam.fy * tyz + cam.cy], axis=1
    )

    # splat normal: shortest principal axis, flipped toward the camera,
    # reported with z toward the camera
    kstar = np.argmin(s, axis=1)
    axes = R[np.arange(n), :, kstar]
    n_cv = axes @ M.T
    sflip = np.where(np.einsum("ni,ni->n", n_cv, t) > 0.0, -1.0, 1.0)
    n_cv = n_cv * sflip[:, None]
    normals = n_cv * np.array([1.0, -1.0, -1.0])

    return {
        "pos": pos, "q": q, "qnorm": qnorm, "qh": qh, "R": R, "s": s, "L": L,
        "sigma": sigma, "M": M, "t": t, "tz": tz, "visible": visible,
        "txz": txz, "tyz": tyz, "txz_c": txz_c, "tyz_c": tyz_c,
        "inside_x": inside_x, "inside_y": inside_y, "J": J, "V": V,
        "cov2d": cov2d, "det": det, "conics": conics, "radii": radii,
        "means2d": means2d, "kstar": kstar, "sflip": sflip, "normals": normals,
        "colors": cloud.colors(), "alphas": cloud.opacities(),
    }


def _bin_tiles(pre: dict, width: int, height: int):
    """Duplicate Gaussians per covered tile; sort by (tile, depth, mean-x)."""
    means2d = pre["means2d"]
    radii = pre["radii"]
    visible = pre["visible"] & (radii > 0)

    ids = np.nonzero(visible)[0]
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    if ids.size == 0:
        return np.zeros(n_tiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), tiles_x

    mx, my = means2d[ids, 0], means2d[ids, 1]
    r = radii[ids]
    px0 = np.floor(mx - r)
    px1 = np.ceil(mx + r)
    py0 = np.floor(my - r)
    py1 = np.ceil(my + r)
    keep = (px1 >= 0) & (py1 >= 0) & (px0 <= width - 1) & (py0 <= height - 1)
    ids = ids[keep]
    if ids.size == 0:
        return np.zeros(n_tiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), tiles_x

    tx0 = np.clip(px0[keep] // TILE, 0, tiles_x - 1).astype(np.int64)
    tx1 = np.clip(px1[keep] // TILE, 0, tiles_x - 1).astype(np.int64)
    ty0 = np.clip(py0[keep] // TILE, 0, tiles_y - 1).astype(np.int64)
    ty1 = np.clip(py1[keep] // TILE, 0, tiles_y - 1).astype(np.int64)

    spans_x = tx1 - tx0 + 1
    spans_y = ty1 - ty0 + 1
    counts = spans_x * spans_y
    total = int(counts.sum())

    rep = np.repeat(np.arange(ids.size), counts)
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    w_rep = spans_x[rep]
    tile_x = tx0[rep] + offs % w_rep
    tile_y = ty0[rep] + offs // w_rep
    tile_id = tile_y * tiles_x + tile_x
    gid = ids[rep]

    depth_rep = pre["t"][gid, 2]
    mx_rep = means2d[gid, 0]
    order = np.lexsort((mx_rep, depth_rep, tile_id))
    tile_sorted = tile_id[order]
    sorted_ids = gid[order]

    tile_ranges = np.searchsorted(tile_sorted, np.arange(n_tiles + 1)).astype(np.int64)
    return tile_ranges, sorted_ids.astype(np.int64), tiles_x


def rasterize(
    cloud: GaussianCloud,
    viewpoint: Viewpoint,
    width: int,
    height: int,
    background=(1.0, 1.0, 1.0),
    with_distortion: bool = False,
    dist_l2: bool = False,
    sigma_cut: float = SIGMA_CUT,
) -> RenderOutput:
    """Render the cloud from a viewpoint. Deterministic for fixed inputs."""
    if width < 1 or height < 1:
        raise ValueError(f"image size must be >= 1, got {width}x{height}")
    cam = pose_matrix(viewpoint, width, height)
    bg = np.asarray(background, dtype=np.float64)

    out_rgb = np.empty((height, width, 3))
    out_alpha = np.empty((height, width))
    out_depth = np.empty((height, width))
    out_normal = np.empty((height, width, 3))
    out_nraw = np.empty((height, width, 3))
    out_final_t = np.empty((height, width))
    out_last_idx = np.empty((height, width), dtype=np.int64)
    out_wsum = np.empty((height, width))
    out_wdsum = np.empty((height, width))
    out_wd2sum = np.empty((height, width))
    out_dist = np.empty((height, width))

    if len(cloud) > 0:
        pre = _preprocess(cloud, cam, sigma_cut)
        tile_ranges, sorted_ids, _ = _bin_tiles(pre, width, height)
        _kernels.composite_forward(
            tile_ranges, sorted_ids,
            pre["means2d"], pre["conics"], pre["radii"], pre["t"][:, 2].copy(),
            pre["colors"], pre["alphas"], pre["normals"],
            bg, height, width, TILE, dist_l2, sigma_cut,
            out_rgb, out_alpha, out_depth, out_normal, out_nraw,
            out_final_t, out_last_idx, out_wsum, out_wdsum, out_wd2sum, out_dist,
        )
    else:
        pre, tile_ranges, sorted_ids = None, None, None
        out_rgb[:] = bg
        out_alpha[:] = 0.0
        out_depth[:] = 0.0
        out_normal[:] = 0.0
        out_nraw[:] = 0.0
        out_final_t[:] = 1.0
        out_last_idx[:] = -1
        out_wsum[:] = 0.0
        out_wdsum[:] = 0.0
        out_wd2sum[:] = 0.0
        out_dist[:] = 0.0

    ctx = {
        "cloud": cloud, "pre": pre, "bg": bg,
        "tile_ranges": tile_ranges, "sorted_ids": sorted_ids,
        "final_t": out_final_t, "last_idx": out_last_idx,
        "wsum": out_wsum, "wdsum": out_wdsum, "wd2sum": out_wd2sum,
        "nraw": out_nraw, "dist_l2": dist_l2, "sigma_cut": sigma_cut,
    }
    return RenderOutput(
        rgb=out_rgb,
        alpha=out_alpha,
        depth=out_depth,
        normal=out_normal,
        dist_value=out_dist if with_distortion else None,
        dist_stats=np.stack([out_wsum, out_wdsum, out_wd2sum], axis=-1),
        viewpoint=viewpoint,
        cam=cam,
        _ctx=ctx,
    )


def _preprocess_backward(pre: dict, cam: CameraMatrices, g2d: dict) -> ParamGrads:
    """Chain per-Gaussian 2D gradients back to the raw parameters."""
    n = pre["pos"].shape[0]
    vis = pre["visible"]
    M = pre["M"]
    t = pre["t"]
    tz = pre["tz"]
    J = pre["J"]
    V = pre["V"]
    L = pre["L"]
    R = pre["R"]
    s = pre["s"]
    qh = pre["qh"]
    conics = pre["conics"]

    g_conic_p = g2d["conic"]
    g_lam = np.empty((n, 2, 2))
    g_lam[:, 0, 0] = g_conic_p[:, 0]
    g_lam[:, 0, 1] = 0.5 * g_conic_p[:, 1]
    g_lam[:, 1, 0] = 0.5 * g_conic_p[:, 1]
    g_lam[:, 1, 1] = g_conic_p[:, 2]

    lam = np.empty((n, 2, 2))
    lam[:, 0, 0] = conics[:, 0]
    lam[:, 0, 1] = conics[:, 1]
    lam[:, 1, 0] = conics[:, 1]
    lam[:, 1, 1] = conics[:, 2]

    g_cov = -np.einsum("nij,njk,nkl->nil", lam, g_lam, lam)
    g_J = 2.0 * np.einsum("nij,njk,nkl->nil", g_cov, J, V)
    g_V = np.einsum("nji,njk,nkl->nil", J, g_cov, J)
    g_sigma = M.T @ g_V @ M
    g_L = 2.0 * np.einsum("nij,njk->nik", g_sigma, L)

    g_s = np.einsum("nik,nik->nk", g_L, R)
    g_log_scales = g_s * s
    g_R = g_L * s[:, None, :]

    # normal path: n_gl = F * sflip * (M @ R[:, kstar])
    g_ngl = g2d["normal"] * pre["sflip"][:, None] * np.array([1.0, -1.0, -1.0])
    g_axis = g_ngl @ M
    g_R[np.arange(n), :, pre["kstar"]] += g_axis

    # quaternion chain
    r, x, y, z = qh[:, 0], qh[:, 1], qh[:, 2], qh[:, 3]
    zero = np.zeros(n)
    dRdq = np.empty((n, 4, 3, 3))
    dRdq[:, 0] = 2 * np.stack(
        [np.stack([zero, -z, y], -1), np.stack([z, zero, -x], -1), np.stack([-y, x, zero], -1)], 1
    )
    dRdq[:, 1] = 2 * np.stack(
        [np.stack([zero, y, z], -1), np.stack([y, -2 * x, -r], -1), np.stack([z, r, -2 * x], -1)], 1
    )
    dRdq[:, 2] = 2 * np.stack(
        [np.stack([-2 * y, x, r], -1), np.stack([x, zero, z], -1), np.stack([-r, z, -2 * y], -1)], 1
    )
    dRdq[:, 3] = 2 * np.stack(
        [np.stack([-2 * z, -r, x], -1), np.stack([r, -2 * z, y], -1), np.stack([x, y, zero], -1)], 1
    )
    g_qh = np.einsum("nkij,nij->nk", dRdq, g_R)
    g_q = (g_qh - qh * np.einsum("nk,nk->n", qh, g_qh)[:, None]) / pre["qnorm"][:, None]

    # camera-space position gradient
    fx, fy = cam.fx, cam.fy
    g_mean = g2d["mean2d"]
    g_t = np.zeros((n, 3))
    g_t[:, 0] += g_mean[:, 0] * fx / tz
    g_t[:, 2] += -g_mean[:, 0] * fx * t[:, 0] / tz**2
    g_t[:, 1] += g_mean[:, 1] * fy / tz
    g_t[:, 2] += -g_mean[:, 1] * fy * t[:, 1] / tz**2
    g_t[:, 2] += g2d["depth"]

    # J's dependence on the camera-space position
    in_x = pre["inside_x"].astype(np.float64)
    in_y = pre["inside_y"].astype(np.float64)
    g_txzc = g_J[:, 0, 2] * (-fx / tz)
    g_tyzc = g_J[:, 1, 2] * (-fy / tz)
    g_t[:, 2] += (
        g_J[:, 0, 0] * (-fx / tz**2)
        + g_J[:, 1, 1] * (-fy / tz**2)
        + g_J[:, 0, 2] * (fx * pre["txz_c"] / tz**2)
        + g_J[:, 1, 2] * (fy * pre["tyz_c"] / tz**2)
    )
    g_t[:, 0] += g_txzc * in_x / tz
    g_t[:, 2] += -g_txzc * in_x * t[:, 0] / tz**2
    g_t[:, 1] += g_tyzc * in_y / tz
    g_t[:, 2] += -g_tyzc * in_y * t[:, 1] / tz**2

    g_pos = g_t @ M

    # activations
    al = pre["alphas"]
    g_op = g2d["alpha"] * al * (1.0 - al)
    col = pre["colors"]
    g_col = g2d["color"] * col * (1.0 - col)

    invisible = ~vis
    for arr in (g_pos, g_q, g_log_scales, g_col):
        arr[invisible] = 0.0
    g_op[invisible] = 0.0

    return ParamGrads(
        positions=g_pos,
        rotations=g_q,
        log_scales=g_log_scales,
        colors_raw=g_col,
        opacities_raw=g_op,
    )


def rasterize_backward(
    output: RenderOutput,
    grad_rgb: np.ndarray | None = None,
    grad_alpha: np.ndarray | None = None,
    grad_depth: np.ndarray | None = None,
    grad_normal: np.ndarray | None = None,
    dist_coeff: float = 0.0,
    accumulate_stats: bool = False,
) -> ParamGrads:
    """Analytic gradients w.r.t. every raw Gaussian parameter.

    `dist_coeff` scales the per-pixel depth-distortion sums handled inside
    the kernel (the distortion loss has no explicit gradient image).  When
    `accumulate_stats` is set, world-space position gradient magnitudes are
    added to the cloud's densification statistics.
    """
    ctx = output._ctx
    cloud: GaussianCloud = ctx["cloud"]
    n = len(cloud)
    h, w = output.height, output.width

    def checked(g, shape, name):
        if g is None:
            return np.zeros(shape)
        g = np.ascontiguousarray(g, dtype=np.float64)
        if g.shape != shape:
            raise ValueError(f"{name} has shape {g.shape}, expected {shape}")
        return g

    grad_rgb = checked(grad_rgb, (h, w, 3), "grad_rgb")
    grad_alpha = checked(grad_alpha, (h, w), "grad_alpha")
    grad_depth = checked(grad_depth, (h, w), "grad_depth")
    grad_normal = checked(grad_normal, (h, w, 3), "grad_normal")

    if n == 0 or ctx["pre"] is None:
        return ParamGrads.zeros(n)
    if dist_coeff != 0.0 and output.dist_value is None:
        raise ValueError("distortion gradients need a forward pass with with_distortion=True")

    pre = ctx["pre"]
    o_mean2d = np.zeros((n, 2))
    o_conic = np.zeros((n, 3))
    o_depth = np.zeros(n)
    o_alpha = np.zeros(n)
    o_color = np.zeros((n, 3))
    o_normal = np.zeros((n, 3))
    touched = np.zeros(n, dtype=np.uint8)

    _kernels.composite_backward(
        ctx["tile_ranges"], ctx["sorted_ids"],
        pre["means2d"], pre["conics"], pre["radii"], pre["t"][:, 2].copy(),
        pre["colors"], pre["alphas"], pre["normals"],
        ctx["bg"], h, w, TILE, ctx["dist_l2"], dist_coeff, ctx["sigma_cut"],
        ctx["final_t"], ctx["last_idx"], ctx["wsum"], ctx["wdsum"], ctx["wd2sum"],
        ctx["nraw"],
        grad_rgb, grad_alpha, grad_depth, grad_normal,
        o_mean2d, o_conic, o_depth, o_alpha, o_color, o_normal, touched,
    )

    grads = _preprocess_backward(
        pre, output.cam,
        {
            "mean2d": o_mean2d, "conic": o_conic, "depth": o_depth,
            "alpha": o_alpha, "color": o_color, "normal": o_normal,
        },
    )

    if accumulate_stats:
        mask = touched.astype(bool)
        cloud.grad_accum[mask] += np.linalg.norm(grads.positions[mask], axis=1)
        cloud.grad_count[mask] += 1

    return grads


def rasterize_reference(
    cloud: GaussianCloud,
    viewpoint: Viewpoint,
    width: int,
    height: int,
    background=(1.0, 1.0, 1.0),
    dist_l2: bool = False,
    sigma_cut: float = SIGMA_CUT,
) -> RenderOutput:
    """Naive per-pixel full-sort compositing; the tile kernel's test oracle."""
    cam = pose_matrix(viewpoint, width, height)
    bg = np.asarray(background, dtype=np.float64)

    T = np.ones((height, width))
    done = np.zeros((height, width), dtype=bool)
    rgb = np.zeros((height, width, 3))
    nraw = np.zeros((height, width, 3))
    wsum = np.zeros((height, width))
    wdsum = np.zeros((height, width))
    wd2sum = np.zeros((height, width))
    dist = np.zeros((height, width))

    if len(cloud) > 0:
        pre = _preprocess(cloud, cam, sigma_cut)
        vis = np.nonzero(pre["visible"])[0]
        depth_v = pre["t"][vis, 2]
        order = vis[np.lexsort((pre["means2d"][vis, 0], depth_v))]

        ys, xs = np.mgrid[0:height, 0:width]
        xs = xs + 0.5
        ys = ys + 0.5
        for gid in order:
            mx, my = pre["means2d"][gid]
            ca, cb, cc = pre["conics"][gid]
            dx = xs - mx
            dy = ys - my
            sig = 0.5 * (ca * dx * dx + cc * dy * dy) + cb * dx * dy
            a = pre["alphas"][gid] * np.exp(-sig)
            cand = (~done) & (sig <= sigma_cut) & (sig >= 0.0) & (a >= ALPHA_MIN)
            if not cand.any():
                continue
            a = np.minimum(a, ALPHA_MAX)
            t_new = T * (1.0 - a)
            stop = cand & (t_new < T_MIN)
            acc = cand & ~stop
            w = np.where(acc, a * T, 0.0)
            d = pre["t"][gid, 2]
            rgb += w[..., None] * pre["colors"][gid]
            nraw += w[..., None] * pre["normals"][gid]
            dist += w * (d * wsum - wdsum)
            wsum += w
            wdsum += w * d
            wd2sum += w * d * d
            T = np.where(acc, t_new, T)
            done |= stop

    alpha = 1.0 - T
    rgb = rgb + T[..., None] * bg
    depth = wdsum / np.maximum(wsum, DEPTH_EPS)
    nn = np.linalg.norm(nraw, axis=-1, keepdims=True)
    normal = nraw / np.maximum(nn, NORM_FLOOR)
    if dist_l2:
        dist = wsum * wd2sum - wdsum * wdsum

    return RenderOutput(
        rgb=rgb,
        alpha=alpha,
        depth=depth,
        normal=normal,
        dist_value=dist,
        dist_stats=np.stack([wsum, wdsum, wd2sum], axis=-1),
        viewpoint=viewpoint,
        cam=cam,
        _ctx=None,
    )


def render_normal_from_depth(depth: np.ndarray, cam: CameraMatrices) -> np.ndarray:
    """Per-pixel normals from the back-projected depth map.

    Central finite differences of the camera-space surface, cross product of
    the screen-space tangents, unit length, camera-facing sign (z toward the
    camera).  Degenerate tangents yield (0, 0, 1).
    """
    h, w = depth.shape
    ys, xs = np.mgrid[0:h, 0:w]
    X = (xs + 0.5 - cam.cx) / cam.fx * depth
    Y = (ys + 0.5 - cam.cy) / cam.fy * depth
    P = np.stack([X, Y, depth], axis=-1)

    du = np.gradient(P, axis=1)
    dv = np.gradient(P, axis=0)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)
    degenerate = norm < 1e-12
    n = np.where(degenerate[..., None], np.array([0.0, 0.0, -1.0]), n / np.maximum(norm, 1e-12)[..., None])

    flip = np.einsum("hwc,hwc->hw", n, P) > 0.0
    n = np.where(flip[..., None], -n, n)
    return n * np.array([1.0, -1.0, -1.0])
