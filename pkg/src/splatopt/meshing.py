"""Isosurface mesh extraction from the Gaussian density field and multi-view
texture baking.

The density field is sigma(x) = sum_i alpha_i * exp(-0.5 (x-mu_i)^T S_i^-1
(x-mu_i)), truncated at 3 sigma (Mahalanobis) per Gaussian.  Extraction runs
marching cubes on a padded grid, keeps the largest connected component,
smooths, decimates, and unwraps each triangle into its own atlas chart.

Baking initializes texels by visibility-weighted back-projection from the
bake views, then runs fixed-step gradient descent on the texels against the
bake images (a convex least-squares problem; the step size is bounded by the
sampling operator so the loss is monotone), and finally inpaints unseen
texels by dilation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from skimage import measure

from .camera import CameraMatrices, angular_distance, pose_matrix
from .mesh_render import bilinear_taps, render_geometry, sample_texture_bilinear
from .priors import PriorViewSet
from .rasterizer import quat_to_rotmat
from .scene import GaussianCloud, Viewpoint


class MeshExtractionError(RuntimeError):
    pass


@dataclass
class TexturedMesh:
    vertices: np.ndarray              # (V, 3)
    triangles: np.ndarray             # (T, 3) int
    uvs: np.ndarray | None = None     # (T, 3, 2) per-corner chart coordinates
    texture: np.ndarray | None = None  # (th, tw, 3) float in [0, 1]
    bake_report: dict = field(default_factory=dict)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def validate(self) -> None:
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= self.num_vertices:
            raise ValueError("triangle indices out of range")
        if self.uvs is not None:
            if self.uvs.shape != (self.num_triangles, 3, 2):
                raise ValueError("uv table shape mismatch")
            if self.uvs.min() < 0.0 or self.uvs.max() > 1.0:
                raise ValueError("uvs outside [0, 1]^2")

    def signed_volume(self) -> float:
        v = self.vertices
        t = self.triangles
        return float(
            np.sum(np.einsum("ij,ij->i", v[t[:, 0]], np.cross(v[t[:, 1]], v[t[:, 2]]))) / 6.0
        )

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)


def _covariances(cloud: GaussianCloud):
    q = cloud.rotations.astype(np.float64)
    q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    R = quat_to_rotmat(q)
    s = cloud.scales()
    inv_cov = np.einsum("nij,nj,nkj->nik", R, 1.0 / (s * s), R)
    return inv_cov, s


class DensityField:
    """Point-queryable Gaussian mixture density with a uniform grid index."""

    def __init__(self, cloud: GaussianCloud, cells_per_axis: int = 32):
        self.mu = cloud.positions.astype(np.float64)
        self.alpha = cloud.opacities()
        self.inv_cov, s = _covariances(cloud)
        self.reach = 3.0 * s.max(axis=1)

        lo = (self.mu - self.reach[:, None]).min(axis=0)
        hi = (self.mu + self.reach[:, None]).max(axis=0)
        self.origin = lo
        self.cell = np.maximum((hi - lo) / cells_per_axis, 1e-9)
        self.dims = np.maximum(np.ceil((hi - lo) / self.cell).astype(int), 1)

        buckets: dict[tuple, list] = {}
        lo_idx = np.clip(((self.mu - self.reach[:, None]) - lo) / self.cell, 0, self.dims - 1).astype(int)
        hi_idx = np.clip(((self.mu + self.reach[:, None]) - lo) / self.cell, 0, self.dims - 1).astype(int)
        for i in range(len(self.mu)):
            for a in range(lo_idx[i, 0], hi_idx[i, 0] + 1):
                for b in range(lo_idx[i, 1], hi_idx[i, 1] + 1):
                    for c in range(lo_idx[i, 2], hi_idx[i, 2] + 1):
                        buckets.setdefault((a, b, c), []).append(i)
        self.buckets = {k: np.array(v) for k, v in buckets.items()}

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        out = np.zeros(pts.shape[0])
        idx = np.floor((pts - self.origin) / self.cell).astype(int)
        in_grid = np.all((idx >= 0) & (idx < self.dims), axis=1)
        for i in np.nonzero(in_grid)[0]:
            cand = self.buckets.get(tuple(idx[i]))
            if cand is None:
                continue
            d = pts[i] - self.mu[cand]
            quad = np.einsum("ni,nij,nj->n", d, self.inv_cov[cand], d)
            near = quad <= 9.0
            out[i] = float(np.sum(self.alpha[cand][near] * np.exp(-0.5 * quad[near])))
        return out if points.ndim > 1 else out[0]


def density_at(cloud: GaussianCloud, points: np.ndarray):
    """Density of the cloud at one or many points (3-sigma truncated)."""
    return DensityField(cloud)(points)


def _density_grid(cloud: GaussianCloud, origin: np.ndarray, cell: float, res: int) -> np.ndarray:
    """Dense density evaluation by per-Gaussian local accumulation; agrees
    with `density_at` (same truncation)."""
    vol = np.zeros((res, res, res))
    mu = cloud.positions.astype(np.float64)
    alpha = cloud.opacities()
    inv_cov, s = _covariances(cloud)
    reach = 3.0 * s.max(axis=1)
    axes = [origin[d] + cell * np.arange(res) for d in range(3)]

    for i in range(len(mu)):
        lo = np.floor((mu[i] - reach[i] - origin) / cell).astype(int)
        hi = np.ceil((mu[i] + reach[i] - origin) / cell).astype(int)
        lo = np.clip(lo, 0, res - 1)
        hi = np.clip(hi, 0, res - 1)
        if np.any(lo > hi):
            continue
        xs = axes[0][lo[0]:hi[0] + 1] - mu[i, 0]
        ys = axes[1][lo[1]:hi[1] + 1] - mu[i, 1]
        zs = axes[2][lo[2]:hi[2] + 1] - mu[i, 2]
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        d = np.stack([gx, gy, gz], axis=-1)
        quad = np.einsum("...i,ij,...j->...", d, inv_cov[i], d)
        contrib = np.where(quad <= 9.0, alpha[i] * np.exp(-0.5 * quad), 0.0)
        vol[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] += contrib
    return vol


def _largest_component(vertices, triangles):
    nv = vertices.shape[0]
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    adj = sparse.coo_matrix(
        (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(nv, nv)
    )
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp <= 1:
        return vertices, triangles
    biggest = np.argmax(np.bincount(labels))
    keep_tri = np.all(labels[triangles] == biggest, axis=1)
    triangles = triangles[keep_tri]
    used = np.unique(triangles)
    remap = np.full(nv, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return vertices[used], remap[triangles]


def _laplacian_smooth(vertices, triangles, iterations: int = 5, lam: float = 0.5):
    nv = vertices.shape[0]
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    both = np.concatenate([edges, edges[:, ::-1]])
    adj = sparse.csr_matrix(
        (np.ones(len(both)), (both[:, 0], both[:, 1])), shape=(nv, nv)
    )
    adj.data[:] = 1.0
    deg = np.maximum(adj.sum(axis=1).A1, 1.0)
    v = vertices.copy()
    for _ in range(iterations):
        v = v + lam * (adj @ v / deg[:, None] - v)
    return v


def _cluster_decimate(vertices, triangles, max_triangles: int):
    """Vertex-clustering decimation: snap to a coarser lattice, merge, drop
    degenerate faces.  Coarsens until under the budget."""
    res = 96
    while triangles.shape[0] > max_triangles and res >= 8:
        lo = vertices.min(axis=0)
        extent = max(float((vertices.max(axis=0) - lo).max()), 1e-9)
        cell = extent / res
        key = np.floor((vertices - lo) / cell).astype(np.int64)
        flat = (key[:, 0] * 73856093) ^ (key[:, 1] * 19349663) ^ (key[:, 2] * 83492791)
        _, inverse = np.unique(flat, return_inverse=True)
        n_clusters = inverse.max() + 1
        new_v = np.zeros((n_clusters, 3))
        counts = np.bincount(inverse, minlength=n_clusters).astype(float)
        for d in range(3):
            new_v[:, d] = np.bincount(inverse, weights=vertices[:, d], minlength=n_clusters) / counts
        new_t = inverse[triangles]
        ok = (
            (new_t[:, 0] != new_t[:, 1])
            & (new_t[:, 1] != new_t[:, 2])
            & (new_t[:, 0] != new_t[:, 2])
        )
        vertices, triangles = new_v, new_t[ok]
        res = res // 2 if triangles.shape[0] > max_triangles else res
    return vertices, triangles


def _atlas_uvs(n_triangles: int, margin_frac: float = 0.18) -> np.ndarray:
    """One right-triangle chart per face, packed on a square grid."""
    n = int(math.ceil(math.sqrt(max(n_triangles, 1))))
    cell = 1.0 / n
    m = margin_frac * cell
    uvs = np.empty((n_triangles, 3, 2))
    for t in range(n_triangles):
        cx = (t % n) * cell
        cy = (t // n) * cell
        uvs[t, 0] = (cx + m, cy + m)
        uvs[t, 1] = (cx + cell - m, cy + m)
        uvs[t, 2] = (cx + m, cy + cell - m)
    return uvs


def extract_mesh(
    cloud: GaussianCloud,
    grid_resolution: int = 128,
    iso_threshold: float = 1.0,
    max_triangles: int = 50_000,
    smooth_iterations: int = 5,
) -> TexturedMesh:
    """Marching-cubes isosurface of the density field (untextured mesh)."""
    if len(cloud) == 0:
        raise MeshExtractionError("cloud is empty")

    mu = cloud.positions.astype(np.float64)
    _, s = _covariances(cloud)
    reach = 3.0 * s.max(axis=1)
    lo = (mu - reach[:, None]).min(axis=0)
    hi = (mu + reach[:, None]).max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.55 * float((hi - lo).max())   # +10% margin on the bounding box
    origin = center - half
    cell = 2.0 * half / (grid_resolution - 1)

    vol = _density_grid(cloud, origin, cell, grid_resolution)
    peak = float(vol.max())
    if iso_threshold >= peak:
        raise MeshExtractionError(
            f"iso threshold {iso_threshold} is above the peak density {peak:.4g}; "
            f"lower the threshold"
        )

    verts, faces, _, _ = measure.marching_cubes(vol, level=iso_threshold, spacing=(cell, cell, cell))
    verts = verts + origin
    faces = faces.astype(np.int64)

    verts, faces = _largest_component(verts, faces)
    verts = _laplacian_smooth(verts, faces, iterations=smooth_iterations)
    if faces.shape[0] > max_triangles:
        verts, faces = _cluster_decimate(verts, faces, max_triangles)

    mesh = TexturedMesh(vertices=verts, triangles=faces)
    if mesh.signed_volume() < 0.0:
        mesh.triangles = mesh.triangles[:, ::-1].copy()
    mesh.uvs = _atlas_uvs(mesh.num_triangles)
    mesh.validate()
    return mesh


# texture baking ------------------------------------------------------------


def _texel_table(mesh: TexturedMesh, tex_resolution: int):
    """For every texel inside a chart: its triangle id and barycentrics."""
    th = tw = tex_resolution
    tri_of = np.full((th, tw), -1, dtype=np.int64)
    bary_of = np.zeros((th, tw, 3))
    for t in range(mesh.num_triangles):
        uv = mesh.uvs[t] * np.array([tw, th])
        lo = np.floor(uv.min(axis=0)).astype(int)
        hi = np.ceil(uv.max(axis=0)).astype(int)
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, [tw - 1, th - 1])
        if np.any(lo > hi):
            continue
        xs = np.arange(lo[0], hi[0] + 1) + 0.5
        ys = np.arange(lo[1], hi[1] + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        d = np.stack([gx, gy], axis=-1)
        e1 = uv[1] - uv[0]
        e2 = uv[2] - uv[0]
        det = e1[0] * e2[1] - e1[1] * e2[0]
        if det == 0.0:
            continue
        r = d - uv[0]
        a = (r[..., 0] * e2[1] - r[..., 1] * e2[0]) / det
        b = (e1[0] * r[..., 1] - e1[1] * r[..., 0]) / det
        c = 1.0 - a - b
        inside = (a >= 0) & (b >= 0) & (c >= 0)
        yy, xx = np.nonzero(inside)
        tri_of[ys[yy].astype(int), xs[xx].astype(int)] = t
        bary_of[ys[yy].astype(int), xs[xx].astype(int)] = np.stack(
            [c[inside], a[inside], b[inside]], axis=-1
        )
    return tri_of, bary_of


def _dilate_inpaint(texture: np.ndarray, seen: np.ndarray, max_rounds: int = 4096) -> np.ndarray:
    tex = texture.copy()
    seen = seen.copy()
    for _ in range(max_rounds):
        if seen.all():
            break
        sf = seen.astype(np.float64)
        acc = np.zeros_like(tex)
        cnt = np.zeros_like(sf)
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            acc += np.roll(tex * sf[..., None], (dy, dx), axis=(0, 1))
            cnt += np.roll(sf, (dy, dx), axis=(0, 1))
        newly = (~seen) & (cnt > 0)
        if not newly.any():
            break
        tex[newly] = acc[newly] / cnt[newly][..., None]
        seen |= newly
    return tex


DEFAULT_BAKE_ANGLES = ((20.0, 30.0), (20.0, 150.0), (20.0, 270.0))


def default_bake_indices(priors: PriorViewSet) -> list[int]:
    """Prior views closest to the three canonical bake angles (deduplicated)."""
    picks = []
    for elev, azim in DEFAULT_BAKE_ANGLES:
        probe = Viewpoint(elev, azim, priors.viewpoints[0].radius,
                          priors.viewpoints[0].fov_y_deg)
        dists = [angular_distance(probe, vp) for vp in priors.viewpoints]
        picks.append(int(np.argmin(dists)))
    out = []
    for p in picks:
        if p not in out:
            out.append(p)
    return out


def bake_texture(
    mesh: TexturedMesh,
    priors: PriorViewSet,
    bake_indices: list[int] | None = None,
    steps: int = 50,
    tex_resolution: int = 1024,
    bake_resolution: int = 256,
    background=(1.0, 1.0, 1.0),
) -> TexturedMesh:
    """Back-project the bake views into the atlas, refine texels by gradient
    descent on the render error, inpaint unseen texels.

    steps=0 leaves the pure back-projection (exposed for ablation).
    """
    if mesh.uvs is None:
        raise ValueError("mesh has no uv atlas")
    if bake_indices is None:
        bake_indices = default_bake_indices(priors)
    bg = np.asarray(background, dtype=np.float64)
    th = tw = tex_resolution

    tri_of, bary_of = _texel_table(mesh, tex_resolution)
    texel_mask = tri_of >= 0
    t_ids = tri_of[texel_mask]
    t_bary = bary_of[texel_mask]
    corners = mesh.vertices[mesh.triangles[t_ids]]       # (K, 3, 3)
    points = np.einsum("kc,kcd->kd", t_bary, corners)    # (K, 3)
    normals = mesh.face_normals()[t_ids]

    texture = np.zeros((th, tw, 3))
    weight = np.zeros((th, tw))
    tex_flat = texture[texel_mask]
    w_flat = np.zeros(points.shape[0])

    views = []
    for vi in bake_indices:
        vp = priors.viewpoints[vi]
        img = priors.images[vi]
        a = img[..., 3:4]
        target_full = img[..., :3] * a + bg * (1.0 - a)
        cam = pose_matrix(vp, bake_resolution, bake_resolution)
        depth, triid, bary = render_geometry(mesh.vertices, mesh.triangles, cam)
        if (triid >= 0).sum() == 0:
            continue   # view sees no geometry; skip with a warning-by-report
        views.append((vp, cam, target_full, depth, triid, bary))

    # back-projection initialization
    cam_positions = []
    for vp, cam, target_full, depth, triid, bary in views:
        pts_cam = cam.world_to_cam_points(points)
        z = pts_cam[:, 2]
        u = cam.fx * pts_cam[:, 0] / np.maximum(z, 1e-9) + cam.cx
        v = cam.fy * pts_cam[:, 1] / np.maximum(z, 1e-9) + cam.cy
        ui = np.clip(np.round(u - 0.5).astype(int), 0, bake_resolution - 1)
        vi_ = np.clip(np.round(v - 0.5).astype(int), 0, bake_resolution - 1)
        vis = (
            (z > 1e-6)
            & (u >= 0.5) & (u <= bake_resolution - 0.5)
            & (v >= 0.5) & (v <= bake_resolution - 0.5)
            & (np.abs(depth[vi_, ui] - z) <= 0.005 * np.maximum(z, 1e-9))
        )
        cam_pos = -cam.rotation.T @ cam.translation
        to_cam = cam_pos - points
        to_cam /= np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-12)
        cosw = np.maximum(np.einsum("kd,kd->k", normals, to_cam), 0.0)
        wv = np.where(vis, cosw, 0.0)
        # resample the target at the projected texel positions
        uv01 = np.stack([u / bake_resolution, v / bake_resolution], axis=-1)
        col = sample_texture_bilinear(target_full, uv01)
        tex_flat += wv[:, None] * col
        w_flat += wv
        cam_positions.append(cam_pos)

    seen_flat = w_flat > 0
    tex_flat[seen_flat] /= w_flat[seen_flat][:, None]
    texture[texel_mask] = tex_flat
    weight[texel_mask] = w_flat
    seen = weight > 0

    # fixed-step gradient descent on the texels (linear sampling operator)
    report = {"loss_trace": [], "views": [int(i) for i in bake_indices]}
    if views and steps > 0:
        maps = []
        norm = 0.0
        col_sum = np.zeros(th * tw)
        for vp, cam, target_full, depth, triid, bary in views:
            fg = triid >= 0
            tids = triid[fg]
            uv = np.einsum("kc,kcd->kd", bary[fg], mesh.uvs[tids])
            idx, wts = bilinear_taps(uv, th, tw)
            maps.append((fg, target_full[fg], idx, wts))
            norm += fg.sum() * 3.0
            np.add.at(col_sum, idx.ravel(), wts.ravel())
        lipschitz = 2.0 * float(col_sum.max()) / norm
        lr = 1.0 / lipschitz

        tex_v = texture.reshape(-1, 3)
        for _ in range(steps):
            loss = 0.0
            grad = np.zeros_like(tex_v)
            for fg, target, idx, wts in maps:
                render = np.einsum("kj,kjc->kc", wts, tex_v[idx])
                resid = render - target
                loss += float(np.sum(resid * resid))
                contrib = 2.0 * wts[..., None] * resid[:, None, :]
                for c in range(3):
                    grad[:, c] += np.bincount(
                        idx.ravel(), weights=contrib[..., c].ravel(), minlength=th * tw
                    )
            loss /= norm
            grad /= norm
            report["loss_trace"].append(loss)
            tex_v -= lr * grad
        texture = np.clip(tex_v.reshape(th, tw, 3), 0.0, 1.0)
        seen = seen | (col_sum.reshape(th, tw) > 0)

    texture = _dilate_inpaint(texture, seen)

    baked = TexturedMesh(
        vertices=mesh.vertices,
        triangles=mesh.triangles,
        uvs=mesh.uvs,
        texture=texture,
        bake_report=report,
    )

    # re-render the bake views for the report (full-image comparison, the
    # same protocol the view metrics use)
    psnrs = []
    for vp, cam, target_full, depth, triid, bary in views:
        render = render_textured(baked, cam, background=bg)
        mse = float(np.mean((render - target_full) ** 2))
        psnrs.append(10.0 * math.log10(1.0 / max(mse, 1e-10)))
    report["view_psnr"] = psnrs
    return baked


def render_textured(mesh: TexturedMesh, cam: CameraMatrices, background=(1.0, 1.0, 1.0)):
    """RGB render of the textured mesh over a solid background."""
    bg = np.asarray(background, dtype=np.float64)
    depth, triid, bary = render_geometry(mesh.vertices, mesh.triangles, cam)
    out = np.tile(bg, (cam.height, cam.width, 1))
    fg = triid >= 0
    if fg.any() and mesh.texture is not None and mesh.uvs is not None:
        tids = triid[fg]
        uv = np.einsum("kc,kcd->kd", bary[fg], mesh.uvs[tids])
        out[fg] = sample_texture_bilinear(mesh.texture, uv)
    elif fg.any():
        out[fg] = 0.5
    return out


def render_mesh_alpha(mesh: TexturedMesh, cam: CameraMatrices) -> np.ndarray:
    _, triid, _ = render_geometry(mesh.vertices, mesh.triangles, cam)
    return (triid >= 0).astype(np.float64)


# OBJ round-trip ------------------------------------------------------------


def export_obj(mesh: TexturedMesh, path) -> None:
    """OBJ + MTL + PNG texture; UVs written per corner (v/vt indices)."""
    from pathlib import Path
    from .priors import save_rgb

    path = Path(path)
    stem = path.stem
    mtl_path = path.with_suffix(".mtl")
    tex_path = path.with_name(f"{stem}_texture.png")

    lines = [f"mtllib {mtl_path.name}", "usemtl baked"]
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}")
    if mesh.uvs is not None:
        for t in range(mesh.num_triangles):
            for c in range(3):
                u, vv = mesh.uvs[t, c]
                # OBJ vt origin is bottom-left; atlas origin is top-left
                lines.append(f"vt {u:.8f} {1.0 - vv:.8f}")
        for t, tri in enumerate(mesh.triangles):
            vt = 3 * t
            lines.append(
                f"f {tri[0]+1}/{vt+1} {tri[1]+1}/{vt+2} {tri[2]+1}/{vt+3}"
            )
    else:
        for tri in mesh.triangles:
            lines.append(f"f {tri[0]+1} {tri[1]+1} {tri[2]+1}")
    path.write_text("\n".join(lines) + "\n")

    mtl = ["newmtl baked", "Ka 1.0 1.0 1.0", "Kd 1.0 1.0 1.0", "Ks 0.0 0.0 0.0"]
    if mesh.texture is not None:
        mtl.append(f"map_Kd {tex_path.name}")
        save_rgb(mesh.texture, tex_path)
    mtl_path.write_text("\n".join(mtl) + "\n")


def import_obj(path) -> TexturedMesh:
    from pathlib import Path
    from .priors import load_rgba

    path = Path(path)
    vertices, uvs_flat, faces, face_uvs = [], [], [], []
    tex = None
    for line in path.read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            vertices.append([float(x) for x in tok[1:4]])
        elif tok[0] == "vt":
            uvs_flat.append([float(tok[1]), 1.0 - float(tok[2])])
        elif tok[0] == "f":
            vs, ts = [], []
            for part in tok[1:4]:
                bits = part.split("/")
                vs.append(int(bits[0]) - 1)
                if len(bits) > 1 and bits[1]:
                    ts.append(int(bits[1]) - 1)
            faces.append(vs)
            if ts:
                face_uvs.append(ts)
        elif tok[0] == "mtllib":
            mtl_path = path.parent / tok[1]
            if mtl_path.exists():
                for ml in mtl_path.read_text().splitlines():
                    mt = ml.split()
                    if mt and mt[0] == "map_Kd":
                        tex = load_rgba(path.parent / mt[1])[..., :3]

    vertices = np.array(vertices)
    triangles = np.array(faces, dtype=np.int64)
    uvs = None
    if face_uvs:
        uvs_flat = np.array(uvs_flat)
        uvs = np.stack([uvs_flat[np.array(fu)] for fu in face_uvs])
    return TexturedMesh(vertices=vertices, triangles=triangles, uvs=uvs, texture=tex)
