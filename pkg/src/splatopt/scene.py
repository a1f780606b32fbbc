"""Core scene types: viewpoints, Gaussians, and the optimizable Gaussian cloud.

Parameters are stored raw (pre-activation) so unconstrained gradient descent
cannot leave valid ranges:

    scale   = exp(log_scale)          > 0
    opacity = logistic(opacity_raw)   in (0, 1)
    color   = logistic(color_raw)     in (0, 1)^3

Storage is float32 (the splat-file convention); all numerics downstream are
done in float64 and cast back on write.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


def logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"logit domain is (0, 1), got {p}")
    return float(np.log(p / (1.0 - p)))


@dataclass(frozen=True)
class Viewpoint:
    """Camera placement on the viewing sphere, looking at the origin."""

    elevation_deg: float
    azimuth_deg: float
    radius: float = 2.0
    fov_y_deg: float = 30.0

    def __post_init__(self):
        if not -90.0 <= self.elevation_deg <= 90.0:
            raise ValueError(f"elevation {self.elevation_deg} outside [-90, 90]")
        if self.radius <= 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not 0.0 < self.fov_y_deg < 180.0:
            raise ValueError(f"fov_y {self.fov_y_deg} outside (0, 180)")
        object.__setattr__(self, "azimuth_deg", float(self.azimuth_deg) % 360.0)


@dataclass(frozen=True)
class Gaussian:
    """A single Gaussian record (raw parameterization)."""

    position: np.ndarray       # (3,)
    rotation: np.ndarray       # (4,) quaternion, w first
    log_scale: np.ndarray      # (3,)
    color_raw: np.ndarray      # (3,)
    opacity_raw: float


# dtype of every parameter array held by GaussianCloud
PARAM_DTYPE = np.float32

PARAM_NAMES = ("positions", "rotations", "log_scales", "colors_raw", "opacities_raw")


@dataclass
class GaussianCloud:
    """Struct-of-arrays Gaussian cloud plus Adam state and densification stats.

    All per-Gaussian arrays (parameters, optimizer moments, stats) share the
    same leading dimension at all times; densify/prune must edit them together.
    """

    positions: np.ndarray       # (N, 3) f32
    rotations: np.ndarray       # (N, 4) f32, unit quaternions (w, x, y, z)
    log_scales: np.ndarray      # (N, 3) f32
    colors_raw: np.ndarray      # (N, 3) f32
    opacities_raw: np.ndarray   # (N,)  f32

    adam_m: dict = field(default_factory=dict)   # name -> f64 array, same shape
    adam_v: dict = field(default_factory=dict)
    adam_step: int = 0

    grad_accum: np.ndarray = None   # (N,) f64, accumulated |dL/dposition|
    grad_count: np.ndarray = None   # (N,) int64

    def __post_init__(self):
        n = len(self)
        for name in PARAM_NAMES:
            arr = getattr(self, name)
            setattr(self, name, np.ascontiguousarray(arr, dtype=PARAM_DTYPE))
        if not self.adam_m:
            self.adam_m = {k: np.zeros_like(self._param(k), dtype=np.float64) for k in PARAM_NAMES}
            self.adam_v = {k: np.zeros_like(self._param(k), dtype=np.float64) for k in PARAM_NAMES}
        if self.grad_accum is None:
            self.grad_accum = np.zeros(n, dtype=np.float64)
        if self.grad_count is None:
            self.grad_count = np.zeros(n, dtype=np.int64)

    def _param(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def __len__(self) -> int:
        return self.positions.shape[0]

    # activations -------------------------------------------------------

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales.astype(np.float64))

    def opacities(self) -> np.ndarray:
        return logistic(self.opacities_raw.astype(np.float64))

    def colors(self) -> np.ndarray:
        return logistic(self.colors_raw.astype(np.float64))

    def normalize_rotations(self) -> None:
        q = self.rotations.astype(np.float64)
        norm = np.linalg.norm(q, axis=1, keepdims=True)
        norm[norm == 0.0] = 1.0
        self.rotations = (q / norm).astype(PARAM_DTYPE)

    def validate(self) -> None:
        """Assert the activation-range and state-length invariants."""
        n = len(self)
        if n == 0:
            raise ValueError("cloud is empty")
        for name in PARAM_NAMES:
            arr = self._param(name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
            if self.adam_m[name].shape != arr.shape:
                raise ValueError(f"adam state shape mismatch for {name}")
        if self.grad_accum.shape[0] != n or self.grad_count.shape[0] != n:
            raise ValueError("densification stats length mismatch")
        s = self.scales()
        if not (np.all(np.isfinite(s)) and np.all(s > 0)):
            raise ValueError("activated scales must be finite and positive")
        op = self.opacities()
        if not (np.all(op > 0) and np.all(op < 1)):
            raise ValueError("activated opacities left (0, 1)")

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i].copy(),
            rotation=self.rotations[i].copy(),
            log_scale=self.log_scales[i].copy(),
            color_raw=self.colors_raw[i].copy(),
            opacity_raw=float(self.opacities_raw[i]),
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            colors_raw=self.colors_raw.copy(),
            opacities_raw=self.opacities_raw.copy(),
            adam_m={k: v.copy() for k, v in self.adam_m.items()},
            adam_v={k: v.copy() for k, v in self.adam_v.items()},
            adam_step=self.adam_step,
            grad_accum=self.grad_accum.copy(),
            grad_count=self.grad_count.copy(),
        )


def from_gaussians(gaussians: list[Gaussian]) -> GaussianCloud:
    return GaussianCloud(
        positions=np.array([g.position for g in gaussians], dtype=PARAM_DTYPE).reshape(-1, 3),
        rotations=np.array([g.rotation for g in gaussians], dtype=PARAM_DTYPE).reshape(-1, 4),
        log_scales=np.array([g.log_scale for g in gaussians], dtype=PARAM_DTYPE).reshape(-1, 3),
        colors_raw=np.array([g.color_raw for g in gaussians], dtype=PARAM_DTYPE).reshape(-1, 3),
        opacities_raw=np.array([g.opacity_raw for g in gaussians], dtype=PARAM_DTYPE),
    )


def init_cloud(count: int, seed: int, radius: float = 0.5) -> GaussianCloud:
    """Seeded random cloud: uniform in a sphere, isotropic overlap-sized scales.

    Initial activated opacity is 0.1 and color mid-gray; rotations identity.
    Deterministic for a fixed (count, seed, radius).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)

    dirs = rng.normal(size=(count, 3))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    radii = radius * rng.random(count) ** (1.0 / 3.0)
    positions = dirs * radii[:, None]

    if count > 1:
        tree = cKDTree(positions)
        dist, _ = tree.query(positions, k=2)
        mean_nn = float(np.mean(dist[:, 1]))
        mean_nn = max(mean_nn, 1e-6)
    else:
        mean_nn = radius * 0.5
    log_scale = float(np.log(mean_nn))

    rotations = np.zeros((count, 4))
    rotations[:, 0] = 1.0

    return GaussianCloud(
        positions=positions,
        rotations=rotations,
        log_scales=np.full((count, 3), log_scale),
        colors_raw=np.full((count, 3), logit(0.5)),
        opacities_raw=np.full(count, logit(0.1)),
    )


# PLY serialization -------------------------------------------------------
#
# Binary little-endian PLY, one vertex per Gaussian, float32 properties in
# the common splat-file order so third-party viewers open it.

_PLY_PROPS = (
    "x", "y", "z",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "scale_0", "scale_1", "scale_2",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
)


class PlyParseError(ValueError):
    pass


def save_cloud(cloud: GaussianCloud, path) -> None:
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in _PLY_PROPS]
    header.append("end_header")
    data = np.concatenate(
        [
            cloud.positions,
            cloud.rotations,
            cloud.log_scales,
            cloud.colors_raw,
            cloud.opacities_raw[:, None],
        ],
        axis=1,
    ).astype("<f4")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def load_cloud(path) -> GaussianCloud:
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise PlyParseError(f"{path}: missing end_header")
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]

    if not header_lines or header_lines[0].strip() != "ply":
        raise PlyParseError(f"{path}: not a PLY file (bad magic)")
    count = None
    props: list[str] = []
    for line in header_lines[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "binary_little_endian":
                raise PlyParseError(f"{path}: unsupported format '{tok[1]}'")
        elif tok[0] == "element":
            if tok[1] != "vertex":
                raise PlyParseError(f"{path}: unsupported element '{tok[1]}'")
            count = int(tok[2])
        elif tok[0] == "property":
            if tok[1] != "float":
                raise PlyParseError(f"{path}: property '{tok[2]}' has non-float type '{tok[1]}'")
            props.append(tok[2])

    if count is None:
        raise PlyParseError(f"{path}: missing 'element vertex'")
    missing = [p for p in _PLY_PROPS if p not in props]
    if missing:
        raise PlyParseError(f"{path}: missing properties {missing}")

    row = len(props) * 4
    if len(body) < count * row:
        raise PlyParseError(
            f"{path}: truncated body, expected {count * row} bytes for "
            f"{count} vertices, got {len(body)}"
        )
    table = np.frombuffer(body[: count * row], dtype="<f4").reshape(count, len(props))
    col = {p: i for i, p in enumerate(props)}

    def grab(names):
        return np.stack([table[:, col[p]] for p in names], axis=1)

    return GaussianCloud(
        positions=grab(("x", "y", "z")),
        rotations=grab(("rot_0", "rot_1", "rot_2", "rot_3")),
        log_scales=grab(("scale_0", "scale_1", "scale_2")),
        colors_raw=grab(("f_dc_0", "f_dc_1", "f_dc_2")),
        opacities_raw=table[:, col["opacity"]].copy(),
    )
