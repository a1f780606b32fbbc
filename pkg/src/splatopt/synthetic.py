"""Synthetic reference scenes for oracle-driven runs and regression tasks."""

from __future__ import annotations

import numpy as np

from .scene import GaussianCloud, logit

FACE_COLORS = (
    (0.9, 0.15, 0.15),   # +x red
    (0.15, 0.9, 0.15),   # -x green
    (0.15, 0.15, 0.9),   # +y blue
    (0.9, 0.9, 0.15),    # -y yellow
    (0.9, 0.15, 0.9),    # +z magenta
    (0.15, 0.9, 0.9),    # -z cyan
)


def cube_cloud(half: float = 0.35, per_face: int = 8) -> GaussianCloud:
    """Axis-aligned cube with one flat color per face, built from thin
    face-aligned Gaussians on a per-face grid."""
    spacing = 2.0 * half / per_face
    sigma = spacing * 0.65
    thin = sigma * 0.12
    lin = (np.arange(per_face) + 0.5) * spacing - half

    positions, log_scales, colors = [], [], []
    for face in range(6):
        axis = face // 2
        sign = 1.0 if face % 2 == 0 else -1.0
        u, v = np.meshgrid(lin, lin)
        flat = np.zeros((per_face * per_face, 3))
        others = [a for a in range(3) if a != axis]
        flat[:, others[0]] = u.ravel()
        flat[:, others[1]] = v.ravel()
        flat[:, axis] = sign * half
        positions.append(flat)
        ls = np.full((per_face * per_face, 3), np.log(sigma))
        ls[:, axis] = np.log(thin)
        log_scales.append(ls)
        colors.append(np.tile(logit_color(FACE_COLORS[face]), (per_face * per_face, 1)))

    n = 6 * per_face * per_face
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    return GaussianCloud(
        positions=np.concatenate(positions),
        rotations=rotations,
        log_scales=np.concatenate(log_scales),
        colors_raw=np.concatenate(colors),
        opacities_raw=np.full(n, logit(0.95)),
    )


def blob_cloud() -> GaussianCloud:
    """Three large overlapping anisotropic Gaussians with distinct colors."""
    positions = np.array(
        [
            [-0.18, 0.05, 0.0],
            [0.2, -0.1, 0.08],
            [0.0, 0.18, -0.12],
        ]
    )
    rotations = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.92387953, 0.38268343, 0.0, 0.0],       # 45 deg about x
            [0.92387953, 0.0, 0.38268343, 0.0],       # 45 deg about y
        ]
    )
    log_scales = np.log(
        np.array(
            [
                [0.16, 0.11, 0.13],
                [0.12, 0.18, 0.1],
                [0.14, 0.1, 0.17],
            ]
        )
    )
    colors_raw = np.stack(
        [
            logit_color((0.85, 0.3, 0.2)),
            logit_color((0.25, 0.7, 0.85)),
            logit_color((0.8, 0.75, 0.2)),
        ]
    )
    return GaussianCloud(
        positions=positions,
        rotations=rotations,
        log_scales=log_scales,
        colors_raw=colors_raw,
        opacities_raw=np.full(3, logit(0.9)),
    )


def logit_color(rgb) -> np.ndarray:
    c = np.clip(np.asarray(rgb, dtype=np.float64), 0.02, 0.98)
    return np.log(c / (1.0 - c))


REFERENCE_SCENES = {"cube": cube_cloud, "blobs": blob_cloud}
