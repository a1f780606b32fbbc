"""View geometry: angular distances between viewpoints and camera matrices.

Conventions, fixed once for the whole package:
  * world is right-handed, y up;
  * azimuth 0 places the camera on +z looking toward the origin (along -z),
    increasing counterclockwise when viewed from +y;
  * camera space is OpenCV-style: x right, y down, z forward (into the
    scene);  pixel (row, col) has center (col + 0.5, row + 0.5);
  * normals handed to callers are reported in a z-toward-camera frame
    (flip y and z of camera space), so a camera-facing plane has
    normal (0, 0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import Viewpoint


@dataclass(frozen=True)
class RelativeAngles:
    """Signed (azimuth, elevation) offsets between two viewpoints."""

    d_azimuth_deg: float     # wrapped into (-180, 180]
    d_elevation_deg: float


def _wrap180(angle: float) -> float:
    # into (-180, 180]
    a = (angle + 180.0) % 360.0 - 180.0
    return 180.0 if a == -180.0 else a


def relative_angles(p: Viewpoint, r: Viewpoint) -> RelativeAngles:
    return RelativeAngles(
        d_azimuth_deg=_wrap180(p.azimuth_deg - r.azimuth_deg),
        d_elevation_deg=p.elevation_deg - r.elevation_deg,
    )


def angular_distance(p: Viewpoint, r: Viewpoint) -> float:
    """Great-circle angle in degrees between the two view directions.

    Spherical law of cosines in colatitude form (colatitude = elevation + 90);
    the arccos argument is clamped against round-off at coincident or
    antipodal inputs.
    """
    bp = math.radians(p.elevation_deg + 90.0)
    br = math.radians(r.elevation_deg + 90.0)
    dt = math.radians(p.azimuth_deg - r.azimuth_deg)
    c = math.cos(bp) * math.cos(br) + math.sin(bp) * math.sin(br) * math.cos(dt)
    c = min(1.0, max(-1.0, c))
    return abs(math.degrees(math.acos(c)))


def select_closest_prior(p: Viewpoint, priors) -> int:
    """Index of the prior viewpoint with smallest angular distance to p.

    Ties break toward the lowest index.  `priors` is a PriorViewSet or any
    object with a `viewpoints` sequence.
    """
    viewpoints = getattr(priors, "viewpoints", priors)
    viewpoints = list(viewpoints)
    if not viewpoints:
        raise ValueError("prior set is empty")
    best, best_d = 0, float("inf")
    for i, r in enumerate(viewpoints):
        d = angular_distance(p, r)
        if d < best_d:
            best, best_d = i, d
    return best


def camera_position(v: Viewpoint) -> np.ndarray:
    e = math.radians(v.elevation_deg)
    a = math.radians(v.azimuth_deg)
    return v.radius * np.array(
        [math.cos(e) * math.sin(a), math.sin(e), math.cos(e) * math.cos(a)]
    )


@dataclass(frozen=True)
class CameraMatrices:
    """World-to-camera rotation/translation plus pinhole intrinsics."""

    rotation: np.ndarray      # (3, 3), rows = camera axes in world coords
    translation: np.ndarray   # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @property
    def world_to_camera(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def camera_to_world(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.T
        m[:3, 3] = -self.rotation.T @ self.translation
        return m

    @property
    def projection(self) -> np.ndarray:
        """Perspective projection mapping camera space to pixel coordinates
        (homogeneous: divide by the last row's z)."""
        return np.array(
            [
                [self.fx, 0.0, self.cx, 0.0],
                [0.0, self.fy, self.cy, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ]
        )

    def world_to_cam_points(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def project_points(self, points: np.ndarray) -> np.ndarray:
        """World points -> (u, v, z_cam). No visibility handling."""
        cam = self.world_to_cam_points(points)
        z = cam[:, 2:3]
        uv = cam[:, :2] / z * np.array([self.fx, self.fy]) + np.array([self.cx, self.cy])
        return np.concatenate([uv, z], axis=1)


def pose_matrix(v: Viewpoint, width: int, height: int) -> CameraMatrices:
    """Look-at camera for a viewpoint on the sphere, y-up, centered on origin."""
    pos = camera_position(v)
    forward = -pos / np.linalg.norm(pos)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        # looking straight up/down: pick a stable right axis
        right = np.array([1.0, 0.0, 0.0])
        nr = 1.0
    right = right / nr
    down = np.cross(forward, right)

    rotation = np.stack([right, down, forward])
    translation = -rotation @ pos
    fy = 0.5 * height / math.tan(0.5 * math.radians(v.fov_y_deg))
    return CameraMatrices(
        rotation=rotation,
        translation=translation,
        fx=fy,
        fy=fy,
        cx=0.5 * width,
        cy=0.5 * height,
        width=width,
        height=height,
    )
