import math

import numpy as np
import pytest

from splatopt.camera import (
    angular_distance,
    camera_position,
    pose_matrix,
    relative_angles,
    select_closest_prior,
)
from splatopt.scene import Viewpoint

from conftest import paper_six_viewpoints


def unit_direction(v: Viewpoint) -> np.ndarray:
    """Independent oracle: explicit unit vector from (elevation, azimuth)."""
    b = math.radians(v.elevation_deg)
    t = math.radians(v.azimuth_deg)
    return np.array([math.cos(b) * math.cos(t), math.cos(b) * math.sin(t), math.sin(b)])


def oracle_distance(p: Viewpoint, r: Viewpoint) -> float:
    c = float(np.clip(np.dot(unit_direction(p), unit_direction(r)), -1.0, 1.0))
    return math.degrees(math.acos(c))


def test_relative_angles_identity():
    p = Viewpoint(12.0, 77.0)
    d = relative_angles(p, p)
    assert d.d_azimuth_deg == 0.0 and d.d_elevation_deg == 0.0


def test_relative_angles_subtraction():
    d = relative_angles(Viewpoint(20.0, 30.0), Viewpoint(-10.0, 90.0))
    assert d.d_azimuth_deg == pytest.approx(-60.0)
    assert d.d_elevation_deg == pytest.approx(30.0)


def test_relative_angles_wraps():
    d = relative_angles(Viewpoint(0.0, 350.0), Viewpoint(0.0, 10.0))
    assert d.d_azimuth_deg == pytest.approx(-20.0)
    assert d.d_elevation_deg == 0.0


def test_angular_distance_identity():
    p = Viewpoint(20.0, 30.0)
    assert angular_distance(p, p) == pytest.approx(0.0, abs=1e-9)


def test_angular_distance_equatorial_quarter_turn():
    assert angular_distance(Viewpoint(0.0, 0.0), Viewpoint(0.0, 90.0)) == pytest.approx(90.0)


def test_angular_distance_known_pair():
    # frozen from the unit-vector oracle
    p, r = Viewpoint(20.0, 30.0), Viewpoint(-10.0, 90.0)
    expected = oracle_distance(p, r)
    assert expected == pytest.approx(66.2, abs=0.05)
    assert angular_distance(p, r) == pytest.approx(expected, abs=1e-9)


def test_angular_distance_matches_unit_vector_oracle():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        p = Viewpoint(float(rng.uniform(-90, 90)), float(rng.uniform(0, 360)))
        r = Viewpoint(float(rng.uniform(-90, 90)), float(rng.uniform(0, 360)))
        assert abs(angular_distance(p, r) - oracle_distance(p, r)) < 1e-9


def test_angular_distance_properties():
    rng = np.random.default_rng(12)
    for _ in range(200):
        p = Viewpoint(float(rng.uniform(-90, 90)), float(rng.uniform(0, 360)))
        r = Viewpoint(float(rng.uniform(-90, 90)), float(rng.uniform(0, 360)))
        d = angular_distance(p, r)
        assert 0.0 <= d <= 180.0
        assert d == pytest.approx(angular_distance(r, p), abs=1e-12)


def test_select_closest_prior_exact_match(six_viewpoints):
    assert select_closest_prior(six_viewpoints[3], six_viewpoints) == 3


def test_select_closest_prior_known_query(six_viewpoints):
    # brute-forced with the unit-vector oracle: (-10, 330) at ~31.5 deg beats
    # (20, 270) at ~35.5 deg
    p = Viewpoint(0.0, 300.0)
    dists = [oracle_distance(p, r) for r in six_viewpoints]
    assert int(np.argmin(dists)) == 5
    assert select_closest_prior(p, six_viewpoints) == 5


def test_select_closest_prior_tie_breaks_low_index():
    priors = [Viewpoint(0.0, 40.0), Viewpoint(0.0, 320.0)]
    assert select_closest_prior(Viewpoint(0.0, 0.0), priors) == 0


def test_select_closest_prior_empty_errors():
    with pytest.raises(ValueError):
        select_closest_prior(Viewpoint(0.0, 0.0), [])


def test_select_closest_prior_rotation_invariant():
    rng = np.random.default_rng(13)
    priors = paper_six_viewpoints()
    for _ in range(50):
        p = Viewpoint(float(rng.uniform(-30, 30)), float(rng.uniform(0, 360)))
        shift = float(rng.uniform(0, 360))
        rotated_p = Viewpoint(p.elevation_deg, p.azimuth_deg + shift)
        rotated_priors = [Viewpoint(r.elevation_deg, r.azimuth_deg + shift) for r in priors]
        assert select_closest_prior(p, priors) == select_closest_prior(rotated_p, rotated_priors)


def test_pose_front_view_position():
    v = Viewpoint(0.0, 0.0, radius=2.0)
    assert np.allclose(camera_position(v), [0.0, 0.0, 2.0], atol=1e-12)


def test_origin_projects_to_image_center():
    rng = np.random.default_rng(14)
    for _ in range(20):
        v = Viewpoint(float(rng.uniform(-89, 89)), float(rng.uniform(0, 360)), 2.0, 30.0)
        cam = pose_matrix(v, 64, 48)
        uvz = cam.project_points(np.zeros((1, 3)))
        assert uvz[0, 0] == pytest.approx(32.0, abs=1e-9)
        assert uvz[0, 1] == pytest.approx(24.0, abs=1e-9)
        assert uvz[0, 2] == pytest.approx(2.0, abs=1e-9)


def test_pose_inverse_identity():
    v = Viewpoint(25.0, 123.0, 2.0, 30.0)
    cam = pose_matrix(v, 64, 64)
    assert np.allclose(cam.world_to_camera @ cam.camera_to_world, np.eye(4), atol=1e-6)
