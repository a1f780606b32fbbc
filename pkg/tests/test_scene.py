import numpy as np
import pytest

from splatopt.scene import (
    GaussianCloud,
    PlyParseError,
    Viewpoint,
    init_cloud,
    load_cloud,
    logistic,
    save_cloud,
)


def test_init_cloud_positions_inside_sphere():
    cloud = init_cloud(5000, seed=0, radius=0.5)
    assert len(cloud) == 5000
    assert np.all(np.linalg.norm(cloud.positions, axis=1) <= 0.5 + 1e-6)


def test_init_cloud_single_gaussian_initial_opacity():
    cloud = init_cloud(1, seed=7, radius=0.5)
    assert len(cloud) == 1
    assert cloud.opacities()[0] == pytest.approx(0.1, abs=1e-6)


def test_init_cloud_deterministic():
    a = init_cloud(500, seed=3, radius=0.5)
    b = init_cloud(500, seed=3, radius=0.5)
    for name in ("positions", "rotations", "log_scales", "colors_raw", "opacities_raw"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_init_cloud_rejects_zero_count():
    with pytest.raises(ValueError):
        init_cloud(0, seed=0, radius=0.5)


def test_activation_ranges():
    cloud = init_cloud(200, seed=1, radius=0.5)
    cloud.validate()
    assert np.all(cloud.opacities() > 0) and np.all(cloud.opacities() < 1)
    assert np.all(cloud.colors() > 0) and np.all(cloud.colors() < 1)
    assert np.all(cloud.scales() > 0)


def test_rotation_normalization():
    cloud = init_cloud(10, seed=2, radius=0.5)
    cloud.rotations = (cloud.rotations.astype(np.float64) * 3.7).astype(np.float32)
    cloud.normalize_rotations()
    norms = np.linalg.norm(cloud.rotations.astype(np.float64), axis=1)
    assert np.allclose(norms, 1.0, atol=1e-6)


def test_ply_round_trip_identity(tmp_path):
    cloud = init_cloud(333, seed=5, radius=0.5)
    path = tmp_path / "cloud.ply"
    save_cloud(cloud, path)
    loaded = load_cloud(path)
    for name in ("positions", "rotations", "log_scales", "colors_raw", "opacities_raw"):
        assert np.array_equal(getattr(cloud, name), getattr(loaded, name)), name


def test_ply_cardinality_preserved(tmp_path):
    cloud = init_cloud(5000, seed=0, radius=0.5)
    path = tmp_path / "cloud.ply"
    save_cloud(cloud, path)
    assert len(load_cloud(path)) == 5000


def test_ply_truncated_file_errors(tmp_path):
    cloud = init_cloud(50, seed=0, radius=0.5)
    path = tmp_path / "cloud.ply"
    save_cloud(cloud, path)
    data = path.read_bytes()
    (tmp_path / "broken.ply").write_bytes(data[: len(data) - 37])
    with pytest.raises(PlyParseError, match="truncated"):
        load_cloud(tmp_path / "broken.ply")


def test_ply_missing_property_errors(tmp_path):
    bad = tmp_path / "bad.ply"
    bad.write_bytes(
        b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        b"property float x\nproperty float y\nproperty float z\nend_header\n"
        + b"\x00" * 12
    )
    with pytest.raises(PlyParseError, match="missing properties"):
        load_cloud(bad)


def test_ply_not_a_ply_errors(tmp_path):
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"obj\nnope\nend_header\n")
    with pytest.raises(PlyParseError, match="magic"):
        load_cloud(bad)


def test_viewpoint_validation():
    v = Viewpoint(20.0, 390.0)
    assert v.azimuth_deg == pytest.approx(30.0)
    with pytest.raises(ValueError):
        Viewpoint(95.0, 0.0)
    with pytest.raises(ValueError):
        Viewpoint(0.0, 0.0, radius=-1.0)
    with pytest.raises(ValueError):
        Viewpoint(0.0, 0.0, fov_y_deg=180.0)


def test_logistic_matches_inverse():
    assert logistic(0.0) == pytest.approx(0.5)
    from splatopt.scene import logit

    for p in (0.1, 0.5, 0.9):
        assert logistic(logit(p)) == pytest.approx(p, abs=1e-12)
