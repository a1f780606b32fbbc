import json

import numpy as np
import pytest

from splatopt.camera import RelativeAngles
from splatopt.priors import (
    DEFAULT_PRIOR_ANGLES,
    OraclePrior,
    PriorError,
    PriorServiceConnectionError,
    PriorServiceHTTPError,
    PriorServiceSchemaError,
    PriorViewSet,
    RemotePrior,
    SdsContext,
    decode_noise_png,
    decode_rgba_png,
    encode_noise_png,
    encode_rgba_png,
    load_prior_set,
    save_prior_set,
    save_rgba,
)
from splatopt.scene import Viewpoint

from conftest import make_random_cloud, paper_six_viewpoints


def _write_manifest(tmp_path, views, resolution=32):
    entries = []
    rng = np.random.default_rng(0)
    for i, (e, a) in enumerate(views):
        img = rng.random((resolution, resolution, 4))
        name = f"v{i}.png"
        save_rgba(img, tmp_path / name)
        entries.append(
            {"elevation_deg": e, "azimuth_deg": a, "radius": 2.0, "image": name}
        )
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"resolution": resolution, "views": entries}))
    return path


def test_load_prior_set_six_views(tmp_path):
    path = _write_manifest(tmp_path, DEFAULT_PRIOR_ANGLES)
    ps = load_prior_set(path)
    assert len(ps) == 6
    assert ps.viewpoints[0].elevation_deg == 20.0
    assert ps.viewpoints[0].azimuth_deg == 30.0
    assert ps.resolution == (32, 32)


def test_load_prior_set_four_views(tmp_path):
    path = _write_manifest(tmp_path, DEFAULT_PRIOR_ANGLES[:4])
    assert len(load_prior_set(path)) == 4


def test_load_prior_set_duplicate_viewpoints_rejected(tmp_path):
    path = _write_manifest(tmp_path, [(20.0, 30.0), (20.0, 30.0)])
    with pytest.raises(ValueError, match="duplicate"):
        load_prior_set(path)


def test_load_prior_set_missing_image(tmp_path):
    path = _write_manifest(tmp_path, DEFAULT_PRIOR_ANGLES[:2])
    (tmp_path / "v1.png").unlink()
    with pytest.raises(PriorError, match="not found"):
        load_prior_set(path)


def test_load_prior_set_resolution_mismatch_without_resize(tmp_path):
    path = _write_manifest(tmp_path, DEFAULT_PRIOR_ANGLES[:2], resolution=32)
    with pytest.raises(PriorError, match="resize is disabled"):
        load_prior_set(path, resolution=64, resize=False)
    ps = load_prior_set(path, resolution=64, resize=True)
    assert ps.resolution == (64, 64)


def test_save_then_load_round_trip(tmp_path, six_viewpoints):
    rng = np.random.default_rng(1)
    images = [np.round(rng.random((16, 16, 4)) * 255) / 255 for _ in range(6)]
    ps = PriorViewSet(viewpoints=six_viewpoints, images=images, source_tag="test")
    manifest = save_prior_set(ps, tmp_path / "out")
    loaded = load_prior_set(manifest)
    for a, b in zip(ps.images, loaded.images):
        assert np.allclose(a, b, atol=1 / 255 + 1e-9)


# oracle provider -----------------------------------------------------------


def test_oracle_fixed_point(rng):
    cloud = make_random_cloud(rng, 5)
    oracle = OraclePrior(cloud, gamma=1.0, resolution=32)
    vp = Viewpoint(10.0, 40.0)
    render = oracle.reference_rgb(vp)
    eps = rng.standard_normal(render.shape)
    out = oracle.predict_noise(
        None, 0.5, None, RelativeAngles(0, 0),
        context=SdsContext(viewpoint=vp, clean_rgb=render, noise=eps),
    )
    assert np.array_equal(out, eps)


def test_oracle_gamma_zero(rng):
    cloud = make_random_cloud(rng, 5)
    oracle = OraclePrior(cloud, gamma=0.0, resolution=32)
    vp = Viewpoint(0.0, 0.0)
    eps = rng.standard_normal((32, 32, 3))
    current = rng.random((32, 32, 3))
    out = oracle.predict_noise(
        None, 0.5, None, RelativeAngles(0, 0),
        context=SdsContext(viewpoint=vp, clean_rgb=current, noise=eps),
    )
    assert np.array_equal(out, eps)


def test_oracle_views_recomposite_exactly(rng):
    """Un-premultiplied RGBA views composited back over the oracle background
    reproduce the oracle's renders."""
    cloud = make_random_cloud(rng, 6)
    oracle = OraclePrior(cloud, resolution=32)
    vps = paper_six_viewpoints()
    ps = oracle.generate_views(viewpoints=vps)
    for vp, recomposited in zip(vps, ps.rgb_over((1.0, 1.0, 1.0))):
        assert np.allclose(recomposited, oracle.reference_rgb(vp), atol=1e-9)


# wire codecs ---------------------------------------------------------------


def test_noise_png_round_trip():
    rng = np.random.default_rng(5)
    noise = rng.standard_normal((16, 16, 3))
    decoded = decode_noise_png(encode_noise_png(noise))
    # in-range values survive to 16-bit quantization accuracy
    inside = np.abs(noise) <= 2.0
    assert np.max(np.abs(decoded[inside] - noise[inside])) <= 4.0 / 65535 + 1e-12
    assert np.all(np.abs(decoded) <= 2.0 + 1e-9)


def test_rgba_png_round_trip():
    rng = np.random.default_rng(6)
    img = np.round(rng.random((8, 8, 4)) * 255) / 255
    assert np.allclose(decode_rgba_png(encode_rgba_png(img)), img, atol=1e-9)


# remote provider -----------------------------------------------------------


class FakeResponse:
    def __init__(self, status_code, payload):
        self.status_code = status_code
        self._payload = payload
        self.text = json.dumps(payload)

    def json(self):
        return self._payload


def test_remote_generate_views_schema_error(monkeypatch):
    import base64

    rp = RemotePrior("http://fake:1")
    good = base64.b64encode(encode_rgba_png(np.zeros((8, 8, 4)))).decode()
    monkeypatch.setattr(
        rp.session, "post",
        lambda *a, **k: FakeResponse(200, {"images_png_b64": [good], "viewpoints": []}),
    )
    with pytest.raises(PriorServiceSchemaError, match="expected 2 images"):
        rp.generate_views(np.zeros((8, 8, 4)), paper_six_viewpoints()[:2])


def test_remote_generate_views_success(monkeypatch):
    import base64

    rp = RemotePrior("http://fake:1")
    imgs = [np.zeros((8, 8, 4)), np.ones((8, 8, 4)) * 0.5]
    payload = {
        "images_png_b64": [base64.b64encode(encode_rgba_png(im)).decode() for im in imgs],
        "viewpoints": [{"elevation_deg": 20.0, "azimuth_deg": 30.0},
                       {"elevation_deg": -10.0, "azimuth_deg": 90.0}],
    }
    monkeypatch.setattr(rp.session, "post", lambda *a, **k: FakeResponse(200, payload))
    ps = rp.generate_views(np.zeros((8, 8, 4)), paper_six_viewpoints()[:2])
    assert len(ps) == 2
    assert np.allclose(ps.images[1], 0.5, atol=1 / 255)


def test_remote_unreachable_names_url():
    rp = RemotePrior("http://127.0.0.1:1", retries=0)
    rp.session = __import__("requests").Session()
    with pytest.raises(PriorServiceConnectionError, match="127.0.0.1:1"):
        rp.predict_noise(
            np.zeros((8, 8, 3)), 0.5, np.zeros((8, 8, 4)), RelativeAngles(0, 0)
        )


def test_remote_http_error(monkeypatch):
    rp = RemotePrior("http://fake:1")
    monkeypatch.setattr(rp.session, "post", lambda *a, **k: FakeResponse(422, {"detail": "bad"}))
    with pytest.raises(PriorServiceHTTPError, match="422"):
        rp.predict_noise(
            np.zeros((8, 8, 3)), 0.5, np.zeros((8, 8, 4)), RelativeAngles(0, 0)
        )
