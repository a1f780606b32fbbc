import math

import numpy as np
import pytest

from splatopt.losses import (
    LossBreakdown,
    LossStateError,
    SdsConfig,
    depth_distortion_loss,
    mask_loss,
    normal_alignment_loss,
    opacity_loss,
    reconstruction_loss,
    sds_gradient,
)
from splatopt.priors import OraclePrior
from splatopt.rasterizer import rasterize, rasterize_backward
from splatopt.scene import GaussianCloud, Viewpoint, init_cloud, logit

from conftest import make_random_cloud, paper_six_viewpoints, perturbed_param


def oracle_setup(rng, n=5, resolution=32):
    reference = make_random_cloud(rng, n)
    oracle = OraclePrior(reference, gamma=1.0, resolution=resolution)
    priors = oracle.generate_views(viewpoints=paper_six_viewpoints())
    return reference, oracle, priors


# SDS -----------------------------------------------------------------------


def test_sds_zero_at_fixed_point(rng):
    reference, oracle, priors = oracle_setup(rng)
    vp = Viewpoint(15.0, 100.0)
    render = rasterize(reference, vp, 32, 32)
    loss, grad = sds_gradient(render, oracle, priors, vp, rng, SdsConfig(), 0.0)
    assert np.allclose(grad, 0.0, atol=1e-12)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_sds_gradient_is_photometric_pull(rng):
    reference, oracle, priors = oracle_setup(rng)
    current = make_random_cloud(np.random.default_rng(99), 4)
    vp = Viewpoint(-5.0, 250.0)
    render = rasterize(current, vp, 32, 32)
    _, grad = sds_gradient(render, oracle, priors, vp, rng, SdsConfig(), 0.0)
    expected = render.rgb - oracle.reference_rgb(vp)
    assert np.allclose(grad, expected, atol=1e-12)


def test_sds_condition_is_closest_prior(rng):
    seen = {}

    class SpyPrior(OraclePrior):
        def predict_noise(self, noised, t, condition, d_angles, context=None):
            seen["condition"] = condition
            seen["d_angles"] = d_angles
            return super().predict_noise(noised, t, condition, d_angles, context)

    reference = make_random_cloud(rng, 4)
    oracle = SpyPrior(reference, resolution=32)
    priors = oracle.generate_views(viewpoints=paper_six_viewpoints())
    vp = priors.viewpoints[2]   # exactly at r_2
    render = rasterize(reference, vp, 32, 32)
    sds_gradient(render, oracle, priors, vp, rng, SdsConfig(), 0.0)
    assert seen["condition"] is priors.images[2]
    assert seen["d_angles"].d_azimuth_deg == 0.0
    assert seen["d_angles"].d_elevation_deg == 0.0


def test_sds_t_annealing_bounds(rng):
    cfg = SdsConfig(t_min=0.02, t_max=0.98, t_upper_final=0.5)
    early = [cfg.sample_t(rng, 0.0) for _ in range(200)]
    late = [cfg.sample_t(rng, 1.0) for _ in range(200)]
    assert max(early) <= 0.98 and min(early) >= 0.02
    assert max(late) <= 0.5


# reconstruction / mask -------------------------------------------------------


def test_reconstruction_zero_on_identical(rng):
    reference, oracle, priors = oracle_setup(rng)
    renders = [rasterize(reference, vp, 32, 32) for vp in priors.viewpoints]
    loss, grads = reconstruction_loss(renders, priors, 10000.0)
    assert loss == pytest.approx(0.0, abs=1e-12)
    for g in grads:
        assert np.allclose(g, 0.0, atol=1e-12)


def test_reconstruction_constant_offset_value(rng):
    reference, oracle, priors = oracle_setup(rng)
    renders = [rasterize(reference, vp, 32, 32) for vp in priors.viewpoints]
    for r in renders:
        r.rgb = r.rgb + 0.1
    loss, _ = reconstruction_loss(renders, priors, 10000.0)
    assert loss == pytest.approx(100.0, rel=1e-9)


def test_reconstruction_gradient_normalization(rng):
    reference, oracle, priors = oracle_setup(rng)
    renders = [rasterize(reference, vp, 32, 32) for vp in priors.viewpoints]
    renders[0].rgb = renders[0].rgb + 0.25
    _, grads = reconstruction_loss(renders, priors, 10000.0)
    n, h, w = 6, 32, 32
    assert np.allclose(grads[0], 2 * 10000.0 * 0.25 / (n * h * w * 3), atol=1e-12)


def test_reconstruction_resolution_mismatch(rng):
    reference, oracle, priors = oracle_setup(rng)
    renders = [rasterize(reference, vp, 16, 16) for vp in priors.viewpoints]
    with pytest.raises(ValueError, match="mismatch"):
        reconstruction_loss(renders, priors, 1.0)


def test_mask_loss_fraction(rng):
    reference, oracle, priors = oracle_setup(rng)
    renders = [rasterize(reference, vp, 32, 32) for vp in priors.viewpoints]
    loss0, _ = mask_loss(renders, priors, 1000.0)
    assert loss0 == pytest.approx(0.0, abs=1e-12)
    # flip a fraction f of alpha pixels by exactly 1
    f = 64 / (32 * 32)
    for r in renders:
        r.alpha = r.alpha.copy()
        flat = r.alpha.reshape(-1)
        flat[:64] = np.where(flat[:64] > 0.5, flat[:64] - 1.0, flat[:64] + 1.0)
    loss, _ = mask_loss(renders, priors, 1000.0)
    assert loss == pytest.approx(1000.0 * f, rel=1e-9)


# opacity ---------------------------------------------------------------------


def _uniform_opacity_cloud(n, p):
    return GaussianCloud(
        positions=np.zeros((n, 3)),
        rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
        log_scales=np.full((n, 3), -3.0),
        colors_raw=np.zeros((n, 3)),
        opacities_raw=np.full(n, logit(p)),
    )


def test_opacity_loss_at_half():
    cloud = _uniform_opacity_cloud(64, 0.5)
    loss, grad = opacity_loss(cloud, 0.1)
    assert loss == pytest.approx(0.1 * math.log(2.0), abs=1e-9)
    assert np.allclose(grad, 0.0, atol=1e-9)


def test_opacity_loss_vanishes_at_extremes():
    cloud = _uniform_opacity_cloud(16, 0.9999999)
    loss, _ = opacity_loss(cloud, 0.1)
    assert loss < 1e-6


def test_opacity_descent_pushes_away_from_half():
    cloud = _uniform_opacity_cloud(8, 0.55)
    _, grad = opacity_loss(cloud, 0.1)
    # descent step decreases raw where grad > 0; at alpha slightly above 0.5
    # the entropy gradient must push alpha upward (toward 1)
    assert np.all(grad < 0.0)
    cloud2 = _uniform_opacity_cloud(8, 0.45)
    _, grad2 = opacity_loss(cloud2, 0.1)
    assert np.all(grad2 > 0.0)


def test_opacity_gradient_matches_fd():
    cloud = _uniform_opacity_cloud(4, 0.37)
    lam = 0.1
    _, grad = opacity_loss(cloud, lam)
    h = 1e-6
    plus, minus, step = perturbed_param(cloud, "opacities_raw", (1,), h)
    fd = (opacity_loss(plus, lam)[0] - opacity_loss(minus, lam)[0]) / step
    assert grad[1] == pytest.approx(fd, rel=1e-4)


# depth distortion ------------------------------------------------------------


def test_distortion_zero_single_contribution():
    cloud = _uniform_opacity_cloud(1, 0.8)
    cloud.log_scales[:] = np.log(0.1)
    out = rasterize(cloud, Viewpoint(0.0, 0.0), 32, 32, with_distortion=True)
    loss, _ = depth_distortion_loss(out, 100.0)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_distortion_two_equal_depths_zero():
    from splatopt.synthetic import logit_color

    cloud = GaussianCloud(
        positions=np.array([[0.05, 0.0, 0.0], [-0.05, 0.0, 0.0]]),  # same camera depth
        rotations=np.tile([1.0, 0, 0, 0], (2, 1)),
        log_scales=np.full((2, 3), np.log(0.1)),
        colors_raw=np.stack([logit_color((0.8, 0.2, 0.2))] * 2),
        opacities_raw=np.array([logit(0.5), logit(0.5)]),
    )
    out = rasterize(cloud, Viewpoint(0.0, 0.0), 32, 32, with_distortion=True)
    loss, _ = depth_distortion_loss(out, 100.0)
    assert loss == pytest.approx(0.0, abs=1e-9)


def test_distortion_two_contribution_closed_form():
    from splatopt._kernels import ALPHA_MIN
    from splatopt.synthetic import logit_color

    z1, z2 = 0.15, -0.15
    cloud = GaussianCloud(
        positions=np.array([[0.0, 0.0, z1], [0.0, 0.0, z2]]),
        rotations=np.tile([1.0, 0, 0, 0], (2, 1)),
        log_scales=np.full((2, 3), np.log(0.35)),
        colors_raw=np.stack([logit_color((0.8, 0.2, 0.2))] * 2),
        opacities_raw=np.array([logit(0.6), logit(0.6)]),
    )
    out = rasterize(cloud, Viewpoint(0.0, 0.0), 17, 17, with_distortion=True)
    # center pixel: both Gaussians at footprint peak
    d1, d2 = 2.0 - z1, 2.0 - z2
    w1 = 0.6
    w2 = 0.6 * (1.0 - 0.6)
    expected = w1 * w2 * abs(d1 - d2)
    assert out.dist_value[8, 8] == pytest.approx(expected, rel=1e-3)


def test_distortion_requires_stats(rng):
    cloud = make_random_cloud(rng, 3)
    out = rasterize(cloud, Viewpoint(0.0, 0.0), 16, 16, with_distortion=False)
    with pytest.raises(LossStateError):
        depth_distortion_loss(out, 100.0)


# normal alignment ------------------------------------------------------------


def test_normal_alignment_bounds_and_perfect(rng):
    cloud = make_random_cloud(rng, 6)
    out = rasterize(cloud, Viewpoint(0.0, 0.0), 32, 32)
    lam = 0.05
    loss, grad = normal_alignment_loss(out, lam)
    assert 0.0 <= loss <= 2 * lam + 1e-12
    # perfect alignment: replace rendered normals by the depth normals
    from splatopt.rasterizer import render_normal_from_depth

    out.normal = render_normal_from_depth(out.depth, out.cam)
    loss2, _ = normal_alignment_loss(out, lam)
    assert loss2 == pytest.approx(0.0, abs=1e-9)
    # orthogonal normals: loss = lambda exactly
    n = render_normal_from_depth(out.depth, out.cam)
    out.normal = np.stack([-n[..., 2], n[..., 1] * 0, n[..., 0]], axis=-1)
    loss3, _ = normal_alignment_loss(out, lam)
    assert loss3 == pytest.approx(lam, abs=1e-9)


def test_normal_alignment_empty_foreground():
    cloud = _uniform_opacity_cloud(1, 0.05)
    out = rasterize(cloud, Viewpoint(0.0, 0.0), 16, 16)
    loss, grad = normal_alignment_loss(out, 0.05)
    assert loss == 0.0
    assert np.all(grad == 0.0)


# breakdown -------------------------------------------------------------------


def test_breakdown_additivity_exact():
    b = LossBreakdown(
        sds=1.25, reconstruction=3.5, mask=0.7, opacity=0.09,
        depth_distortion=0.31, normal_alignment=0.011,
        rough_weighted=1.1, fine_weighted=4.0,
    )
    b.finalize()
    assert b.total == b.rough_weighted + b.fine_weighted + b.opacity + b.normal_alignment + b.depth_distortion


# oracle SDS/reconstruction identity -----------------------------------------


def test_oracle_sds_equals_scaled_reconstruction_gradient(rng):
    reference, oracle, priors = oracle_setup(rng)
    current = make_random_cloud(np.random.default_rng(5), 5)
    i = 3
    vp = priors.viewpoints[i]
    render = rasterize(current, vp, 32, 32)
    _, sds_grad = sds_gradient(render, oracle, priors, vp, rng, SdsConfig(), 0.0)

    renders = [rasterize(current, v, 32, 32) for v in priors.viewpoints]
    lam_rgb = 10000.0
    _, rec_grads = reconstruction_loss(renders, priors, lam_rgb)
    n, h, w = len(priors), 32, 32
    scale = (n * h * w * 3) / (2 * lam_rgb)
    assert np.max(np.abs(sds_grad - scale * rec_grads[i])) <= 1e-6


# parameter-space gradient check through rasterize_backward -------------------


def test_loss_parameter_gradients_match_fd(rng):
    reference, oracle, priors = oracle_setup(rng, resolution=24)
    cloud = make_random_cloud(np.random.default_rng(21), 4)
    lam_rgb, lam_a = 100.0, 10.0

    def full_loss(c):
        renders = [rasterize(c, vp, 24, 24) for vp in priors.viewpoints]
        l_rec, _ = reconstruction_loss(renders, priors, lam_rgb)
        l_mask, _ = mask_loss(renders, priors, lam_a)
        l_op, _ = opacity_loss(c, 0.1)
        return l_rec + l_mask + l_op

    renders = [rasterize(cloud, vp, 24, 24) for vp in priors.viewpoints]
    _, rec_grads = reconstruction_loss(renders, priors, lam_rgb)
    _, mask_grads = mask_loss(renders, priors, lam_a)
    _, op_grad = opacity_loss(cloud, 0.1)

    from splatopt.rasterizer import ParamGrads

    total = ParamGrads.zeros(len(cloud))
    for r, gr, ga in zip(renders, rec_grads, mask_grads):
        total.add_(rasterize_backward(r, grad_rgb=gr, grad_alpha=ga))
    total.opacities_raw += op_grad

    for name, idx in (("positions", (1, 2)), ("colors_raw", (0, 1)),
                      ("opacities_raw", (3,)), ("log_scales", (2, 0))):
        plus, minus, step = perturbed_param(cloud, name, idx, 1e-5)
        fd = (full_loss(plus) - full_loss(minus)) / step
        an = getattr(total, name)[idx]
        assert an == pytest.approx(fd, rel=1e-3, abs=1e-6), f"{name}{idx}"
