"""Loss terms: SDS gradient injection, multi-view reconstruction/mask MSEs,
opacity entropy, depth distortion, and depth-normal alignment.

Each term returns its scalar value plus whatever the backward pass needs:
gradient images for the rasterized channels, a per-Gaussian gradient for the
opacity entropy, and a scalar coefficient for the distortion sums handled
inside the rasterizer kernel.

MSE terms are means over pixels, channels, and views so the lambda
coefficients stay resolution-independent.  The SDS gradient is injected
directly (its scalar is for logging and weight updates, not backprop), and
its scalar is the sum-style value consistent with that injected gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import relative_angles, select_closest_prior
from .priors import PriorViewSet, SdsContext, SdsPrior
from .rasterizer import RenderOutput, render_normal_from_depth
from .scene import GaussianCloud, Viewpoint


class LossStateError(ValueError):
    pass


@dataclass
class LossBreakdown:
    sds: float = 0.0
    reconstruction: float = 0.0
    mask: float = 0.0
    opacity: float = 0.0
    depth_distortion: float = 0.0
    normal_alignment: float = 0.0
    rough_weighted: float = 0.0
    fine_weighted: float = 0.0
    total: float = 0.0

    def finalize(self) -> "LossBreakdown":
        """Total is exactly the sum of the weighted and regularizer terms."""
        self.total = (
            self.rough_weighted
            + self.fine_weighted
            + self.opacity
            + self.normal_alignment
            + self.depth_distortion
        )
        return self


def _linear_alphas_cumprod(steps: int, beta_start: float, beta_end: float) -> np.ndarray:
    betas = np.linspace(beta_start, beta_end, steps)
    return np.cumprod(1.0 - betas)


@dataclass
class SdsConfig:
    """Timestep range, schedule, and weighting for the SDS term."""

    t_min: float = 0.02
    t_max: float = 0.98
    t_upper_final: float = 0.5    # annealed upper bound at the end of the run
    lambda_sds: float = 1.0
    schedule_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    weight_fn: object = None      # t -> w(t); None means w(t) == 1
    _alphas_cumprod: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.t_min < self.t_max:
            raise ValueError(f"t_min {self.t_min} must be < t_max {self.t_max}")
        self._alphas_cumprod = _linear_alphas_cumprod(
            self.schedule_steps, self.beta_start, self.beta_end
        )

    def alpha_bar(self, t: float) -> float:
        idx = min(max(int(t * self.schedule_steps), 0), self.schedule_steps - 1)
        return float(self._alphas_cumprod[idx])

    def weight(self, t: float) -> float:
        return 1.0 if self.weight_fn is None else float(self.weight_fn(t))

    def sample_t(self, rng: np.random.Generator, iter_frac: float) -> float:
        hi = self.t_max - iter_frac * (self.t_max - self.t_upper_final)
        hi = max(hi, self.t_min + 1e-6)
        return float(rng.uniform(self.t_min, hi))


def sds_gradient(
    render: RenderOutput,
    prior: SdsPrior,
    priors: PriorViewSet,
    p: Viewpoint,
    rng: np.random.Generator,
    cfg: SdsConfig,
    iter_frac: float,
):
    """SDS loss scalar and the gradient image injected on the rendered RGB.

    Noises the render at a sampled timestep, asks the prior conditioned on
    the angularly-closest fixed view, and returns
    w(t) * lambda * (predicted_noise - noise) as the gradient image.
    """
    t = cfg.sample_t(rng, iter_frac)
    eps = rng.standard_normal(render.rgb.shape)
    i_star = select_closest_prior(p, priors)
    d_angles = relative_angles(p, priors.viewpoints[i_star])

    a_bar = cfg.alpha_bar(t)
    noised = math.sqrt(a_bar) * render.rgb + math.sqrt(1.0 - a_bar) * eps
    predicted = prior.predict_noise(
        noised, t, priors.images[i_star], d_angles,
        context=SdsContext(viewpoint=p, clean_rgb=render.rgb, noise=eps),
    )

    w = cfg.weight(t) * cfg.lambda_sds
    residual = predicted - eps
    grad_rgb = w * residual
    loss = 0.5 * w * float(np.sum(residual * residual))
    return loss, grad_rgb


def reconstruction_loss(
    renders: list[RenderOutput],
    priors: PriorViewSet,
    lambda_rgb: float,
    background=(1.0, 1.0, 1.0),
):
    """Mean squared RGB error against the prior views (composited over the
    render background); returns per-view gradient images."""
    n = len(priors)
    if len(renders) != n:
        raise ValueError(f"{len(renders)} renders for {n} prior views")
    targets = priors.rgb_over(background)
    loss = 0.0
    grads = []
    for render, target in zip(renders, targets):
        if render.rgb.shape != target.shape:
            raise ValueError(
                f"render {render.rgb.shape} vs prior {target.shape} resolution mismatch"
            )
        diff = render.rgb - target
        loss += lambda_rgb * float(np.mean(diff * diff)) / n
        grads.append(2.0 * lambda_rgb * diff / (n * diff.size))
    return loss, grads


def mask_loss(
    renders: list[RenderOutput],
    priors: PriorViewSet,
    lambda_a: float,
):
    """Mean squared alpha error against the prior alpha channels."""
    n = len(priors)
    if len(renders) != n:
        raise ValueError(f"{len(renders)} renders for {n} prior views")
    loss = 0.0
    grads = []
    for render, target in zip(renders, priors.alphas()):
        if render.alpha.shape != target.shape:
            raise ValueError(
                f"render {render.alpha.shape} vs prior {target.shape} resolution mismatch"
            )
        diff = render.alpha - target
        loss += lambda_a * float(np.mean(diff * diff)) / n
        grads.append(2.0 * lambda_a * diff / (n * diff.size))
    return loss, grads


OPACITY_LOG_EPS = 1e-10


def opacity_loss(cloud: GaussianCloud, lambda_opacity: float):
    """Binary entropy of the activated opacities, driving them to 0 or 1;
    near-transparent survivors are removed by pruning."""
    a = cloud.opacities()
    e = OPACITY_LOG_EPS
    m = len(cloud)
    ent = -a * np.log(a + e) - (1.0 - a) * np.log(1.0 - a + e)
    loss = lambda_opacity * float(np.mean(ent))
    dent = -np.log(a + e) - a / (a + e) + np.log(1.0 - a + e) + (1.0 - a) / (1.0 - a + e)
    grad_raw = (lambda_opacity / m) * dent * a * (1.0 - a)
    return loss, grad_raw


def depth_distortion_loss(render: RenderOutput, lambda_depth: float):
    """Pairwise per-ray depth scatter; gradient handled inside the rasterizer
    via the returned coefficient."""
    if render.dist_value is None:
        raise LossStateError(
            "render lacks distortion statistics; rasterize with with_distortion=True"
        )
    loss = lambda_depth * float(np.mean(render.dist_value))
    dist_coeff = lambda_depth / render.dist_value.size
    return loss, dist_coeff


def normal_alignment_loss(render: RenderOutput, lambda_normal: float):
    """Disagreement between rendered splat normals and normals differentiated
    from the rendered depth, on solid pixels; the depth-derived normal is a
    constant (no gradient back through the depth map)."""
    n_depth = render_normal_from_depth(render.depth, render.cam)
    fg = render.alpha > 0.5
    count = int(fg.sum())
    grad_normal = np.zeros_like(render.normal)
    if count == 0:
        return 0.0, grad_normal
    dots = np.einsum("hwc,hwc->hw", render.normal, n_depth)
    loss = lambda_normal * float(np.sum((1.0 - dots)[fg])) / count
    grad_normal[fg] = -(lambda_normal / count) * n_depth[fg]
    return loss, grad_normal
