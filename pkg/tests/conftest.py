import numpy as np
import pytest

from splatopt.priors import DEFAULT_PRIOR_ANGLES, OraclePrior
from splatopt.scene import GaussianCloud, Viewpoint, logit


def make_random_cloud(rng: np.random.Generator, n: int = 6) -> GaussianCloud:
    """Small scene generator for oracle checks: moderate opacities (away from
    the compositing clamps) and distinctly anisotropic scales (so the
    shortest-axis choice is stable under finite-difference probes)."""
    positions = rng.uniform(-0.3, 0.3, (n, 3))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    base = rng.uniform(np.log(0.02), np.log(0.09), (n, 1))
    ratios = np.log(np.array([1.0, 1.35, 1.8]))
    log_scales = base + ratios[None, :]
    for i in range(n):
        rng.shuffle(log_scales[i])
    colors_raw = rng.uniform(-1.5, 1.5, (n, 3))
    opacities_raw = rng.uniform(logit(0.3), logit(0.9), n)
    return GaussianCloud(
        positions=positions,
        rotations=q,
        log_scales=log_scales,
        colors_raw=colors_raw,
        opacities_raw=opacities_raw,
    )


def perturbed_param(cloud: GaussianCloud, name: str, index, h: float):
    """(cloud+, cloud-, realized step) for a central difference on one raw
    scalar; the step is measured after float32 storage rounding."""
    plus = cloud.copy()
    arr = getattr(plus, name).astype(np.float64)
    arr[index] += h
    setattr(plus, name, arr.astype(np.float32))
    minus = cloud.copy()
    arr = getattr(minus, name).astype(np.float64)
    arr[index] -= h
    setattr(minus, name, arr.astype(np.float32))
    realized = float(getattr(plus, name)[index]) - float(getattr(minus, name)[index])
    return plus, minus, realized


def paper_six_viewpoints(radius: float = 2.0, fov: float = 30.0):
    return [Viewpoint(e, a, radius, fov) for e, a in DEFAULT_PRIOR_ANGLES]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def six_viewpoints():
    return paper_six_viewpoints()
