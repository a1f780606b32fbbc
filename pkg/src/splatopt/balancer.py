"""Learned task weights balancing the rough (SDS) and fine (reconstruction)
objectives via homoscedastic uncertainty.

Each weight is omega = log(sigma^2) for its task.  The weighted losses are

    rough = exp(-omega_sds) * L_sds + omega_sds
    fine  = exp(-omega_rec) * L_rec + omega_rec + L_mask

so the exp(-omega) factor tempers a large loss while the +omega term keeps
the uncertainty from growing without bound.  Both weights start at 0 (an
unweighted loss) and take one Adam step per iteration on the closed-form
gradient d(total)/d(omega) = 1 - exp(-omega) * L, whose fixed point is
omega = log(L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class _AdamScalar:
    m: float = 0.0
    v: float = 0.0

    def step(self, grad: float, lr: float, step_idx: int,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> float:
        self.m = beta1 * self.m + (1.0 - beta1) * grad
        self.v = beta2 * self.v + (1.0 - beta2) * grad * grad
        m_hat = self.m / (1.0 - beta1 ** step_idx)
        v_hat = self.v / (1.0 - beta2 ** step_idx)
        return -lr * m_hat / (math.sqrt(v_hat) + eps)


@dataclass
class LossWeights:
    omega_sds: float = 0.0
    omega_rec: float = 0.0
    step: int = 0
    _adam_sds: _AdamScalar = field(default_factory=_AdamScalar)
    _adam_rec: _AdamScalar = field(default_factory=_AdamScalar)

    def state_dict(self) -> dict:
        return {
            "omega_sds": self.omega_sds,
            "omega_rec": self.omega_rec,
            "step": self.step,
            "m_sds": self._adam_sds.m, "v_sds": self._adam_sds.v,
            "m_rec": self._adam_rec.m, "v_rec": self._adam_rec.v,
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "LossWeights":
        w = cls(omega_sds=d["omega_sds"], omega_rec=d["omega_rec"], step=int(d["step"]))
        w._adam_sds = _AdamScalar(d["m_sds"], d["v_sds"])
        w._adam_rec = _AdamScalar(d["m_rec"], d["v_rec"])
        return w


def weighted_rough(l_sds: float, w: LossWeights) -> float:
    return math.exp(-w.omega_sds) * l_sds + w.omega_sds


def weighted_fine(l_rec: float, l_mask: float, w: LossWeights) -> float:
    # the mask term sits outside the uncertainty factor
    return math.exp(-w.omega_rec) * l_rec + w.omega_rec + l_mask


def sds_gradient_scale(w: LossWeights) -> float:
    return math.exp(-w.omega_sds)


def reconstruction_gradient_scale(w: LossWeights) -> float:
    return math.exp(-w.omega_rec)


def update_weights(w: LossWeights, l_sds: float, l_rec: float, lr: float = 1e-2) -> LossWeights:
    """One Adam step per weight on the closed-form uncertainty gradient.

    The losses are treated as constants w.r.t. omega; a weight is untouched
    when its loss sits exactly at the fixed point L = exp(omega).
    """
    if not (math.isfinite(l_sds) and math.isfinite(l_rec)):
        raise ValueError(f"non-finite losses for weight update: sds={l_sds} rec={l_rec}")
    w.step += 1
    g_sds = 1.0 - math.exp(-w.omega_sds) * l_sds
    g_rec = 1.0 - math.exp(-w.omega_rec) * l_rec
    w.omega_sds += w._adam_sds.step(g_sds, lr, w.step)
    w.omega_rec += w._adam_rec.step(g_rec, lr, w.step)
    if not (math.isfinite(w.omega_sds) and math.isfinite(w.omega_rec)):
        raise ValueError("weight update produced non-finite omega")
    return w
