"""Rendering, depth and combined generator losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DEPTH_SIGMA = 0.1
LOG_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    det: float = 1.0
    adv: float = 0.1
    depth: float = 0.05

    def __post_init__(self):
        if min(self.det, self.adv, self.depth) < 0:
            raise ValueError("loss weights must be non-negative")


def det_rendering_loss(rendered, target, reduction="sum"):
    """Squared color error summed over channels, then summed (or averaged) over rays."""
    rendered = ad.as_tensor(rendered)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"rendered {rendered.shape} and target {target.shape} differ")
    diff = rendered - target
    per_ray = (diff * diff).sum(axis=-1)
    return per_ray.sum() if reduction == "sum" else per_ray.mean()


def depth_target(t, depth, sigma_depth=DEPTH_SIGMA):
    """Gaussian centred on ``depth`` evaluated at ``t`` and normalized over the bins of each ray."""
    logits = -((t - depth[..., None]) ** 2) / (2.0 * sigma_depth ** 2)
    logits -= logits.max(axis=-1, keepdims=True)
    g = np.exp(logits)
    return g / g.sum(axis=-1, keepdims=True)


def depth_ce_loss(weights, t, depth, sigma_depth=DEPTH_SIGMA, near=None, far=None):
    """Cross-entropy between compositing weights and a depth-centred Gaussian.

    Rays whose ground-truth depth lies outside [near, far] are skipped.
    Returns ``(loss, n_skipped)``.
    """
    if sigma_depth <= 0:
        raise ValueError("sigma_depth must be positive")
    weights = ad.as_tensor(weights)
    t = np.asarray(t, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64).reshape(weights.shape[:-1])
    near = t[..., 0] if near is None else np.broadcast_to(near, depth.shape)
    far = t[..., -1] if far is None else np.broadcast_to(far, depth.shape)
    valid = (depth >= near) & (depth <= far)
    n_valid = int(valid.sum())
    n_skipped = int(valid.size - n_valid)
    if n_valid == 0:
        return ad.Tensor(0.0), n_skipped
    target = depth_target(t, np.where(valid, depth, near), sigma_depth) * valid[..., None]
    ce = -(ad.log(weights + LOG_EPS) * target).sum()
    return ce * (1.0 / n_valid), n_skipped


def depth_l2_loss(pred_depth, depth):
    pred_depth = ad.as_tensor(pred_depth)
    diff = pred_depth - np.asarray(depth, dtype=np.float64)
    return (diff * diff).mean()


def total_generator_loss(components, weights):
    """Weighted sum of the ``det``, ``adv`` and ``depth`` components (missing ones count as 0)."""
    total = ad.Tensor(0.0)
    for name in ("det", "adv", "depth"):
        value = components.get(name)
        if value is None:
            continue
        value = ad.as_tensor(value)
        if not np.all(np.isfinite(value.data)):
            raise ad.NonFiniteError(f"loss component {name!r} is not finite")
        lam = getattr(weights, name)
        if lam:
            total = total + value * lam
    return total
