"""Discrete volume rendering: compositing weights, color and depth.

All functions accept plain arrays or autodiff tensors; the compositing axis is
the last axis of ``sigma``/``delta``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class RaySamples:
    t: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray = None
    color: np.ndarray = None

    def __post_init__(self):
        if np.any(np.diff(self.t, axis=-1) <= 0):
            raise ValueError("sample depths must be strictly increasing")
        if np.any(np.asarray(self.delta) <= 0):
            raise ValueError("sample intervals must be positive")


def transmittance_weights(sigma, delta):
    """Return per-sample weights ``T_i * alpha_i`` and the residual transmittance.

    ``T_i`` is the running product of ``1 - alpha_j`` for ``j < i``.
    """
    sigma, delta = ad.as_tensor(sigma), ad.as_tensor(delta)
    if np.any(sigma.data < 0):
        raise ValueError("negative density passed to compositing")
    alpha = 1.0 - ad.exp(-(sigma * delta))
    keep = 1.0 - alpha
    trans = ad.cumprod_exclusive(keep)
    weights = trans * alpha
    n = weights.shape[-1]
    t_end = trans[..., n - 1] * keep[..., n - 1]
    return weights, t_end


def composite_color(weights, t_end, color, background=(0.0, 0.0, 0.0)):
    """Pixel color ``sum_i w_i c_i + T_end * background``; ``color`` has a trailing RGB axis."""
    weights = ad.as_tensor(weights)
    rgb = (weights.reshape(weights.shape + (1,)) * color).sum(axis=-2)
    bg = np.asarray(background, dtype=np.float64)
    if np.any(bg != 0):
        rgb = rgb + ad.as_tensor(t_end).reshape(ad.as_tensor(t_end).shape + (1,)) * bg
    return rgb


def composite_depth(weights, t):
    """Expected ray depth ``sum_i w_i t_i``, left unnormalized."""
    return (ad.as_tensor(weights) * t).sum(axis=-1)


def composite_depth_normalized(weights, t, eps=1e-10):
    weights = ad.as_tensor(weights)
    return composite_depth(weights, t) / (weights.sum(axis=-1) + eps)


def render_samples(samples, background=(0.0, 0.0, 0.0)):
    """Color and depth arrays for filled-in ``RaySamples``."""
    with ad.no_grad():
        w, t_end = transmittance_weights(samples.sigma, samples.delta)
        rgb = composite_color(w, t_end, samples.color, background)
        depth = composite_depth(w, samples.t)
    return rgb.data, depth.data
