"""Generator radiance field: deterministic mean branch plus residual conditional flows.

The mean branch maps a position/direction pair to mean density and color and to
two conditioning features. Each residual branch is a stack of affine coupling
steps pushing a standard-normal draw to a zero-centred residual; the combined
value is mean plus residual, clamped to the physical range.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoding import HashGrid, HashGridConfig, sh_encode
from .nn import MLP, Linear, Module

LOG_SCALE_BOUND = 5.0
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class FieldConfig:
    grid: HashGridConfig = dc_field(default_factory=HashGridConfig)
    sh_degree: int = 3
    hidden: int = 64
    density_feature: int = 16
    color_feature: int = 16
    flow_depth: int = 4
    flow_hidden: int = 16


class DeterministicBranch(Module):
    def __init__(self, cfg, rng):
        self.grid = HashGrid(cfg.grid, rng)
        self.density_net = MLP([cfg.grid.out_dim, cfg.hidden, cfg.density_feature], rng)
        n_sh = (cfg.sh_degree + 1) ** 2
        self.color_net = MLP([cfg.density_feature + n_sh, cfg.hidden, cfg.color_feature], rng)
        self.color_head = Linear(cfg.color_feature, 3, rng)
        self._sh_degree = cfg.sh_degree

    def __call__(self, x, d):
        h_sigma = self.density_net(self.grid(x))
        sigma = ad.softplus(h_sigma[:, 0])
        sh = Tensor(sh_encode(d, self._sh_degree))
        h_color = ad.relu(self.color_net(ad.concat([h_sigma, sh], axis=1)))
        color = ad.sigmoid(self.color_head(h_color))
        return sigma, color, h_sigma, h_color


class CouplingStep(Module):
    """Affine map of the ``active`` channels conditioned on ``passive`` channels and a feature.

    With no passive channels the step is a pure conditional affine transform.
    Log-scales pass through ``5 * tanh(raw / 5)`` to stay within [-5, 5].
    """

    def __init__(self, dim, active, cond_dim, hidden, rng):
        self.active = active
        self.passive = [i for i in range(dim) if i not in active]
        self.cond_in = Linear(cond_dim, hidden, rng)
        self.passive_in = (Tensor(rng.uniform(-1, 1, (len(self.passive), hidden))
                                  / np.sqrt(len(self.passive) + cond_dim), requires_grad=True)
                           if self.passive else None)
        self.out = Linear(hidden, 2 * len(active), rng, zero=True)

    def params(self, u, h):
        pre = self.cond_in(h)
        if self.passive_in is not None:
            pre = pre + _take(u, self.passive) @ self.passive_in
        raw = self.out(ad.tanh(pre))
        na = len(self.active)
        log_scale = LOG_SCALE_BOUND * ad.tanh(raw[..., :na] * (1.0 / LOG_SCALE_BOUND))
        return log_scale, raw[..., na:]

    def forward(self, u, h):
        log_scale, shift = self.params(u, h)
        moved = ad.exp(log_scale) * _take(u, self.active) + shift
        return self._assemble(u, moved), log_scale.sum(axis=-1)

    def inverse(self, y, h):
        log_scale, shift = self.params(y, h)
        moved = (_take(y, self.active) - shift) * ad.exp(-log_scale)
        return self._assemble(y, moved), -log_scale.sum(axis=-1)

    def _assemble(self, u, moved):
        if not self.passive:
            return moved
        parts = {}
        for j, i in enumerate(self.active):
            parts[i] = moved[..., j:j + 1]
        for i in self.passive:
            parts[i] = u[..., i:i + 1]
        return ad.concat([parts[i] for i in sorted(parts)], axis=-1)


def _take(u, channels):
    lo, hi = min(channels), max(channels) + 1
    if hi - lo != len(channels):
        raise ValueError(f"coupling channels {channels} must be contiguous")
    return u[..., lo:hi]


class ConditionalFlow(Module):
    def __init__(self, dim, cond_dim, depth, hidden, rng):
        self.dim = dim
        if dim == 1:
            actives = [[0]] * depth
        else:
            # 2|1 split alternating which side moves
            actives = [[dim - 1] if k % 2 == 0 else list(range(dim - 1)) for k in range(depth)]
        self.steps = [CouplingStep(dim, a, cond_dim, hidden, rng) for a in actives]

    def forward(self, u0, h):
        u = ad.as_tensor(u0)
        log_det = 0.0
        for k, step in enumerate(self.steps):
            u, ld = step.forward(u, h)
            if not np.all(np.isfinite(u.data)):
                raise ad.NonFiniteError(f"flow step {k} produced a non-finite value")
            log_det = ld + log_det
        return u, log_det

    def inverse(self, y, h):
        u = ad.as_tensor(y)
        log_det = 0.0
        for step in reversed(self.steps):
            u, ld = step.inverse(u, h)
            log_det = ld + log_det
        return u, log_det

    def log_density(self, y, h):
        u0, log_det = self.inverse(y, h)
        base = -0.5 * (u0 * u0).sum(axis=-1) - self.dim * HALF_LOG_2PI
        return base + log_det


@dataclass
class FieldSample:
    """One draw of the field at a batch of points (arrays over points)."""

    sigma_mean: np.ndarray
    color_mean: np.ndarray
    sigma_res: np.ndarray
    color_res: np.ndarray
    sigma: np.ndarray
    color: np.ndarray


def combine(sigma_mean, color_mean, sigma_res, color_res, clamp=True):
    sigma = sigma_mean + sigma_res
    color = color_mean + color_res
    if not clamp:
        return sigma, color
    if not (np.all(np.isfinite(sigma.data)) and np.all(np.isfinite(color.data))):
        raise ad.NonFiniteError("combined density or color is not finite")
    sigma, color = ad.relu(sigma), ad.clip(color, 0.0, 1.0)
    assert np.all(sigma.data >= 0.0) and np.all((color.data >= 0.0) & (color.data <= 1.0))
    return sigma, color


class RadianceField(Module):
    def __init__(self, cfg, rng):
        self.config = cfg
        self.mean = DeterministicBranch(cfg, rng)
        self.density_flow = ConditionalFlow(1, cfg.density_feature, cfg.flow_depth,
                                            cfg.flow_hidden, rng)
        self.color_flow = ConditionalFlow(3, cfg.color_feature, cfg.flow_depth,
                                          cfg.flow_hidden, rng)

    def eval_mean(self, x, d):
        return self.mean(x, d)

    def flow_forward(self, u0, h, which="density"):
        return self._flow(which).forward(u0, h)

    def flow_inverse(self, value, h, which="density"):
        return self._flow(which).inverse(value, h)[0]

    def log_density(self, value, h, which="density"):
        return self._flow(which).log_density(value, h)

    def _flow(self, which):
        return {"density": self.density_flow, "color": self.color_flow}[which]

    def residuals(self, h_sigma, h_color, u_sigma, u_color):
        """Push base draws (..., P, 1) and (..., P, 3) through both flows."""
        sigma_res, _ = self.density_flow.forward(u_sigma, h_sigma)
        color_res, _ = self.color_flow.forward(u_color, h_color)
        return sigma_res[..., 0], color_res

    def sample_field(self, x, d, n, rng, clamp=True):
        if n < 1:
            raise ValueError("draw count must be at least 1")
        with ad.no_grad():
            sigma_mu, color_mu, h_sigma, h_color = self.eval_mean(x, d)
            p = sigma_mu.shape[0]
            u_sigma = rng.standard_normal((n, p, 1))
            u_color = rng.standard_normal((n, p, 3))
            sigma_res, color_res = self.residuals(h_sigma, h_color, u_sigma, u_color)
            sigma, color = combine(sigma_mu, color_mu, sigma_res, color_res, clamp=clamp)
        return [FieldSample(sigma_mu.data, color_mu.data, sigma_res.data[i], color_res.data[i],
                            sigma.data[i], color.data[i]) for i in range(n)]
