"""Ray batch -> field queries -> composited colors and depths, for the mean and sampled fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .field import combine
from .rendering import composite_color, composite_depth, transmittance_weights
from .sampling import generate_rays, image_pixels, ray_box, stratified_samples

BOX_EPS = 1e-9


@dataclass
class RayRender:
    rgb: object  # (R, 3) mean-branch color
    depth: object  # (R,)
    weights: object  # (R, N)
    t: np.ndarray
    near: np.ndarray
    far: np.ndarray
    rgb_draws: object = None  # (M, R, 3)
    depth_draws: object = None  # (M, R)


def draw_noise(seeds, n_points):
    """Base draws for density (M, P, 1) and color (M, P, 3), one rng stream per draw."""
    noise = np.stack([np.random.default_rng(s).standard_normal((n_points, 4)) for s in seeds])
    return noise[..., :1], noise[..., 1:]


def render_rays(field, origins, dirs, n_samples, rng=None, draw_seeds=(),
                background=(0.0, 0.0, 0.0), with_mean=True, noise=None):
    """Render rays through the unit-cube scene box.

    Samples are stratified when ``rng`` is given and placed at bin midpoints
    otherwise. Each entry of ``draw_seeds`` yields one stochastic render of the
    combined field; ``noise`` may instead supply the base draws directly as
    ``(u_sigma, u_color)`` shaped (M, R * N, 1) and (M, R * N, 3). Density
    outside the box is zero.
    """
    r = len(origins)
    near, far, hit = ray_box(origins, dirs)
    near = np.where(hit, near, 0.0)
    far = np.where(hit, far, near + 1.0)
    t, delta = stratified_samples(near, far, n_samples, rng, jitter=rng is not None)
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    inside = hit[:, None] & np.all((pts >= -BOX_EPS) & (pts <= 1 + BOX_EPS), axis=-1)
    x = np.clip(pts, 0.0, 1.0).reshape(-1, 3)
    d = np.repeat(dirs, n_samples, axis=0)
    sigma_mu, color_mu, h_sigma, h_color = field.eval_mean(x, d)
    mask = inside.astype(np.float64)

    out = RayRender(None, None, None, t, near, far)
    if with_mean:
        w, t_end = transmittance_weights(sigma_mu.reshape(r, n_samples) * mask, delta)
        out.weights = w
        out.rgb = composite_color(w, t_end, color_mu.reshape(r, n_samples, 3), background)
        out.depth = composite_depth(w, t)
    if noise is None and len(draw_seeds):
        noise = draw_noise(draw_seeds, r * n_samples)
    if noise is not None:
        u_sigma, u_color = noise
        m = len(u_sigma)
        sigma_res, color_res = field.residuals(h_sigma, h_color, u_sigma, u_color)
        sigma, color = combine(sigma_mu, color_mu, sigma_res, color_res)
        w, t_end = transmittance_weights(sigma.reshape(m, r, n_samples) * mask, delta)
        out.rgb_draws = composite_color(w, t_end, color.reshape(m, r, n_samples, 3), background)
        out.depth_draws = composite_depth(w, t)
    return out


def render_image(field, camera, n_samples, draws=0, seed=0, chunk=None,
                 background=(0.0, 0.0, 0.0)):
    """Mean-branch image/depth and optional ``draws`` stochastic renders, as arrays.

    Draw ``m`` of chunk ``c`` uses the rng stream ``(seed, c, m)``.
    """
    k = camera.intrinsics
    chunk = chunk or max(64, 4096 // max(1, draws))
    origins, dirs = generate_rays(camera, image_pixels(k.width, k.height))
    rgb, depth, rgb_d, depth_d = [], [], [], []
    with ad.no_grad():
        for c, lo in enumerate(range(0, len(origins), chunk)):
            sl = slice(lo, lo + chunk)
            seeds = [(seed, c, m) for m in range(draws)]
            out = render_rays(field, origins[sl], dirs[sl], n_samples, None, seeds, background)
            rgb.append(out.rgb.data)
            depth.append(out.depth.data)
            if draws:
                rgb_d.append(out.rgb_draws.data)
                depth_d.append(out.depth_draws.data)
    h, w = k.height, k.width
    result = {"rgb": np.concatenate(rgb).reshape(h, w, 3),
              "depth": np.concatenate(depth).reshape(h, w)}
    if draws:
        result["rgb_draws"] = np.concatenate(rgb_d, axis=1).reshape(draws, h, w, 3)
        result["depth_draws"] = np.concatenate(depth_d, axis=1).reshape(draws, h, w)
    return result
