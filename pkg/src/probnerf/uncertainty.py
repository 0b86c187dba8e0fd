"""Monte-Carlo uncertainty of the sampled field and the evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .field import combine
from .pipeline import render_image

FRACTIONS = np.arange(100) / 100.0
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class UncertaintyMap:
    mean_color: np.ndarray  # (H, W, 3)
    color_var: np.ndarray  # (H, W, 3)
    mean_depth: np.ndarray  # (H, W)
    depth_var: np.ndarray  # (H, W)
    samples: int

    @property
    def color_var_scalar(self):
        return self.color_var.mean(axis=-1)


@dataclass
class SparsificationCurve:
    fractions: np.ndarray
    curve: np.ndarray
    oracle: np.ndarray
    ause: float

    def to_csv(self):
        rows = ["fraction,curve,oracle"]
        rows += [f"{f:.6f},{c:.6f},{o:.6f}"
                 for f, c, o in zip(self.fractions, self.curve, self.oracle)]
        return "\n".join(rows) + "\n"


def point_uncertainty(field, x, d, draws, rng, clamp=True):
    """Unbiased sample variance of density (P,) and color (P, 3) over ``draws`` field samples."""
    if draws < 2:
        raise ValueError("need at least two draws for a sample variance")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    with ad.no_grad():
        sigma_mu, color_mu, h_sigma, h_color = field.eval_mean(x, d)
        u_sigma = rng.standard_normal((draws, len(x), 1))
        u_color = rng.standard_normal((draws, len(x), 3))
        sigma_res, color_res = field.residuals(h_sigma, h_color, u_sigma, u_color)
        sigma, color = combine(sigma_mu, color_mu, sigma_res, color_res, clamp=clamp)
    return sigma.data.var(axis=0, ddof=1), color.data.var(axis=0, ddof=1)


def render_uncertainty(field, camera, draws, seed=0, n_samples=32, background=(0.0, 0.0, 0.0)):
    """Per-pixel mean and unbiased variance of ``draws`` stochastic renders."""
    if draws < 2:
        raise ValueError("need at least two renders for a variance")
    out = render_image(field, camera, n_samples, draws=draws, seed=seed, background=background)
    rgb, depth = out["rgb_draws"], out["depth_draws"]
    return UncertaintyMap(rgb.mean(axis=0), rgb.var(axis=0, ddof=1),
                          depth.mean(axis=0), depth.var(axis=0, ddof=1), draws)


def pixel_errors(pred, target, metric="rmse"):
    """Per-pixel error averaged over channels: squared for RMSE, absolute for MAE."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    err = diff ** 2 if metric == "rmse" else np.abs(diff)
    return err.mean(axis=-1) if err.ndim == 3 else err


def _remaining_error(sorted_err, metric):
    n = len(sorted_err)
    # suffix sums: total error left after dropping the first k sorted pixels
    tail = np.concatenate([np.cumsum(sorted_err[::-1])[::-1], [0.0]])
    kept = np.array([int(np.floor(f * n)) for f in FRACTIONS])
    mean = tail[kept] / (n - kept)
    return np.sqrt(mean) if metric == "rmse" else mean


def ause(error_map, uncertainty_map, metric="rmse"):
    """Area between the sparsification curve (trim by uncertainty) and the oracle (trim by error).

    ``error_map`` holds per-pixel errors as produced by :func:`pixel_errors`.
    Pixels are removed in 1% steps, highest first; ties keep pixel-index order.
    """
    if metric not in ("rmse", "mae"):
        raise ValueError(f"unknown AUSE metric {metric!r}")
    err = np.asarray(error_map, dtype=np.float64).ravel()
    unc = np.asarray(uncertainty_map, dtype=np.float64).ravel()
    if err.shape != unc.shape:
        raise ValueError("error and uncertainty maps differ in shape")
    if err.size < 100:
        raise ValueError("AUSE needs at least 100 pixels")
    by_unc = np.argsort(-unc, kind="stable")
    by_err = np.argsort(-err, kind="stable")
    curve = _remaining_error(err[by_unc], metric)
    oracle = _remaining_error(err[by_err], metric)
    area = float(np.sum(curve - oracle) * 0.01)
    return area, SparsificationCurve(FRACTIONS.copy(), curve, oracle, area)


def psnr(image, reference):
    image, reference = np.asarray(image, np.float64), np.asarray(reference, np.float64)
    if image.shape != reference.shape:
        raise ValueError(f"shape mismatch {image.shape} vs {reference.shape}")
    mse = np.mean((image - reference) ** 2)
    return float("inf") if mse == 0 else float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def to_gray(image):
    image = np.asarray(image, dtype=np.float64)
    return image @ LUMA if image.ndim == 3 else image


def ssim(image, reference, c1=0.01 ** 2, c2=0.03 ** 2):
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5) of the luma channel."""
    a, b = to_gray(image), to_gray(reference)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < 11:
        raise ValueError("image smaller than the 11x11 SSIM window")
    g = _gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
