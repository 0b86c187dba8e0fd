"""Render, uncertainty, evaluation and scene-generation commands."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

from .io import load_dataset, parse_poses, save_dataset, write_grid
from .pipeline import render_image
from .sampling import Camera
from .scenes import generate_dataset, parse_scene, quantize
from .train import load_model
from .uncertainty import ause, pixel_errors, psnr, render_uncertainty, ssim

REPORT_COLUMNS = ("view", "psnr", "ssim", "ause_rmse", "ause_mae")


class CommandError(RuntimeError):
    pass


class ArgumentValueError(CommandError):
    """A well-formed command line with an unusable value (exit code 1)."""


def resolve_camera(cfg, intrinsics, pose=None, pose_file=None, dataset=None):
    """Camera for ``pose`` (an index) taken from ``pose_file`` or the dataset's poses."""
    if pose_file is not None:
        poses = parse_poses(Path(pose_file).read_text(), str(pose_file))
        if intrinsics is None:
            intrinsics = load_dataset(dataset or cfg.dataset).intrinsics
    else:
        data = load_dataset(dataset or cfg.dataset)
        poses, intrinsics = data.poses, intrinsics or data.intrinsics
    index = 0 if pose is None else pose
    if not 0 <= index < len(poses):
        raise ArgumentValueError(f"pose index {index} out of range (0..{len(poses) - 1})")
    return Camera(poses[index], intrinsics)


def save_png(path, rgb):
    Image.fromarray(quantize(rgb)).save(path)


def heat_image(values):
    """Min-max normalized 8-bit grayscale visualization."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    scaled = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    return np.rint(scaled * 255).astype(np.uint8)


def render_cmd(checkpoint, out, pose=None, pose_file=None, dataset=None, stochastic=False,
               samples=1, seed=0, n_samples=None):
    model, cfg, _ = load_model(checkpoint)
    cam = resolve_camera(cfg, None, pose, pose_file, dataset)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n = n_samples or cfg.n_samples
    if stochastic:
        if samples < 1:
            raise ArgumentValueError("--samples must be at least 1")
        res = render_image(model.field, cam, n, draws=samples, seed=seed,
                           background=cfg.background_color)
        written = []
        for m in range(samples):
            save_png(out / f"sample_{m:03d}.png", res["rgb_draws"][m])
            write_grid(out / f"depth_{m:03d}.f32", res["depth_draws"][m])
            written.append(out / f"sample_{m:03d}.png")
        return written
    res = render_image(model.field, cam, n, background=cfg.background_color)
    save_png(out / "mean.png", res["rgb"])
    write_grid(out / "depth.f32", res["depth"])
    return [out / "mean.png"]


def uncertainty_cmd(checkpoint, out, samples, pose=None, pose_file=None, dataset=None, seed=0,
                    n_samples=None):
    if samples < 2:
        raise ArgumentValueError("--samples must be at least 2 for a variance")
    model, cfg, _ = load_model(checkpoint)
    cam = resolve_camera(cfg, None, pose, pose_file, dataset)
    umap = render_uncertainty(model.field, cam, samples, seed, n_samples or cfg.n_samples,
                              cfg.background_color)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_png(out / "mean.png", umap.mean_color)
    Image.fromarray(heat_image(umap.color_var_scalar)).save(out / "color_variance.png")
    Image.fromarray(heat_image(umap.depth_var)).save(out / "depth_variance.png")
    write_grid(out / "mean_color.f32", umap.mean_color)
    write_grid(out / "color_variance.f32", umap.color_var)
    write_grid(out / "depth_variance.f32", umap.depth_var)
    write_grid(out / "mean_depth.f32", umap.mean_depth)
    return umap


def read_split(path):
    indices = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            indices.extend(int(tok) for tok in line.replace(",", " ").split())
        except ValueError:
            raise CommandError(f"{path} line {lineno}: expected view indices") from None
    return indices


def _fmt(x):
    return "" if x is None else f"{x:.6f}"


def evaluate_views(targets, renders):
    """Metric rows for ``(name, target)`` pairs.

    ``renders`` maps each name to ``(prediction, uncertainty_prediction, uncertainty)``:
    PSNR and SSIM score ``prediction``; AUSE ranks the errors of
    ``uncertainty_prediction`` by ``uncertainty`` and is skipped when that is None.
    """
    rows = []
    for name, target in targets:
        pred, unc_pred, unc = renders[name]
        row = {"view": str(name), "psnr": psnr(pred, target), "ssim": ssim(pred, target),
               "ause_rmse": None, "ause_mae": None}
        if unc is not None:
            row["ause_rmse"] = ause(pixel_errors(unc_pred, target, "rmse"), unc, "rmse")[0]
            row["ause_mae"] = ause(pixel_errors(unc_pred, target, "mae"), unc, "mae")[0]
        rows.append(row)
    mean = {"view": "mean"}
    for col in REPORT_COLUMNS[1:]:
        vals = [r[col] for r in rows if r[col] is not None]
        mean[col] = float(np.mean(vals)) if len(vals) == len(rows) and vals else None
    return rows + [mean]


def write_report(rows, path):
    lines = [",".join(REPORT_COLUMNS)]
    for r in rows:
        lines.append(",".join([r["view"]] + [
            ("inf" if r[c] is not None and math.isinf(r[c]) else _fmt(r[c]))
            for c in REPORT_COLUMNS[1:]]))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def eval_cmd(checkpoint, dataset, split, samples, out, seed=0, n_samples=None, renderer=None):
    """Per-view and mean PSNR/SSIM/AUSE report.

    ``renderer(index, camera)`` may replace the model render; it returns the same
    triple as the entries of :func:`evaluate_views`.
    """
    data = load_dataset(dataset)
    indices = read_split(split)
    bad = [i for i in indices if not 0 <= i < len(data)]
    if bad:
        raise CommandError(f"split references views {bad} outside 0..{len(data) - 1}")
    if renderer is None:
        model, cfg, _ = load_model(checkpoint)
        n = n_samples or cfg.n_samples

        def renderer(i, cam):
            draws = samples if samples >= 2 else 0
            res = render_image(model.field, cam, n, draws=draws, seed=seed,
                               background=cfg.background_color)
            if not draws:
                return res["rgb"], None, None
            rgb = res["rgb_draws"]
            return res["rgb"], rgb.mean(axis=0), rgb.var(axis=0, ddof=1).mean(axis=-1)

    renders = {i: renderer(i, data.camera(i)) for i in indices}
    rows = evaluate_views([(i, data.image_float(i)) for i in indices], renders)
    write_report(rows, out)
    return rows


def parse_size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ArgumentValueError(f"size must look like WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise ArgumentValueError("image size must be positive")
    return w, h


def make_scene_cmd(spec, views, size, out):
    scene = parse_scene(Path(spec).read_text())
    w, h = parse_size(size) if isinstance(size, str) else size
    opts = scene.views
    rng = np.random.default_rng(opts.get("seed", 0))
    data = generate_dataset(scene, views, w, h, opts.get("distribution", "hemisphere"), rng,
                            radius=opts.get("radius", 2.0), fov=opts.get("fov", 40.0))
    save_dataset(data, out)
    return data
