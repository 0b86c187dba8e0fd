"""Adversarial training loop for the probabilistic field."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .adversarial import Discriminator, gan_losses, top_singular_values
from .config import TrainConfig
from .field import RadianceField
from .io import load_checkpoint, load_dataset, read_checkpoint, save_checkpoint
from .losses import depth_ce_loss, depth_l2_loss, det_rendering_loss, total_generator_loss
from .nn import Module
from .pipeline import draw_noise, render_rays
from .sampling import anneal_scale, generate_rays, sample_patch

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "L_det", "L_D", "L_G", "L_depth", "s", "M")


class TrainingAborted(RuntimeError):
    def __init__(self, step, reason, checkpoint):
        super().__init__(f"training aborted at step {step}: {reason} "
                         f"(emergency checkpoint {checkpoint})")
        self.step = step
        self.checkpoint = checkpoint


class Model(Module):
    """Generator field and discriminator, built deterministically from a config."""

    def __init__(self, cfg):
        rng = np.random.default_rng([cfg.seed, 7919])
        self.field = RadianceField(cfg.field_config, rng)
        self.disc = Discriminator(cfg.patch_side, rng, cfg.widths)


def load_model(path, config=None):
    """Rebuild a model from a checkpoint, using its stored config unless ``config`` is given."""
    data = read_checkpoint(path)
    cfg = config or TrainConfig.from_text(data.config, f"{path} (config snapshot)")
    model = Model(cfg)
    load_checkpoint(path, model)
    return model, cfg, data


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    rows: list = field(default_factory=list)
    sn_checks: dict = field(default_factory=dict)


def _fmt(x):
    return repr(float(x)) if not isinstance(x, int) else str(x)


class Trainer:
    def __init__(self, cfg, dataset=None):
        self.cfg = cfg
        self.data = dataset if dataset is not None else load_dataset(cfg.dataset)
        k = self.data.intrinsics
        if cfg.s_end * min(k.width, k.height) < cfg.patch_side:
            raise ValueError(f"s_end={cfg.s_end} leaves fewer than {cfg.patch_side} pixels "
                             f"on a {k.width}x{k.height} image")
        self.images = [self.data.image_float(i) for i in range(len(self.data))]
        self.model = Model(cfg)
        g_params = self.model.field.named_parameters()
        if cfg.freeze_mean:
            g_params = {n: p for n, p in g_params.items() if not n.startswith("mean.")}
        self.opt_g = ad.Adam(g_params, lr=cfg.lr_g)
        self.opt_d = ad.Adam(self.model.disc.named_parameters(), lr=cfg.lr_d, betas=(0.5, 0.999))
        self.use_depth = self.data.has_depth and cfg.depth_loss != "off" and cfg.lambda_depth > 0
        self.out = Path(cfg.out_dir)

    def save(self, path, step):
        save_checkpoint(self.model, path, step=step, seed=self.cfg.seed, config=self.cfg.to_text())

    def sample_batch(self, step, scale):
        cfg, k = self.cfg, self.data.intrinsics
        rng = np.random.default_rng([cfg.seed, step, 0])
        origins, dirs, colors, depths = [], [], [], []
        for _ in range(cfg.batch):
            view = int(rng.integers(len(self.data)))
            _, pix = sample_patch(k.width, k.height, cfg.patch_side, scale, rng,
                                  jitter=cfg.stride_jitter)
            o, d = generate_rays(self.data.camera(view), pix)
            origins.append(o)
            dirs.append(d)
            colors.append(self.images[view][pix[:, 1], pix[:, 0]])
            if self.data.has_depth:
                depths.append(self.data.depths[view][pix[:, 1], pix[:, 0]].astype(np.float64))
        cat = np.concatenate
        return cat(origins), cat(dirs), cat(colors), (cat(depths) if depths else None), rng

    def batch_det_loss(self, step):
        """Deterministic loss of the mean branch on the batch drawn at ``step``, without updates."""
        cfg = self.cfg
        scale = anneal_scale(step, cfg.s_start, cfg.s_end, int(cfg.decay_frac * cfg.steps))
        origins, dirs, real, _, rng = self.sample_batch(step, scale)
        with ad.no_grad():
            out = render_rays(self.model.field, origins, dirs, cfg.n_samples, rng,
                              background=cfg.background_color)
            return float(det_rendering_loss(out.rgb, real).data)

    def step(self, step):
        cfg = self.cfg
        scale = anneal_scale(step, cfg.s_start, cfg.s_end, int(cfg.decay_frac * cfg.steps))
        m = cfg.m_at(step)
        b, kk = cfg.batch, cfg.patch_side
        origins, dirs, real, depth, rng = self.sample_batch(step, scale)
        n_pts = kk * kk * cfg.n_samples
        per_patch = [draw_noise([(cfg.seed, step, p, j) for j in range(m)], n_pts)
                     for p in range(b)]
        noise = (np.concatenate([u[0] for u in per_patch], axis=1),
                 np.concatenate([u[1] for u in per_patch], axis=1))
        out = render_rays(self.model.field, origins, dirs, cfg.n_samples, rng,
                          background=cfg.background_color, noise=noise)

        loss_det = det_rendering_loss(out.rgb, real)
        loss_depth = None
        if self.use_depth:
            if cfg.depth_loss == "ce":
                loss_depth, _ = depth_ce_loss(out.weights, out.t, depth, cfg.sigma_depth,
                                              out.near, out.far)
            else:
                loss_depth = depth_l2_loss(out.depth, depth)

        fake = (out.rgb_draws.reshape(m, b, kk, kk, 3).transpose(1, 0, 2, 3, 4)
                .reshape(b * m, kk, kk, 3))
        real_patches = real.reshape(b, kk, kk, 3)
        if cfg.adv_mode == "gan":
            disc = self.model.disc
            self.opt_d.zero_grad()
            real_logits = disc(real_patches, scale, update_sn=True)
            # each real patch stands in for its M replicas
            real_rep = ad.broadcast_to(real_logits.reshape(b, 1), (b, m)).reshape(b * m)
            loss_d, _ = gan_losses(real_rep, disc(ad.Tensor(fake.data), scale))
            loss_d.backward()
            self.opt_d.step()
            disc.refresh_spectral_norm()
            _, loss_g = gan_losses(real_rep.data, disc(fake, scale))
        else:
            loss_d = ad.Tensor(0.0)
            target = np.repeat(real_patches, m, axis=0)
            loss_g = det_rendering_loss(fake, target, reduction="mean")

        total = total_generator_loss({"det": loss_det, "adv": loss_g, "depth": loss_depth},
                                     cfg.loss_weights)
        self.opt_g.zero_grad()
        if total.requires_grad:
            total.backward()
            self.opt_g.step()
        values = (loss_det, loss_d, loss_g, loss_depth)
        row = [step] + [float(v.data) if v is not None else 0.0 for v in values] + [scale, m]
        if not all(np.isfinite(row[1:5])):
            raise ad.NonFiniteError("non-finite loss value")
        return row

    def run(self):
        cfg = self.cfg
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.txt").write_text(cfg.to_text())
        metrics_path = self.out / "metrics.csv"
        result = TrainResult(self.out / "final.ckpt", metrics_path)
        started = time.perf_counter()
        with open(metrics_path, "w") as fh:
            fh.write(",".join(METRIC_COLUMNS) + "\n")
            for i in range(cfg.steps):
                try:
                    row = self.step(i)
                except (ad.NonFiniteError, FloatingPointError) as exc:
                    emergency = self.out / "emergency.ckpt"
                    self.save(emergency, i)
                    raise TrainingAborted(i, str(exc), emergency) from exc
                fh.write(",".join(_fmt(v) for v in row) + "\n")
                result.rows.append(row)
                done = i + 1
                if done in cfg.sn_steps and cfg.adv_mode == "gan":
                    result.sn_checks[done] = max(top_singular_values(self.model.disc))
                if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.steps:
                    self.save(self.out / f"step_{done:06d}.ckpt", done)
                if done % 100 == 0:
                    log.info("step %d/%d L_det=%.4g L_D=%.4g L_G=%.4g (%.0fs)", done, cfg.steps,
                             row[1], row[2], row[3], time.perf_counter() - started)
        self.save(result.checkpoint, cfg.steps)
        if result.sn_checks:
            (self.out / "sn_checks.csv").write_text(
                "step,max_singular_value\n"
                + "".join(f"{k},{v!r}\n" for k, v in sorted(result.sn_checks.items())))
        return result


def train(cfg, dataset=None):
    return Trainer(cfg, dataset).run()
