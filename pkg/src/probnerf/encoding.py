"""Multiresolution hash-grid encoding for positions and real spherical harmonics for directions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Module

PRIMES = (1, 2654435761, 805459861)
# corner c of a cell has offset bit d = (c >> d) & 1 along axis d
CORNERS = np.array([[(c >> d) & 1 for d in range(3)] for c in range(8)], dtype=np.int64)


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 8
    base_resolution: int = 4
    growth: float = 1.5
    table_size: int = 2 ** 14
    features: int = 2

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("hash grid needs at least one level")
        t = self.table_size
        if t < 1 or t & (t - 1):
            raise ValueError(f"table size {t} is not a power of two")
        res = self.resolutions
        if any(b <= a for a, b in zip(res, res[1:])):
            raise ValueError(f"level resolutions {res} are not strictly increasing")

    @property
    def resolutions(self):
        return [int(np.floor(self.base_resolution * self.growth ** l)) for l in range(self.levels)]

    @property
    def out_dim(self):
        return self.levels * self.features


def spatial_hash(coords, table_size):
    """XOR of per-axis products with large primes, masked to the table size."""
    c = coords.astype(np.uint64)
    h = c[..., 0] * np.uint64(PRIMES[0])
    h ^= c[..., 1] * np.uint64(PRIMES[1])
    h ^= c[..., 2] * np.uint64(PRIMES[2])
    return (h & np.uint64(table_size - 1)).astype(np.int64)


class HashGrid(Module):
    def __init__(self, config, rng):
        self.config = config
        self.tables = [Tensor(rng.uniform(-1e-4, 1e-4, (config.table_size, config.features)),
                              requires_grad=True) for _ in range(config.levels)]
        self.clamp_count = 0

    def __call__(self, x):
        return hash_encode(self, x)


def _cell(x, res, table_size):
    pos = x * res
    base = np.floor(pos)
    frac = pos - base
    idx = spatial_hash(base.astype(np.int64)[:, None, :] + CORNERS[None], table_size)
    # per-axis factor of each corner weight, shape (P, 8, 3)
    fac = np.where(CORNERS[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    return idx, fac


def hash_encode(grid, x):
    """Encode positions ``x`` (P, 3) in the unit cube into (P, levels * features)."""
    x = ad.as_tensor(x)
    xd = x.data
    if np.any((xd < 0.0) | (xd > 1.0)):
        grid.clamp_count += 1
        xd = np.clip(xd, 0.0, 1.0)
    cfg = grid.config
    feats, cache = [], []
    for res, table in zip(cfg.resolutions, grid.tables):
        idx, fac = _cell(xd, res, cfg.table_size)
        w = fac.prod(axis=-1)
        feats.append(np.einsum("pc,pcf->pf", w, table.data[idx]))
        cache.append((idx, fac, w))
    out = np.concatenate(feats, axis=1)
    f = cfg.features

    def bw(g):
        gx = np.zeros_like(xd)
        gtables = []
        for l, (res, table) in enumerate(zip(cfg.resolutions, grid.tables)):
            idx, fac, w = cache[l]
            gl = g[:, l * f:(l + 1) * f]
            contrib = w[..., None] * gl[:, None, :]
            flat = idx.ravel()
            gt = np.stack([np.bincount(flat, weights=contrib[..., k].ravel(),
                                       minlength=cfg.table_size) for k in range(f)], axis=1)
            gtables.append(gt)
            if x.requires_grad:
                proj = np.einsum("pf,pcf->pc", gl, table.data[idx])
                sign = np.where(CORNERS == 1, 1.0, -1.0)
                for d in range(3):
                    others = np.prod(np.delete(fac, d, axis=-1), axis=-1)
                    gx[:, d] += res * np.sum(proj * sign[None, :, d] * others, axis=1)
        return (gx, *gtables)

    return ad._make(out, (x, *grid.tables), bw, "hash_encode")


SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def sh_encode(d, degree=3):
    """Real spherical harmonics of unit directions ``d`` (..., 3), orders m = -l..l per degree."""
    d = np.asarray(d, dtype=np.float64)
    if not 0 <= degree <= 3:
        raise ValueError(f"spherical harmonics degree {degree} not supported (0..3)")
    norm = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise ValueError("sh_encode expects unit-length directions")
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = [np.full_like(x, SH_C0)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [SH_C2[0] * x * y, SH_C2[1] * y * z, SH_C2[2] * (2 * zz - xx - yy),
                SH_C2[3] * x * z, SH_C2[4] * (xx - yy)]
    if degree >= 3:
        out += [SH_C3[0] * y * (3 * xx - yy), SH_C3[1] * x * y * z,
                SH_C3[2] * y * (4 * zz - xx - yy), SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
                SH_C3[4] * x * (4 * zz - xx - yy), SH_C3[5] * z * (xx - yy),
                SH_C3[6] * x * (xx - 3 * yy)]
    return np.stack(out, axis=-1)
