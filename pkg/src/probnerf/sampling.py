"""Pinhole cameras, ray generation, stratified samples along rays and patch sampling.

Camera frame: x right, y down, z forward (optical axis). Pixel (u, v) has its
center at the integer coordinate itself, so the principal point is usually
((W - 1) / 2, (H - 1) / 2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.fx, self.fy, self.cx, self.cy = map(float, (self.fx, self.fy, self.cx, self.cy))
        self.width, self.height = int(self.width), int(self.height)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @classmethod
    def from_fov(cls, width, height, fov_deg):
        f = 0.5 * width / np.tan(0.5 * np.radians(fov_deg))
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def matrix(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


@dataclass
class Camera:
    pose: np.ndarray  # 4x4 camera-to-world
    intrinsics: Intrinsics

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.pose.shape == (3, 4):
            self.pose = np.vstack([self.pose, [0, 0, 0, 1.0]])
        rot = self.pose[:3, :3]
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-6:
            raise ValueError("camera rotation is not orthonormal")

    @property
    def position(self):
        return self.pose[:3, 3]

    def project(self, points):
        """World points (P, 3) to pixel coordinates (P, 2)."""
        rot, pos = self.pose[:3, :3], self.pose[:3, 3]
        cam = (np.asarray(points) - pos) @ rot
        k = self.intrinsics
        return np.stack([k.fx * cam[:, 0] / cam[:, 2] + k.cx,
                         k.fy * cam[:, 1] / cam[:, 2] + k.cy], axis=1)


def look_at(position, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world pose at ``position`` with the optical axis toward ``target``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-8:
        right = np.cross(forward, (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, forward, position
    return pose


def generate_rays(camera, pixels):
    """Origins and unit directions (P, 3) through the given integer pixel coordinates."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    k = camera.intrinsics
    u, v = pixels[:, 0], pixels[:, 1]
    if np.any((u < 0) | (u > k.width - 1) | (v < 0) | (v > k.height - 1)):
        raise ValueError(f"pixel outside the {k.width}x{k.height} image")
    cam_dirs = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=1)
    dirs = cam_dirs @ camera.pose[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    return origins, dirs


def image_pixels(width, height):
    """All pixel coordinates of an image in row-major order."""
    vv, uu = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def ray_box(origins, dirs, lo=0.0, hi=1.0):
    """Entry/exit distances of rays through the box [lo, hi]^3 and a hit mask."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    tmin = np.maximum(tmin, 0.0)
    return tmin, tmax, tmax > tmin


def stratified_samples(near, far, n, rng, jitter=True):
    """Depths ``t`` (R, n) with one uniform draw per equal bin, and intervals ``delta``.

    ``near``/``far`` may be scalars or per-ray arrays. ``rng`` may be a
    generator or a callable ``shape -> uniforms in [0, 1)``.
    """
    if n < 2:
        raise ValueError("need at least two samples per ray")
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    if np.any(far <= near):
        raise ValueError("near must be smaller than far")
    shape = np.broadcast_shapes(near.shape, far.shape) + (n,)
    if not jitter:
        u = np.full(shape, 0.5)
    elif callable(rng):
        u = rng(shape)
    else:
        u = rng.uniform(size=shape)
    width = ((far - near) / n)[..., None]
    t = near[..., None] + (np.arange(n) + u) * width
    delta = np.empty_like(t)
    delta[..., :-1] = np.diff(t, axis=-1)
    delta[..., -1] = width[..., 0]
    return t, delta


@dataclass
class PatchSpec:
    side: int
    scale: float
    stride: tuple  # (x, y) in pixels
    center: tuple  # (u, v) of the footprint center


def sample_patch(width, height, side, scale, rng, jitter=0.1, center=None):
    """Evenly spaced ``side`` x ``side`` pixel grid covering ``scale`` of the image.

    Returns the ``PatchSpec`` and integer pixel coordinates (side*side, 2) in
    row-major patch order.
    """
    if side < 2:
        raise ValueError("patch side must be at least 2")
    if scale <= 0 or scale > 1 or scale * min(width, height) < side:
        raise ValueError(f"scale {scale} gives a footprint below {side} pixels "
                         f"on a {width}x{height} image")
    strides = []
    for extent in (width, height):
        stride = scale * (extent - 1) / (side - 1)
        if jitter:
            stride *= rng.uniform(1.0 - jitter, 1.0 + jitter)
        strides.append(min(stride, (extent - 1) / (side - 1)))
    spans = [(side - 1) * s for s in strides]
    if center is None:
        lo = [0.5 * sp for sp in spans]
        hi = [ext - 1 - 0.5 * sp for ext, sp in zip((width, height), spans)]
        center = (rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]))
    steps = np.arange(side) - 0.5 * (side - 1)
    us = np.rint(center[0] + steps * strides[0]).astype(np.int64)
    vs = np.rint(center[1] + steps * strides[1]).astype(np.int64)
    if us.min() < 0 or vs.min() < 0 or us.max() > width - 1 or vs.max() > height - 1:
        raise ValueError("patch footprint leaves the image")
    vv, uu = np.meshgrid(vs, us, indexing="ij")
    spec = PatchSpec(side, scale, tuple(strides), tuple(center))
    return spec, np.stack([uu.ravel(), vv.ravel()], axis=1)


def anneal_scale(step, s_start=1.0, s_end=0.125, decay_steps=1000):
    """Exponential interpolation from ``s_start`` to ``s_end`` over ``decay_steps``."""
    if not s_start >= s_end > 0:
        raise ValueError("scale schedule needs s_start >= s_end > 0")
    if decay_steps <= 0 or step >= decay_steps:
        return float(s_end)
    frac = max(step, 0) / decay_steps
    return float(s_start * (s_end / s_start) ** frac)
