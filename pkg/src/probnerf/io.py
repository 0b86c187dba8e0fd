"""Dataset directories, float grids and checkpoint files.

Dataset layout::

    images/0000.png     8-bit RGB
    poses.txt           one camera-to-world 3x4 matrix per line (12 numbers, row-major)
    intrinsics.txt      fx fy cx cy W H
    depth/0000.f32      optional float32 depth grids

Float grids (``.f32``): 16-byte header ``b"F32G"``, u32 width, u32 height,
u32 channels, then little-endian float32 samples in row-major order.

Checkpoints: ``b"FGRF"``, u32 version, u64 step, u64 seed, u32 config length,
config bytes (UTF-8 key=value text), u32 tensor count, then per tensor u32 name
length, name, u32 rank, u64 dims, float32 payload. Everything little-endian.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .sampling import Camera, Intrinsics

GRID_MAGIC = b"F32G"
CKPT_MAGIC = b"FGRF"
CKPT_VERSION = 1


class DatasetError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class UnknownTensorError(ShapeMismatchError):
    """A checkpoint tensor with no counterpart, e.g. an extra flow step."""


@dataclass
class Dataset:
    images: list  # uint8 (H, W, 3)
    poses: list  # 4x4 camera-to-world
    intrinsics: Intrinsics
    depths: list = None  # float32 (H, W) or None

    def __post_init__(self):
        if len(self.images) != len(self.poses):
            raise DatasetError(f"{len(self.images)} images but {len(self.poses)} poses")
        if self.depths is not None and len(self.depths) != len(self.images):
            raise DatasetError(f"{len(self.depths)} depth maps for {len(self.images)} images")
        shape = (self.intrinsics.height, self.intrinsics.width, 3)
        for i, img in enumerate(self.images):
            if img.shape != shape:
                raise DatasetError(f"image {i} has shape {img.shape}, expected {shape}")
        self.poses = [Camera(p, self.intrinsics).pose for p in self.poses]

    def __len__(self):
        return len(self.images)

    @property
    def has_depth(self):
        return self.depths is not None

    def camera(self, i):
        return Camera(self.poses[i], self.intrinsics)

    def image_float(self, i):
        return self.images[i].astype(np.float64) / 255.0

    def subset(self, indices):
        indices = list(indices)
        return Dataset([self.images[i] for i in indices], [self.poses[i] for i in indices],
                       self.intrinsics,
                       [self.depths[i] for i in indices] if self.has_depth else None)


def write_grid(path, grid):
    grid = np.asarray(grid, dtype="<f4")
    h, w = grid.shape[:2]
    c = 1 if grid.ndim == 2 else grid.shape[2]
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC + struct.pack("<III", w, h, c))
        fh.write(grid.tobytes())


def read_grid(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read ({exc.strerror})") from None
    if len(raw) < 16 or raw[:4] != GRID_MAGIC:
        raise DatasetError(f"{path}: not a float grid file")
    w, h, c = struct.unpack("<III", raw[4:16])
    if len(raw) != 16 + 4 * w * h * c:
        raise DatasetError(f"{path}: payload size does not match {w}x{h}x{c} header")
    data = np.frombuffer(raw, dtype="<f4", offset=16)
    return data.reshape((h, w) if c == 1 else (h, w, c)).copy()


def format_pose(pose):
    return " ".join(repr(float(x)) for x in np.asarray(pose)[:3, :4].ravel())


def parse_poses(text, source="poses.txt"):
    poses = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 12:
            raise DatasetError(f"{source} row {lineno}: expected 12 numbers, got {len(fields)}")
        try:
            vals = [float(x) for x in fields]
        except ValueError:
            raise DatasetError(f"{source} row {lineno}: non-numeric entry") from None
        poses.append(np.vstack([np.array(vals).reshape(3, 4), [0, 0, 0, 1.0]]))
    return poses


def save_dataset(dataset, path):
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(dataset.images):
        Image.fromarray(img).save(path / "images" / f"{i:04d}.png")
    (path / "poses.txt").write_text("".join(format_pose(p) + "\n" for p in dataset.poses))
    k = dataset.intrinsics
    (path / "intrinsics.txt").write_text(
        f"{k.fx!r} {k.fy!r} {k.cx!r} {k.cy!r} {k.width} {k.height}\n")
    if dataset.has_depth:
        (path / "depth").mkdir(exist_ok=True)
        for i, d in enumerate(dataset.depths):
            write_grid(path / "depth" / f"{i:04d}.f32", d)


def load_dataset(path):
    path = Path(path)
    for name in ("poses.txt", "intrinsics.txt"):
        if not (path / name).is_file():
            raise DatasetError(f"{path / name}: missing")
    poses = parse_poses((path / "poses.txt").read_text(), str(path / "poses.txt"))
    fields = (path / "intrinsics.txt").read_text().split("#", 1)[0].split()
    if len(fields) != 6:
        raise DatasetError(f"{path / 'intrinsics.txt'}: expected 'fx fy cx cy W H'")
    try:
        fx, fy, cx, cy = (float(x) for x in fields[:4])
        intr = Intrinsics(fx, fy, cx, cy, int(fields[4]), int(fields[5]))
    except ValueError as exc:
        raise DatasetError(f"{path / 'intrinsics.txt'}: {exc}") from None
    files = sorted((path / "images").glob("*.png")) if (path / "images").is_dir() else []
    if len(files) != len(poses):
        raise DatasetError(f"{path}: {len(files)} images but {len(poses)} poses")
    images = []
    for f in files:
        try:
            with Image.open(f) as im:
                images.append(np.asarray(im.convert("RGB"), dtype=np.uint8).copy())
        except OSError:
            raise DatasetError(f"{f}: unreadable image") from None
    depths = None
    if (path / "depth").is_dir():
        dfiles = sorted((path / "depth").glob("*.f32"))
        if len(dfiles) != len(files):
            raise DatasetError(f"{path / 'depth'}: {len(dfiles)} depth maps for {len(files)} images")
        depths = [read_grid(f) for f in dfiles]
    return Dataset(images, poses, intr, depths)


# ---------------------------------------------------------------- checkpoints

@dataclass
class CheckpointData:
    step: int
    seed: int
    config: str
    tensors: dict = field(default_factory=dict)


def save_checkpoint(model, path, step=0, seed=0, config=""):
    """Write every tensor of ``model`` (a Module or name -> array mapping) as float32."""
    tensors = model.state_tensors() if hasattr(model, "state_tensors") else model
    cfg = config.encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<IQQI", CKPT_VERSION, step, seed, len(cfg)), cfg,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = tensors[name]
        arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr, dtype="<f4")
        key = name.encode("utf-8")
        parts.append(struct.pack("<I", len(key)) + key + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.raw)}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (bad magic)")
    r = _Reader(raw)
    r.take(4)
    version, step, seed, cfg_len = r.unpack("<IQQI")
    if version != CKPT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {CKPT_VERSION}")
    config = r.take(cfg_len).decode("utf-8")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q")
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.pos} trailing bytes")
    return CheckpointData(step, seed, config, tensors)


def load_checkpoint(path, model=None):
    """Read a checkpoint; with ``model`` given, copy its tensors in (all-or-nothing)."""
    data = read_checkpoint(path)
    if model is None:
        return data
    targets = model.state_tensors()
    for name, arr in data.tensors.items():
        if name not in targets:
            raise UnknownTensorError(f"checkpoint tensor {name!r} has no counterpart in the model")
        if targets[name].shape != arr.shape:
            raise ShapeMismatchError(f"tensor {name!r}: checkpoint shape {arr.shape}, "
                                     f"model shape {targets[name].shape}")
    missing = sorted(set(targets) - set(data.tensors))
    if missing:
        raise ShapeMismatchError(f"model tensor {missing[0]!r} missing from checkpoint")
    for name, arr in data.tensors.items():
        targets[name].data[...] = arr.astype(np.float64)
    return model
