"""Training configuration and its plain-text ``key = value`` form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .encoding import HashGridConfig
from .field import FieldConfig
from .losses import LossWeights


@dataclass
class TrainConfig:
    dataset: str = ""
    out_dir: str = "run"
    steps: int = 2000
    batch: int = 1
    patch_side: int = 32
    n_samples: int = 32
    m_start: int = 8
    m_end: int = 16
    lambda_det: float = 1.0
    lambda_adv: float = 0.1
    lambda_depth: float = 0.05
    s_start: float = 1.0
    s_end: float = 0.125
    decay_frac: float = 0.5
    stride_jitter: float = 0.1
    lr_g: float = 1e-3
    lr_d: float = 2e-4
    sigma_depth: float = 0.1
    seed: int = 0
    checkpoint_every: int = 500
    sn_check_steps: str = "500,1000,2000"
    # "gan" trains against the discriminator; "l2" swaps the adversarial term for patch L2
    adv_mode: str = "gan"
    depth_loss: str = "ce"
    freeze_mean: bool = False
    background: str = "0,0,0"
    # generator
    grid_levels: int = 8
    grid_base: int = 4
    grid_growth: float = 1.5
    grid_log2_table: int = 14
    grid_features: int = 2
    sh_degree: int = 3
    hidden: int = 64
    density_feature: int = 16
    color_feature: int = 16
    flow_depth: int = 4
    flow_hidden: int = 16
    # discriminator
    disc_widths: str = "32,64,128,128"

    def __post_init__(self):
        counts = ("steps", "batch", "n_samples", "m_start", "m_end", "flow_depth", "grid_levels")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.patch_side < 2:
            raise ValueError("patch_side must be at least 2")
        if self.m_end < self.m_start:
            raise ValueError("m_end must not be below m_start")
        if self.adv_mode not in ("gan", "l2"):
            raise ValueError(f"adv_mode must be 'gan' or 'l2', got {self.adv_mode!r}")
        if self.depth_loss not in ("ce", "l2", "off"):
            raise ValueError(f"depth_loss must be 'ce', 'l2' or 'off', got {self.depth_loss!r}")
        self.loss_weights  # validates non-negative weights

    @property
    def loss_weights(self):
        return LossWeights(self.lambda_det, self.lambda_adv, self.lambda_depth)

    @property
    def field_config(self):
        grid = HashGridConfig(self.grid_levels, self.grid_base, self.grid_growth,
                              2 ** self.grid_log2_table, self.grid_features)
        return FieldConfig(grid, self.sh_degree, self.hidden, self.density_feature,
                           self.color_feature, self.flow_depth, self.flow_hidden)

    @property
    def widths(self):
        return tuple(int(w) for w in self.disc_widths.split(","))

    @property
    def background_color(self):
        return tuple(float(c) for c in self.background.split(","))

    @property
    def sn_steps(self):
        return {int(s) for s in self.sn_check_steps.split(",") if s.strip()}

    def m_at(self, step):
        """Draws per patch: linear ramp from ``m_start`` at step 0 to ``m_end`` at the last step."""
        if self.steps == 1:
            return self.m_start
        frac = min(max(step, 0), self.steps - 1) / (self.steps - 1)
        return self.m_start + int((self.m_end - self.m_start) * frac)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text, source="config"):
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{source} line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{source} line {lineno}: unknown key {key!r}")
            values[key] = _parse(value, types[key], f"{source} line {lineno}")
        return cls(**values)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read(), str(path))


def _fmt(value):
    return str(value).lower() if isinstance(value, bool) else str(value)


def _parse(value, kind, where):
    try:
        if kind in ("bool", bool):
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError
            return value.lower() in ("true", "1")
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
        return value
    except ValueError:
        raise ValueError(f"{where}: cannot read {value!r} as {kind}") from None
