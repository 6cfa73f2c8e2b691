"""Tokenizer hyperparameters and named presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

ENC_POSITIONS = ("absolute", "rotary", "none")


@dataclass(frozen=True)
class TokenizerConfig:
    atoms: int = 1
    max_len: int = 256
    enc_layers: int = 2
    enc_width: int = 256
    dec_layers: int = 8
    dec_width: int = 512
    heads: int = 8
    mlp_factor: int = 4
    dropout: float = 0.1
    window: int | None = 8  # None means unrestricted attention
    fsq_levels: tuple[int, ...] = (8, 5, 5, 5)
    quantize: bool = True  # False gives an identity bottleneck (same weights, no rounding)
    pair_bias: bool = False
    pair_channels: int = 64
    self_conditioning: bool = False
    enc_pos: str = "absolute"
    cond_mask_prob: float = 0.1
    codebook_jitter: float = 0.0
    time_features: int = 64
    coord_scale: float = 10.0  # Å per model unit
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fsq_levels", tuple(int(x) for x in self.fsq_levels))
        if self.atoms not in (1, 3):
            raise ValueError("atoms must be 1 or 3")
        for name in ("max_len", "enc_layers", "enc_width", "dec_layers", "dec_width", "heads", "mlp_factor", "pair_channels", "time_features"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.enc_width % self.heads or self.dec_width % self.heads:
            raise ValueError("widths must be divisible by heads")
        if (self.dec_width // self.heads) % 2 or (self.enc_pos == "rotary" and (self.enc_width // self.heads) % 2):
            raise ValueError("rotary head dimension must be even")
        if self.window is not None and self.window < 0:
            raise ValueError("window must be >= 0 or None")
        if not self.fsq_levels or any(level < 2 for level in self.fsq_levels):
            raise ValueError("fsq levels must be >= 2")
        if self.enc_pos not in ENC_POSITIONS:
            raise ValueError(f"enc_pos must be one of {ENC_POSITIONS}")
        if not 0.0 <= self.cond_mask_prob <= 1.0 or not 0.0 <= self.dropout < 1.0:
            raise ValueError("probabilities must lie in [0, 1]")

    @property
    def codebook_size(self) -> int:
        return int(np.prod(self.fsq_levels))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fsq_levels"] = list(self.fsq_levels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TokenizerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown tokenizer config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TokenizerConfig":
        return replace(self, **kw)


PRESETS: dict[str, TokenizerConfig] = {
    # widths and depths from the reference training table
    "default": TokenizerConfig(),
    # desk-scale model for CPU runs and the overfit check
    "small": TokenizerConfig(
        max_len=128,
        enc_layers=2,
        enc_width=64,
        dec_layers=4,
        dec_width=128,
        heads=4,
        dropout=0.0,
        pair_bias=True,
        pair_channels=16,
        time_features=32,
    ),
    # gradient-check scale
    "tiny": TokenizerConfig(
        max_len=16,
        enc_layers=1,
        enc_width=16,
        dec_layers=2,
        dec_width=16,
        heads=2,
        mlp_factor=2,
        dropout=0.0,
        pair_channels=4,
        time_features=8,
    ),
}


def preset(name: str, **overrides) -> TokenizerConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown tokenizer preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name].replace(**overrides) if overrides else PRESETS[name]
