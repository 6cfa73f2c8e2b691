"""Token-conditioned sampling: reconstruct structures or decode generated codes."""

from __future__ import annotations

import numpy as np

from ..numerics import Rng
from ..sampler import SamplerConfig, sample
from ..structio import BackboneStructure
from .model import ConfigMismatchError, Tokenizer

__all__ = ["decode_codes", "reconstruct"]


def decode_codes(model: Tokenizer, codes: np.ndarray, cfg: SamplerConfig, rng: Rng | None = None) -> np.ndarray:
    """Sample Å coordinates (L, A, 3) conditioned on a code sequence."""
    codes = np.asarray(codes, dtype=np.int64)
    cond = model.condition_from_codes(codes[None])
    x = sample(model.field(cond), (1, len(codes), model.config.atoms, 3), cfg, rng)
    return model.to_angstrom(x[0])


def reconstruct(model: Tokenizer, structure: BackboneStructure, cfg: SamplerConfig | None = None, rng: Rng | None = None) -> BackboneStructure:
    """Tokenize then sample back; same length and atom count as the input."""
    cfg = SamplerConfig() if cfg is None else cfg
    if structure.num_atoms != model.config.atoms:
        raise ConfigMismatchError(f"tokenizer expects {model.config.atoms} atoms per residue, structure has {structure.num_atoms}")
    codes = model.tokenize(structure.coords)
    coords = decode_codes(model, codes, cfg, rng)
    return BackboneStructure(id=structure.id, coords=coords, chain_id=structure.chain_id)
