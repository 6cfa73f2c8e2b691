"""Finite scalar quantization.

Each latent dimension k is squashed with tanh and rounded onto ``levels[k]``
integer grid points; the code is the mixed-radix index of the grid vector.
Even level counts use a half-step offset so the grid has exactly
``levels[k]`` points: ``{-l/2, ..., l/2 - 1}``.
"""

from __future__ import annotations

import numpy as np

from ..numerics import Tensor, ops

__all__ = ["FSQ"]


class FSQ:
    def __init__(self, levels):
        self.levels = np.asarray(levels, dtype=np.int64)
        if self.levels.ndim != 1 or np.any(self.levels < 2):
            raise ValueError("levels must be a 1-D list of integers >= 2")
        self.half = self.levels // 2
        self.basis = np.concatenate([[1], np.cumprod(self.levels[:-1])]).astype(np.int64)
        self._half_l = (self.levels - 1) * (1.0 + 1e-3) / 2.0
        self._offset = np.where(self.levels % 2 == 0, 0.5, 0.0)
        self._shift = np.arctanh(self._offset / self._half_l)

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def codebook_size(self) -> int:
        return int(np.prod(self.levels))

    @property
    def grid_min(self) -> np.ndarray:
        return -self.half

    @property
    def grid_max(self) -> np.ndarray:
        return self.levels - 1 - self.half

    def bound(self, z):
        """Squash into the open interval that rounds onto the grid."""
        if isinstance(z, Tensor):
            return ops.tanh(z + self._shift.astype(z.dtype)) * self._half_l.astype(z.dtype) - self._offset.astype(z.dtype)
        return np.tanh(z + self._shift) * self._half_l - self._offset

    def quantize(self, z: Tensor, identity: bool = False) -> Tensor:
        """Grid values with straight-through gradients (or just the bounded values)."""
        b = self.bound(z)
        if identity:
            return b
        return ops.straight_through(b, np.round)

    def quantize_array(self, z: np.ndarray) -> np.ndarray:
        return np.round(self.bound(np.asarray(z, dtype=np.float64)))

    def codes_from_grid(self, q: np.ndarray) -> np.ndarray:
        digits = np.rint(q).astype(np.int64) + self.half
        if np.any(digits < 0) or np.any(digits >= self.levels):
            raise ValueError("grid values outside the quantizer range")
        return digits @ self.basis

    def grid_from_codes(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        if np.any(codes < 0) or np.any(codes >= self.codebook_size):
            raise ValueError(f"codes must lie in [0, {self.codebook_size})")
        digits = (codes[..., None] // self.basis) % self.levels
        return (digits - self.half).astype(np.float64)

    def normalize(self, q):
        """Scale grid values into roughly [-1, 1] before the output projection."""
        return q * (1.0 / np.maximum(self.half, 1)).astype(q.dtype if isinstance(q, Tensor) else np.float64)

    def center_code(self) -> int:
        return int(self.codes_from_grid(np.zeros(self.dim)))
