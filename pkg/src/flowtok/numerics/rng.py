"""Seeded random streams.

Wraps a PCG64 bit generator.  Normal variates use the Box-Muller transform on
uniforms drawn from the stream, so a given seed and call sequence reproduce
the same numbers bit-for-bit on any platform numpy supports.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Rng"]


class Rng:
    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._path: tuple[int, ...] = ()
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self._path})" if self._path else f"Rng(seed={self.seed})"

    def spawn(self, key: int) -> "Rng":
        """Independent child stream derived from the seed and the full key path.

        Nested spawns differ whenever any key along the path differs, so
        ``r.spawn(a).spawn(k)`` and ``r.spawn(b).spawn(k)`` never coincide.
        """
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._path = self._path + (int(key),)
        ss = np.random.SeedSequence([self.seed, len(child._path), *child._path])
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0, dtype=np.float64) -> np.ndarray:
        u = self._gen.random(size=shape)
        return (low + (high - low) * u).astype(dtype, copy=False)

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1]
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape).astype(dtype, copy=False)

    def integers(self, low: int, high: int | None = None, shape=()) -> np.ndarray | int:
        out = self._gen.integers(low, high, size=shape if shape != () else None)
        return int(out) if shape == () else out

    def bernoulli(self, p: float, shape=()) -> np.ndarray:
        return self._gen.random(size=shape) < p

    def categorical(self, probs) -> int:
        """Index drawn with probability proportional to ``probs``."""
        p = np.asarray(probs, dtype=np.float64).reshape(-1)
        if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("categorical: probabilities must be finite and non-negative")
        total = p.sum()
        if total <= 0:
            raise ValueError("categorical: probabilities sum to zero")
        cdf = np.cumsum(p / total)
        u = self._gen.random()
        idx = int(np.searchsorted(cdf, u, side="right"))
        # guard against cdf[-1] < 1 from rounding and zero-mass trailing entries
        idx = min(idx, p.size - 1)
        while p[idx] == 0:
            idx -= 1
        return idx

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
