"""Layer helpers shared by the tokenizer and the prior.

Parameters live in a :class:`ParameterStore` under dotted names; the
functions here read them by name, so a model is a naming convention plus
a forward function.
"""

from __future__ import annotations

import numpy as np

from .numerics import ParameterStore, Rng, Tensor
from .numerics import ops

NEG_INF = -1e9


def init_linear(store: ParameterStore, name: str, d_in: int, d_out: int, rng: Rng, bias: bool = True, zero: bool = False, gain: float = 1.0):
    w = np.zeros((d_in, d_out)) if zero else rng.normal((d_in, d_out)) * (gain / np.sqrt(d_in))
    store.add(f"{name}.w", w)
    if bias:
        store.add(f"{name}.b", np.zeros(d_out))


def linear(store: ParameterStore, name: str, x: Tensor) -> Tensor:
    w = store[f"{name}.w"]
    lead = x.shape[:-1]
    y = ops.matmul(ops.reshape(x, (-1, x.shape[-1])), w)
    y = ops.reshape(y, lead + (w.shape[-1],))
    bname = f"{name}.b"
    if bname in store:
        y = y + store[bname]
    return y


def init_norm(store: ParameterStore, name: str, d: int):
    store.add(f"{name}.g", np.ones(d))
    store.add(f"{name}.b", np.zeros(d))


def norm(store: ParameterStore, name: str, x: Tensor) -> Tensor:
    return ops.layer_norm(x) * store[f"{name}.g"] + store[f"{name}.b"]


def dropout(x: Tensor, p: float, rng: Rng | None) -> Tensor:
    if rng is None or p <= 0.0:
        return x
    keep = (rng.uniform(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep


def sinusoidal(values: np.ndarray, dim: int, max_period: float = 10_000.0) -> np.ndarray:
    """Sin/cos features of scalar ``values``; output shape ``values.shape + (dim,)``."""
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    ang = np.asarray(values, dtype=np.float64)[..., None] * freqs
    out = np.concatenate([np.cos(ang), np.sin(ang)], axis=-1)
    if dim % 2:
        out = np.concatenate([out, np.zeros(out.shape[:-1] + (1,))], axis=-1)
    return out


def rope_tables(positions: np.ndarray, head_dim: int, base: float = 10_000.0) -> tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    inv = base ** (-np.arange(half) / half)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * inv
    ang = np.concatenate([ang, ang], axis=-1)
    return np.cos(ang), np.sin(ang)


def window_mask(length: int, window: int | None) -> np.ndarray | None:
    """Additive mask letting token i see j only when |i - j| <= window (None = full)."""
    if window is None:
        return None
    idx = np.arange(length)
    allowed = np.abs(idx[:, None] - idx[None, :]) <= window
    return np.where(allowed, 0.0, NEG_INF)


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), NEG_INF), k=1)


def init_attention(store: ParameterStore, name: str, d: int, rng: Rng):
    init_linear(store, f"{name}.qkv", d, 3 * d, rng)
    init_linear(store, f"{name}.out", d, d, rng)


def attention(
    store: ParameterStore,
    name: str,
    x: Tensor,
    heads: int,
    rope: tuple[np.ndarray, np.ndarray] | None = None,
    mask: np.ndarray | None = None,
    bias: Tensor | None = None,
) -> Tensor:
    """Multi-head self-attention on ``x`` of shape (B, T, D).

    ``mask`` is an additive (T, T) array; ``bias`` a (B, H, T, T) tensor.
    """
    b, t, d = x.shape
    dh = d // heads
    qkv = linear(store, f"{name}.qkv", x)
    qkv = ops.transpose(ops.reshape(qkv, (b, t, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    if rope is not None:
        cos, sin = rope
        q = ops.rotary(q, cos, sin)
        k = ops.rotary(k, cos, sin)
    logits = ops.matmul(q, ops.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
    if bias is not None:
        logits = logits + bias
    if mask is not None:
        logits = logits + mask.astype(logits.dtype)
    w = ops.softmax(logits, axis=-1)
    out = ops.matmul(w, v)
    out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, t, d))
    return linear(store, f"{name}.out", out)


def init_mlp(store: ParameterStore, name: str, d: int, factor: int, rng: Rng, zero_out: bool = False):
    init_linear(store, f"{name}.fc1", d, factor * d, rng)
    init_linear(store, f"{name}.fc2", factor * d, d, rng, zero=zero_out)


def mlp(store: ParameterStore, name: str, x: Tensor, p_drop: float = 0.0, rng: Rng | None = None) -> Tensor:
    h = ops.gelu(linear(store, f"{name}.fc1", x))
    return linear(store, f"{name}.fc2", dropout(h, p_drop, rng))
