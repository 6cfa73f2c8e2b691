"""Shared test oracles."""

import numpy as np


def finite_difference_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to array ``x`` (mutated in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_difference_at(f, x: np.ndarray, indices, eps: float = 1e-5) -> np.ndarray:
    """Central differences for selected flat ``indices`` of ``x`` only."""
    flat = x.reshape(-1)
    out = np.zeros(len(indices))
    for k, i in enumerate(indices):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2 * eps)
    return out


def gradcheck_tokenizer(quantize: bool = False, seed: int = 0, **overrides):
    """Tiny float64 tokenizer (L=6, A=1, widths 16) plus one fixed training batch.

    Parameters are jittered away from their initial values so zero-initialized
    output layers do not hide upstream gradients.
    """
    from flowtok.flowtrain import Batch, make_training_pair
    from flowtok.geometry import center_ca
    from flowtok.numerics import Rng
    from flowtok.synth import synthetic_structure
    from flowtok.tokenizer import Tokenizer, preset

    cfg = preset("tiny", quantize=quantize, seed=seed, **overrides)
    model = Tokenizer(cfg, dtype=np.float64)
    rng = Rng(seed + 100)
    for name, t in model.store.items():
        t.data += 0.3 * rng.normal(t.shape)
    x1 = synthetic_structure(6, rng, kind="helix").coords
    x1 = np.stack([center_ca(x1), center_ca(x1[::-1].copy())]) / cfg.coord_scale
    state = make_training_pair(x1, rng, t=np.array([0.3, 0.8]))
    batch = Batch(state, cond_mask=np.array([False, True]), use_self_cond=False, index=0)
    return model, batch
