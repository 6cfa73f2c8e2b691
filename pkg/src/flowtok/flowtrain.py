"""Conditional flow-matching objective and the tokenizer training loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import center_ca, random_rotation
from .numerics import Rng, Tensor, adamw_step, no_grad, ops
from .tokenizer import Tokenizer

__all__ = [
    "TrainConfig",
    "TRAIN_PRESETS",
    "FlowState",
    "NonFiniteLossError",
    "interpolate",
    "make_training_pair",
    "sample_cond_mask",
    "augment_views",
    "build_batch",
    "flow_matching_loss",
    "flow_loss",
    "lr_at",
    "CodebookUsage",
    "Trainer",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1.7e-4
    beta1: float = 0.9
    beta2: float = 0.95
    warmup: int = 1000
    decay_iters: int = 100_000
    min_lr: float = 1e-4
    batch_size: int = 32
    grad_accum: int = 8
    cond_mask_prob: float = 0.1
    gpt_reg_weight: float = 0.0
    weight_decay: float = 0.0
    clip: float | None = 1.0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if not self.warmup < self.decay_iters:
            raise ValueError("warmup must be smaller than decay_iters")
        if not 0.0 <= self.cond_mask_prob <= 1.0:
            raise ValueError("cond_mask_prob must lie in [0, 1]")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("batch_size and grad_accum must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


TRAIN_PRESETS = {
    "default": TrainConfig(),
    # one micro-batch per optimizer step so a few thousand steps fit on a CPU
    "small": TrainConfig(grad_accum=1),
}


# -- probability path --------------------------------------------------------

@dataclass
class FlowState:
    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    x_t: np.ndarray


def interpolate(x0: np.ndarray, x1: np.ndarray, t) -> np.ndarray:
    """Linear path; ``t`` broadcasts over the leading (batch) axis."""
    t = np.asarray(t, dtype=np.float64)
    t = t.reshape(t.shape + (1,) * (np.ndim(x0) - t.ndim))
    return (1.0 - t) * x0 + t * x1


def make_training_pair(x1: np.ndarray, rng: Rng, t=None) -> FlowState:
    """Centered noise, a time in [0, 1), and the interpolant.

    ``x1`` is (L, A, 3) or batched (B, L, A, 3); one t is drawn per sample.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    batch = x1.shape[:-3]
    x0 = center_ca(rng.normal(x1.shape))
    if t is None:
        t = rng.uniform(batch)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), batch).copy()
    return FlowState(x0=x0, x1=x1, t=t, x_t=interpolate(x0, x1, t))


def sample_cond_mask(n: int, p: float, rng: Rng) -> np.ndarray:
    """Per-sample flags; True means the condition is replaced by the null token."""
    return rng.uniform((n,)) < p


def augment_views(x: np.ndarray, n: int, rng: Rng) -> np.ndarray:
    """``n`` independently rotated copies of a centered (L, A, 3) structure."""
    x = center_ca(np.asarray(x, dtype=np.float64))
    rots = np.stack([random_rotation(rng) for _ in range(n)])
    return np.einsum("bij,laj->blai", rots, x)


@dataclass
class Batch:
    state: FlowState
    cond_mask: np.ndarray
    use_self_cond: bool
    index: int


def build_batch(x_model: np.ndarray, cfg: TrainConfig, rng: Rng, index: int = 0, self_conditioning: bool = False) -> Batch:
    x1 = augment_views(x_model, cfg.batch_size, rng)
    state = make_training_pair(x1, rng)
    mask = sample_cond_mask(cfg.batch_size, cfg.cond_mask_prob, rng)
    use_sc = bool(self_conditioning and rng.uniform() < 0.5)
    return Batch(state, mask, use_sc, index)


# -- objective -----------------------------------------------------------------

class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, diagnostics: dict):
        self.step = step
        self.diagnostics = diagnostics
        super().__init__(f"non-finite loss at step {step}: {json.dumps(diagnostics, sort_keys=True, default=str)}")


def flow_matching_loss(pred, x0: np.ndarray, x1: np.ndarray):
    """Mean squared error against the path velocity ``x1 - x0``.

    Works on a Tensor (differentiable) or a plain array.
    """
    target = np.asarray(x1, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
    if isinstance(pred, Tensor):
        diff = pred - target.astype(pred.dtype)
        return ops.mean(diff * diff)
    diff = np.asarray(pred, dtype=np.float64) - target
    return float(np.mean(diff * diff))


def flow_loss(
    model: Tokenizer,
    batch: Batch,
    train: bool = True,
    rng: Rng | None = None,
    decoder: Callable | None = None,
):
    """Encode clean x1, quantize, decode x_t; returns (loss, codes).

    ``decoder`` replaces the model's decoder for testing; it receives the
    FlowState and must return a prediction shaped like x1.
    """
    st = batch.state
    if decoder is not None:
        return flow_matching_loss(decoder(st), st.x0, st.x1), None
    dtype = model.store.dtype
    c_pre = model.encode(st.x1.astype(dtype), train=train, rng=rng)
    q, codes = model.quantize(c_pre)
    cond = model.condition(q, train=train, rng=rng)
    x_t = st.x_t.astype(dtype)
    self_cond = None
    if batch.use_self_cond:
        with no_grad():
            v0 = model.decode(x_t, st.t, cond.detach(), cond_mask=batch.cond_mask)
        tt = st.t.reshape(-1, 1, 1, 1)
        self_cond = (x_t + (1.0 - tt) * v0.data).astype(dtype)
    v = model.decode(x_t, st.t, cond, cond_mask=batch.cond_mask, self_cond=self_cond, train=train, rng=rng)
    return flow_matching_loss(v, st.x0, st.x1), codes


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup, cosine decay to ``min_lr``, then flat."""
    if step < cfg.warmup:
        return cfg.lr * step / cfg.warmup
    if step >= cfg.decay_iters:
        return cfg.min_lr
    frac = (step - cfg.warmup) / (cfg.decay_iters - cfg.warmup)
    return cfg.min_lr + 0.5 * (1.0 + math.cos(math.pi * frac)) * (cfg.lr - cfg.min_lr)


class CodebookUsage:
    """Running set of codes seen."""

    def __init__(self, size: int):
        self.size = size
        self.seen: set[int] = set()

    def update(self, codes) -> int:
        self.seen.update(int(c) for c in np.unique(np.asarray(codes)))
        return len(self.seen)

    @property
    def count(self) -> int:
        return len(self.seen)

    @property
    def fraction(self) -> float:
        return self.count / self.size

    def reset(self) -> None:
        self.seen.clear()


# -- training loop -------------------------------------------------------------

@dataclass
class Trainer:
    """Single-protein-per-micro-step training over a fixed corpus.

    Every optimizer step draws its randomness from ``Rng(seed).spawn(step)``,
    so a run is reproducible from its config alone.  ``prior`` is any
    object with ``store`` and ``loss(codes) -> Tensor``; it is only
    touched when ``gpt_reg_weight > 0``.
    """

    model: Tokenizer
    structures: Sequence[np.ndarray]
    cfg: TrainConfig = field(default_factory=TrainConfig)
    prior: object | None = None
    log_path: Path | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.structures:
            raise ValueError("no training structures")
        self.data = [self.model.to_model_units(np.asarray(x, dtype=np.float64)) for x in self.structures]
        self.usage = CodebookUsage(self.model.fsq.codebook_size)
        self.base_rng = Rng(self.cfg.seed)
        if self.log_path is not None:
            self.log_path = Path(self.log_path)
            self.log_path.parent.mkdir(parents=True, exist_ok=True)

    @property
    def step(self) -> int:
        return self.model.store.step

    def _order(self, micro: int) -> int:
        # epoch-wise permutations keep coverage even across proteins
        n = len(self.data)
        epoch, pos = divmod(micro, n)
        return int(self.base_rng.spawn(1_000_000 + epoch).permutation(n)[pos])

    def train_step(self) -> dict:
        cfg = self.cfg
        step = self.step
        rng = self.base_rng.spawn(step)
        accum = cfg.grad_accum
        total = 0.0
        reg_total = 0.0
        for k in range(accum):
            micro = step * accum + k
            idx = self._order(micro)
            mrng = rng.spawn(k)
            batch = build_batch(self.data[idx], cfg, mrng, idx, self.model.config.self_conditioning)
            loss, codes = flow_loss(self.model, batch, train=True, rng=mrng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLossError(step, {"micro_step": k, "protein": idx, "t_min": float(batch.state.t.min()), "t_max": float(batch.state.t.max())})
            self.usage.update(codes)
            objective = loss
            if cfg.gpt_reg_weight > 0 and self.prior is not None:
                reg = self.prior.loss(codes)
                reg_total += float(reg.data)
                objective = objective + reg * cfg.gpt_reg_weight
            if accum > 1:
                objective = objective * (1.0 / accum)
            objective.backward()
            total += value
        lr = lr_at(step, cfg)
        norm = adamw_step(self.model.store, lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.clip)
        if cfg.gpt_reg_weight > 0 and self.prior is not None:
            adamw_step(self.prior.store, lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.clip)
        rec = {
            "step": step,
            "loss": total / accum,
            "lr": lr,
            "grad_norm": norm,
            "codebook_usage": self.usage.fraction,
        }
        if cfg.gpt_reg_weight > 0 and self.prior is not None:
            rec["prior_loss"] = reg_total / accum
        self.history.append(rec)
        if self.log_path is not None:
            with self.log_path.open("a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return rec

    def run(self, steps: int, callback: Callable[[dict], None] | None = None) -> list[dict]:
        out = []
        for _ in range(steps):
            rec = self.train_step()
            out.append(rec)
            if callback is not None:
                callback(rec)
        return out

