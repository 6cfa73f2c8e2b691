"""Autoregressive prior over token sequences.

Sequences are framed as ``BOS codes... EOS`` with ``BOS = codebook`` and
``EOS = codebook + 1``.  Generation never emits BOS, and EOS is blocked
at the first position so every sequence has at least one code.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import nn
from .numerics import ParameterStore, Rng, Tensor, adamw_step, load_checkpoint, no_grad, ops, save_checkpoint

__all__ = [
    "PriorConfig",
    "PriorTrainConfig",
    "Prior",
    "Generated",
    "frame",
    "prior_loss",
    "nucleus_filter",
    "min_p_filter",
    "generate",
    "greedy",
    "best_of_n",
    "sequence_log_likelihood",
    "train_prior",
    "write_token_file",
    "read_token_file",
]


@dataclass(frozen=True)
class PriorConfig:
    codebook_size: int = 1000
    layers: int = 4
    width: int = 256
    heads: int = 8
    mlp_factor: int = 4
    max_len: int = 258  # framed length, BOS and EOS included
    top_p: float = 0.9
    min_p: float | None = None
    best_of: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must lie in (0, 1]")
        if self.min_p is not None and not 0.0 <= self.min_p <= 1.0:
            raise ValueError("min_p must lie in [0, 1]")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if self.max_len < 3:
            raise ValueError("max_len must leave room for BOS, one code, EOS")
        if self.best_of < 1:
            raise ValueError("best_of must be >= 1")

    @property
    def bos(self) -> int:
        return self.codebook_size

    @property
    def eos(self) -> int:
        return self.codebook_size + 1

    @property
    def vocab(self) -> int:
        return self.codebook_size + 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown prior options: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "PriorConfig":
        return replace(self, **kw)


def frame(codes: Sequence[int], cfg: PriorConfig) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() >= cfg.codebook_size):
        raise ValueError(f"codes must lie in [0, {cfg.codebook_size})")
    if codes.size + 2 > cfg.max_len:
        raise ValueError(f"sequence of {codes.size} codes exceeds max_len {cfg.max_len} once framed")
    return np.concatenate([[cfg.bos], codes, [cfg.eos]])


class Prior:
    """Decoder-only transformer with learned absolute positions."""

    def __init__(self, config: PriorConfig, store: ParameterStore | None = None, dtype=np.float32):
        self.config = config
        if store is None:
            store = ParameterStore(dtype)
            self._init(store, Rng(config.seed))
        self.store = store

    def _init(self, s: ParameterStore, rng: Rng) -> None:
        c = self.config
        s.add("tok", rng.normal((c.vocab, c.width)) * 0.02)
        s.add("pos", rng.normal((c.max_len, c.width)) * 0.02)
        for i in range(c.layers):
            p = f"blocks.{i}"
            nn.init_norm(s, f"{p}.norm1", c.width)
            nn.init_attention(s, f"{p}.attn", c.width, rng)
            nn.init_norm(s, f"{p}.norm2", c.width)
            nn.init_mlp(s, f"{p}.mlp", c.width, c.mlp_factor, rng)
        nn.init_norm(s, "out_norm", c.width)
        # small head so an untrained model starts near the uniform distribution
        nn.init_linear(s, "head", c.width, c.vocab, rng, gain=0.1)

    def num_params(self) -> int:
        return self.store.num_params()

    def logits(self, tokens: np.ndarray) -> Tensor:
        """(B, T) token ids -> (B, T, vocab) next-token logits."""
        c = self.config
        s = self.store
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None]
        b, t = tokens.shape
        if t > c.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {c.max_len}")
        if tokens.min() < 0 or tokens.max() >= c.vocab:
            raise ValueError(f"token ids must lie in [0, {c.vocab})")
        h = ops.embedding(s["tok"], tokens) + s["pos"][:t]
        mask = nn.causal_mask(t)
        for i in range(c.layers):
            p = f"blocks.{i}"
            h = h + nn.attention(s, f"{p}.attn", nn.norm(s, f"{p}.norm1", h), c.heads, mask=mask)
            h = h + nn.mlp(s, f"{p}.mlp", nn.norm(s, f"{p}.norm2", h))
        return nn.linear(s, "head", nn.norm(s, "out_norm", h))

    def next_log_probs(self, prefix: np.ndarray) -> np.ndarray:
        """Log-probabilities (vocab,) of the token following ``prefix``."""
        with no_grad():
            z = self.logits(np.asarray(prefix)[None]).data[0, -1].astype(np.float64)
        z = z - z.max()
        return z - np.log(np.exp(z).sum())

    def loss(self, codes: np.ndarray | Iterable[Sequence[int]]) -> Tensor:
        return prior_loss(self, codes)

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(path, self.store, {"kind": "prior", "prior": self.config.to_dict()}, meta)

    @classmethod
    def load(cls, path) -> "Prior":
        store, header = load_checkpoint(path)
        cfg = header.get("config", {})
        if cfg.get("kind") != "prior":
            raise ValueError(f"{path} is not a prior checkpoint")
        return cls(PriorConfig.from_dict(cfg["prior"]), store=store)


def _pad(sequences: Sequence[Sequence[int]], cfg: PriorConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    framed = [frame(s, cfg) for s in sequences]
    t = max(len(f) for f in framed) - 1
    inputs = np.full((len(framed), t), cfg.eos, dtype=np.int64)
    targets = np.full((len(framed), t), cfg.eos, dtype=np.int64)
    weights = np.zeros((len(framed), t))
    for i, f in enumerate(framed):
        n = len(f) - 1
        inputs[i, :n] = f[:-1]
        targets[i, :n] = f[1:]
        weights[i, :n] = 1.0
    return inputs, targets, weights


def prior_loss(model: Prior, sequences) -> Tensor:
    """Mean next-token cross-entropy over real (non-padding) positions."""
    if isinstance(sequences, np.ndarray) and sequences.ndim == 2:
        sequences = list(sequences)
    inputs, targets, weights = _pad(sequences, model.config)
    logp = ops.log_softmax(model.logits(inputs), axis=-1)
    onehot = np.zeros(logp.shape, dtype=logp.dtype)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    w = (weights / weights.sum()).astype(logp.dtype)[..., None]
    return -ops.sum(logp * (onehot * w))


# -- sampling -------------------------------------------------------------------

def nucleus_filter(probs: np.ndarray, p: float) -> np.ndarray:
    """Zero all but the smallest top-probability set with mass >= p, then renormalize."""
    probs = np.asarray(probs, dtype=np.float64)
    if p >= 1.0:
        return probs / probs.sum()
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    keep = int(np.searchsorted(csum, p * csum[-1], side="left")) + 1
    out = np.zeros_like(probs)
    idx = order[:keep]
    out[idx] = probs[idx]
    return out / out.sum()


def min_p_filter(probs: np.ndarray, min_p: float) -> np.ndarray:
    """Keep tokens whose probability is at least ``min_p`` times the maximum."""
    probs = np.asarray(probs, dtype=np.float64)
    out = np.where(probs >= min_p * probs.max(), probs, 0.0)
    return out / out.sum()


@dataclass
class Generated:
    codes: np.ndarray
    log_likelihood: float
    terminated: str  # "eos" or "max_len"


def _allowed_log_probs(logp: np.ndarray, position: int, cfg: PriorConfig) -> np.ndarray:
    logp = logp.copy()
    logp[cfg.bos] = -np.inf
    if position == 0:
        logp[cfg.eos] = -np.inf
    return logp


def generate(model, cfg: PriorConfig, rng: Rng) -> Generated:
    """Ancestral sampling from BOS with nucleus (and optional min-p) truncation.

    ``model`` needs only ``next_log_probs(prefix) -> (vocab,)``.  The
    returned log-likelihood is under the untruncated model distribution
    and includes the EOS token when one is emitted.
    """
    seq = [cfg.bos]
    ll = 0.0
    while True:
        pos = len(seq) - 1
        if len(seq) == cfg.max_len - 1:
            return Generated(np.array(seq[1:], dtype=np.int64), ll, "max_len")
        logp = np.asarray(model.next_log_probs(np.array(seq)), dtype=np.float64)
        probs = np.exp(_allowed_log_probs(logp, pos, cfg))
        probs = nucleus_filter(probs, cfg.top_p)
        if cfg.min_p is not None:
            probs = min_p_filter(probs, cfg.min_p)
        tok = rng.categorical(probs)
        ll += float(logp[tok])
        if tok == cfg.eos:
            return Generated(np.array(seq[1:], dtype=np.int64), ll, "eos")
        seq.append(tok)


def greedy(model, cfg: PriorConfig) -> Generated:
    seq = [cfg.bos]
    ll = 0.0
    while len(seq) < cfg.max_len - 1:
        logp = np.asarray(model.next_log_probs(np.array(seq)), dtype=np.float64)
        tok = int(np.argmax(_allowed_log_probs(logp, len(seq) - 1, cfg)))
        ll += float(logp[tok])
        if tok == cfg.eos:
            return Generated(np.array(seq[1:], dtype=np.int64), ll, "eos")
        seq.append(tok)
    return Generated(np.array(seq[1:], dtype=np.int64), ll, "max_len")


def best_of_n(model, cfg: PriorConfig, rng: Rng, n: int | None = None, draw: Callable | None = None) -> Generated:
    """Highest log-likelihood of ``n`` draws; the earliest draw wins ties."""
    n = cfg.best_of if n is None else n
    if n < 1:
        raise ValueError("n must be >= 1")
    draw = generate if draw is None else draw
    best = None
    for _ in range(n):
        g = draw(model, cfg, rng)
        if best is None or g.log_likelihood > best.log_likelihood:
            best = g
    return best


def sequence_log_likelihood(model: Prior, codes: Sequence[int], include_eos: bool = True) -> float:
    """Log-likelihood of a code sequence from one full forward pass."""
    cfg = model.config
    f = frame(codes, cfg)
    if not include_eos:
        f = f[:-1]
    with no_grad():
        z = model.logits(f[:-1][None]).data[0].astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return float(logp[np.arange(len(f) - 1), f[1:]].sum())


# -- training ---------------------------------------------------------------------

@dataclass(frozen=True)
class PriorTrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.95
    warmup: int = 100
    batch_size: int = 16
    weight_decay: float = 0.0
    clip: float | None = 1.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PriorTrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown prior training options: {sorted(unknown)}")
        return cls(**d)


def train_prior(
    model: Prior,
    sequences: Sequence[Sequence[int]],
    cfg: PriorTrainConfig,
    steps: int,
    log_path=None,
    callback: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Minibatch AdamW on next-token cross-entropy with linear warmup."""
    if not sequences:
        raise ValueError("no training sequences")
    base = Rng(cfg.seed)
    history = []
    fh = open(log_path, "a") if log_path is not None else None
    try:
        for _ in range(steps):
            step = model.store.step
            rng = base.spawn(step)
            k = min(cfg.batch_size, len(sequences))
            idx = rng.permutation(len(sequences))[:k]
            loss = prior_loss(model, [sequences[i] for i in sorted(idx)])
            value = float(loss.data)
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite prior loss at step {step}")
            loss.backward()
            lr = cfg.lr * min(1.0, (step + 1) / max(cfg.warmup, 1))
            norm = adamw_step(model.store, lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.clip)
            rec = {"step": step, "loss": value, "lr": lr, "grad_norm": norm}
            history.append(rec)
            if fh is not None:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if callback is not None:
                callback(rec)
    finally:
        if fh is not None:
            fh.close()
    return history


# -- token corpus files -------------------------------------------------------------

def write_token_file(path, records: Iterable[tuple[str, Sequence[int]]]) -> None:
    """One ``id<TAB>codes`` line per record, codes space-separated."""
    lines = [f"{rid}\t{' '.join(str(int(c)) for c in codes)}\n" for rid, codes in records]
    Path(path).write_text("".join(lines))


def read_token_file(path) -> list[tuple[str, np.ndarray]]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"{path}:{n}: expected id<TAB>codes")
        rid, codes = line.split("\t", 1)
        out.append((rid, np.array([int(c) for c in codes.split()], dtype=np.int64)))
    return out
