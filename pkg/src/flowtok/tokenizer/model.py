"""Diffusion autoencoder: windowed encoder, FSQ bottleneck, flow decoder."""

from __future__ import annotations

import numpy as np

from .. import nn
from ..geometry import center_ca
from ..numerics import ParameterStore, Rng, Tensor, load_checkpoint, no_grad, ops, save_checkpoint
from .config import TokenizerConfig
from .fsq import FSQ

__all__ = ["Tokenizer", "ConfigMismatchError", "REL_POS_CLIP", "NUM_RBF"]

REL_POS_CLIP = 32
NUM_RBF = 16
RBF_MAX = 2.0  # model units (20 Å at the default scale)
TIME_SCALE = 1000.0


class ConfigMismatchError(ValueError):
    pass


class Tokenizer:
    """Parameters plus forward passes.

    All coordinates handled here are in model units: Å divided by
    ``config.coord_scale`` and Cα-centered.  Tensors are batched as
    ``(B, L, A, 3)``.
    """

    def __init__(self, config: TokenizerConfig, store: ParameterStore | None = None, dtype=np.float32):
        self.config = config
        self.fsq = FSQ(config.fsq_levels)
        if store is None:
            store = ParameterStore(dtype)
            self._init(store, Rng(config.seed))
        self.store = store

    # -- parameters ---------------------------------------------------------

    def _init(self, s: ParameterStore, rng: Rng) -> None:
        c = self.config
        a3 = 3 * c.atoms
        ew, dw = c.enc_width, c.dec_width
        nn.init_linear(s, "enc.embed.l1", a3, ew, rng)
        nn.init_linear(s, "enc.embed.l2", ew, ew, rng)
        nn.init_norm(s, "enc.embed.norm", ew)
        for i in range(c.enc_layers):
            p = f"enc.blocks.{i}"
            nn.init_norm(s, f"{p}.norm1", ew)
            nn.init_attention(s, f"{p}.attn", ew, rng)
            nn.init_norm(s, f"{p}.norm2", ew)
            nn.init_mlp(s, f"{p}.mlp", ew, c.mlp_factor, rng)
        nn.init_norm(s, "enc.out_norm", ew)
        nn.init_linear(s, "fsq.in", ew, self.fsq.dim, rng)
        nn.init_linear(s, "fsq.out", self.fsq.dim, dw, rng)

        nn.init_linear(s, "dec.in", a3 * (2 if c.self_conditioning else 1), dw, rng)
        s.add("dec.type", rng.normal((2, dw)) * 0.02)
        s.add("dec.null", rng.normal((dw,)) * 0.02)
        nn.init_linear(s, "dec.time.l1", c.time_features, dw, rng)
        nn.init_linear(s, "dec.time.l2", dw, dw, rng)
        # one modulation projection shared by every block: 6 per-block chunks + 2 final
        nn.init_linear(s, "dec.ada", dw, 8 * dw, rng, zero=True)
        if c.pair_bias:
            pc = c.pair_channels
            s.add("dec.pair.rel", rng.normal((2 * REL_POS_CLIP + 1, pc)) * 0.02)
            s.add("dec.pair.stream", rng.normal((4, pc)) * 0.02)
            nn.init_linear(s, "dec.pair.rbf", NUM_RBF, pc, rng)
        for i in range(c.dec_layers):
            p = f"dec.blocks.{i}"
            nn.init_attention(s, f"{p}.attn", dw, rng)
            nn.init_mlp(s, f"{p}.mlp", dw, c.mlp_factor, rng)
            if c.pair_bias:
                nn.init_linear(s, f"{p}.pair", c.pair_channels, c.heads, rng, bias=False, zero=True)
        nn.init_linear(s, "dec.final", dw, a3, rng, zero=True)

    def num_params(self, prefix: str = "") -> int:
        return self.store.num_params(prefix)

    # -- coordinate conventions --------------------------------------------

    def to_model_units(self, coords_angstrom: np.ndarray) -> np.ndarray:
        return center_ca(coords_angstrom) / self.config.coord_scale

    def to_angstrom(self, coords_model: np.ndarray) -> np.ndarray:
        return np.asarray(coords_model, dtype=np.float64) * self.config.coord_scale

    def _check_coords(self, x: np.ndarray) -> None:
        c = self.config
        if x.ndim != 4 or x.shape[2] != c.atoms or x.shape[3] != 3:
            raise ConfigMismatchError(f"expected (B, L, {c.atoms}, 3) coordinates, got {x.shape}")
        if x.shape[1] > c.max_len:
            raise ValueError(f"length {x.shape[1]} exceeds configured maximum {c.max_len}")

    # -- encoder ------------------------------------------------------------

    def encode(self, x1: np.ndarray, train: bool = False, rng: Rng | None = None, center: bool = True) -> Tensor:
        """Pre-quantization latents ``c`` of shape (B, L, enc_width).

        ``center=False`` skips the internal Cα centering (inputs must already
        be centered); it exists for locality checks, where re-centering would
        couple every residue to every other.
        """
        c = self.config
        s = self.store
        x1 = np.asarray(x1)
        self._check_coords(x1)
        b, length = x1.shape[:2]
        if center:
            x1 = center_ca(x1)
        feats = Tensor(x1.reshape(b, length, -1).astype(s.dtype))
        h = nn.linear(s, "enc.embed.l2", ops.silu(nn.linear(s, "enc.embed.l1", feats)))
        h = nn.norm(s, "enc.embed.norm", h)
        rope = None
        if c.enc_pos == "absolute":
            h = h + nn.sinusoidal(np.arange(length), c.enc_width).astype(s.dtype)
        elif c.enc_pos == "rotary":
            rope = nn.rope_tables(np.arange(length), c.enc_width // c.heads)
        mask = nn.window_mask(length, c.window)
        drop = rng if train else None
        for i in range(c.enc_layers):
            p = f"enc.blocks.{i}"
            a = nn.attention(s, f"{p}.attn", nn.norm(s, f"{p}.norm1", h), c.heads, rope=rope, mask=mask)
            h = h + nn.dropout(a, c.dropout, drop)
            m = nn.mlp(s, f"{p}.mlp", nn.norm(s, f"{p}.norm2", h), c.dropout, drop)
            h = h + nn.dropout(m, c.dropout, drop)
        return nn.norm(s, "enc.out_norm", h)

    # -- bottleneck ---------------------------------------------------------

    def quantize(self, c_pre: Tensor) -> tuple[Tensor, np.ndarray]:
        """Grid values ``ĉ`` (B, L, len(levels)) and integer codes (B, L)."""
        z = nn.linear(self.store, "fsq.in", c_pre)
        q = self.fsq.quantize(z, identity=not self.config.quantize)
        codes = self.fsq.codes_from_grid(np.round(self.fsq.bound(z.data.astype(np.float64))))
        return q, codes

    def condition(self, q: Tensor, train: bool = False, rng: Rng | None = None) -> Tensor:
        """Project grid values to decoder-width condition tokens."""
        if train and self.config.codebook_jitter > 0 and rng is not None:
            j = self.config.codebook_jitter
            q = q + rng.uniform(q.shape, -j, j).astype(q.dtype)
        return nn.linear(self.store, "fsq.out", self.fsq.normalize(q))

    def condition_from_codes(self, codes: np.ndarray) -> np.ndarray:
        q = self.fsq.grid_from_codes(codes).astype(self.store.dtype)
        with no_grad():
            return self.condition(Tensor(q)).data

    # -- decoder ------------------------------------------------------------

    def _pair_bias_rep(self, x_t: np.ndarray) -> Tensor:
        s = self.store
        b, length = x_t.shape[:2]
        pos = np.concatenate([np.arange(length)] * 2)
        stream = np.repeat([0, 1], length)
        rel = np.clip(pos[:, None] - pos[None, :], -REL_POS_CLIP, REL_POS_CLIP) + REL_POS_CLIP
        pair = ops.embedding(s["dec.pair.rel"], rel) + ops.embedding(s["dec.pair.stream"], 2 * stream[:, None] + stream[None, :])
        ca = x_t[:, :, 1 if self.config.atoms == 3 else 0]
        d = np.linalg.norm(ca[:, :, None] - ca[:, None, :], axis=-1)
        d = np.tile(d, (1, 2, 2))
        centers = np.linspace(0.0, RBF_MAX, NUM_RBF)
        width = centers[1] - centers[0]
        rbf = np.exp(-(((d[..., None] - centers) / width) ** 2)).astype(s.dtype)
        return pair + nn.linear(s, "dec.pair.rbf", Tensor(rbf))

    def decode(
        self,
        x_t: np.ndarray,
        t,
        cond: Tensor | np.ndarray | None,
        cond_mask: np.ndarray | None = None,
        self_cond: np.ndarray | None = None,
        train: bool = False,
        rng: Rng | None = None,
    ) -> Tensor:
        """Predicted velocity (B, L, A, 3).

        ``cond`` is (B, L, dec_width) or None for the null condition;
        ``cond_mask[b]`` True swaps sample b's condition for the null row.
        """
        c = self.config
        s = self.store
        x_t = np.asarray(x_t)
        self._check_coords(x_t)
        b, length = x_t.shape[:2]
        dw = c.dec_width
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
        feats = x_t.reshape(b, length, -1)
        if c.self_conditioning:
            sc = np.zeros_like(x_t) if self_cond is None else np.asarray(self_cond)
            feats = np.concatenate([feats, sc.reshape(b, length, -1)], axis=-1)
        h_x = nn.linear(s, "dec.in", Tensor(feats.astype(s.dtype))) + s["dec.type"][0]

        null = ops.reshape(s["dec.null"], (1, 1, dw))
        if cond is None:
            h_c = null + np.zeros((b, length, dw), dtype=s.dtype)
        else:
            cond = cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond, dtype=s.dtype))
            if cond.shape[-2] != length:
                raise ValueError(f"condition length {cond.shape[-2]} does not match coordinates length {length}")
            if cond.ndim == 2:
                cond = ops.reshape(cond, (1, length, dw)) + np.zeros((b, length, dw), dtype=s.dtype)
            if cond_mask is not None and np.any(cond_mask):
                m = np.asarray(cond_mask, dtype=s.dtype).reshape(b, 1, 1)
                h_c = cond * (1.0 - m) + null * m
            else:
                h_c = cond
        h_c = h_c + s["dec.type"][1]
        h = ops.concat([h_x, h_c], axis=1)

        temb = Tensor(nn.sinusoidal(t * TIME_SCALE, c.time_features).astype(s.dtype))
        temb = nn.linear(s, "dec.time.l2", ops.silu(nn.linear(s, "dec.time.l1", temb)))
        mod = nn.linear(s, "dec.ada", ops.silu(temb))
        mod = ops.reshape(mod, (b, 1, 8, dw))
        sh1, sc1, g1, sh2, sc2, g2, shf, scf = (mod[:, :, k] for k in range(8))

        rope = nn.rope_tables(np.concatenate([np.arange(length)] * 2), dw // c.heads)
        pair = self._pair_bias_rep(x_t) if c.pair_bias else None
        drop = rng if train else None
        for i in range(c.dec_layers):
            p = f"dec.blocks.{i}"
            bias = None
            if pair is not None:
                bias = ops.transpose(nn.linear(s, f"{p}.pair", pair), (0, 3, 1, 2))
            a = ops.layer_norm(h) * (1.0 + sc1) + sh1
            a = nn.attention(s, f"{p}.attn", a, c.heads, rope=rope, bias=bias)
            h = h + g1 * nn.dropout(a, c.dropout, drop)
            m = ops.layer_norm(h) * (1.0 + sc2) + sh2
            m = nn.mlp(s, f"{p}.mlp", m, c.dropout, drop)
            h = h + g2 * nn.dropout(m, c.dropout, drop)
        out = ops.layer_norm(h[:, :length]) * (1.0 + scf) + shf
        v = nn.linear(s, "dec.final", out)
        return ops.reshape(v, (b, length, c.atoms, 3))

    # -- inference helpers --------------------------------------------------

    def tokenize(self, coords_angstrom: np.ndarray) -> np.ndarray:
        """Codes (L,) for one structure's (L, A, 3) coordinates."""
        x = self.to_model_units(np.asarray(coords_angstrom, dtype=np.float64))[None]
        with no_grad():
            _, codes = self.quantize(self.encode(x))
        return codes[0]

    def field(self, cond: np.ndarray | None):
        """Velocity callable ``v(x, t, conditional=True, self_cond=None)`` for the samplers."""

        def v(x, t, conditional: bool = True, self_cond=None):
            x = np.asarray(x)
            with no_grad():
                out = self.decode(x.astype(self.store.dtype), t, cond if conditional else None, self_cond=self_cond)
            # keep the sampler state in the zero-centroid subspace
            return center_ca(out.data.astype(np.float64))

        v.uses_self_cond = self.config.self_conditioning
        return v

    # -- persistence --------------------------------------------------------

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(path, self.store, {"kind": "tokenizer", "tokenizer": self.config.to_dict()}, meta)

    @classmethod
    def load(cls, path) -> "Tokenizer":
        store, header = load_checkpoint(path)
        cfg = header.get("config", {})
        if cfg.get("kind") != "tokenizer":
            raise ConfigMismatchError(f"{path} is not a tokenizer checkpoint")
        return cls(TokenizerConfig.from_dict(cfg["tokenizer"]), store=store)

    def astype(self, dtype) -> "Tokenizer":
        return Tokenizer(self.config, store=self.store.astype(dtype))
