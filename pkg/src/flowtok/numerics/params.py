"""Named parameters, AdamW, and the binary checkpoint container."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .tensor import Tensor

__all__ = [
    "ParameterStore",
    "NonFiniteGradientError",
    "adamw_step",
    "global_grad_norm",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_MAGIC = b"FTOKCKPT"
CHECKPOINT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient in parameter {name!r}")


class ParameterStore:
    """Ordered mapping of parameter name to leaf :class:`Tensor`.

    Each parameter owns a gradient slot (``tensor.grad``) and AdamW moment
    buffers; ``step`` counts optimizer updates.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def num_params(self, prefix: str = "") -> int:
        return int(sum(t.size for n, t in self._params.items() if n.startswith(prefix)))

    def zero_grad(self) -> None:
        for t in self._params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            else:
                t.grad[...] = 0.0

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore(dtype)
        for name, t in self._params.items():
            out.add(name, t.data)
            out.m[name] = self.m[name].astype(dtype)
            out.v[name] = self.v[name].astype(dtype)
        out.step = self.step
        return out

    def copy(self) -> "ParameterStore":
        return self.astype(self.dtype)

    def values_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}


def global_grad_norm(store: ParameterStore) -> float:
    total = 0.0
    for t in store._params.values():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def _default_decay(name: str, t: Tensor) -> bool:
    # matrices decay; biases, norms, and embeddings' 1-D params do not
    return t.ndim >= 2


def adamw_step(
    store: ParameterStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.95,
    weight_decay: float = 0.0,
    clip: float | None = None,
    eps: float = 1e-8,
    decay_filter: Callable[[str, Tensor], bool] = _default_decay,
) -> float:
    """One decoupled-weight-decay Adam update; returns the pre-clip gradient norm.

    Gradients are zeroed afterwards.
    """
    for name, t in store.items():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NonFiniteGradientError(name)
    norm = global_grad_norm(store)
    scale = 1.0
    if clip is not None and norm > clip:
        scale = clip / (norm + 1e-12)
    store.step += 1
    step = store.step
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for name, t in store.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if scale != 1.0:
            g = g * scale
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if weight_decay and decay_filter(name, t):
            t.data *= 1.0 - lr * weight_decay
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    store.zero_grad()
    return norm


# ---------------------------------------------------------------------------
# checkpoint container
#
# layout: MAGIC(8) | version u32 LE | header_len u64 LE | header JSON | payload
# payload holds raw little-endian arrays at the offsets listed in the header.
# ---------------------------------------------------------------------------

def _le(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def save_checkpoint(path, store: ParameterStore, config: dict | None = None, meta: dict | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for group, source in (("param", {n: t.data for n, t in store.items()}), ("m", store.m), ("v", store.v)):
        for name, arr in source.items():
            raw = _le(arr).tobytes()
            entries.append(
                {
                    "group": group,
                    "name": name,
                    "shape": list(arr.shape),
                    "dtype": _le(arr).dtype.str,
                    "offset": offset,
                    "nbytes": len(raw),
                }
            )
            chunks.append(raw)
            offset += len(raw)
    header = {
        "format": "flowtok-checkpoint",
        "version": CHECKPOINT_VERSION,
        "step": int(store.step),
        "dtype": store.dtype.str,
        "config": config or {},
        "meta": meta or {},
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a flowtok checkpoint")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[20 : 20 + hlen].decode("utf-8"))
    payload = memoryview(blob)[20 + hlen :]
    store = ParameterStore(np.dtype(header["dtype"]).newbyteorder("="))
    buffers: dict[str, dict[str, np.ndarray]] = {"param": {}, "m": {}, "v": {}}
    for e in header["tensors"]:
        arr = np.frombuffer(payload[e["offset"] : e["offset"] + e["nbytes"]], dtype=np.dtype(e["dtype"]))
        buffers[e["group"]][e["name"]] = arr.reshape(e["shape"]).astype(store.dtype)
    for name, arr in buffers["param"].items():
        store.add(name, arr)
        store.m[name] = buffers["m"].get(name, np.zeros_like(arr)).copy()
        store.v[name] = buffers["v"].get(name, np.zeros_like(arr)).copy()
    store.step = int(header["step"])
    return store, header
