"""Dense tensors with reverse-mode differentiation on top of numpy.

Every op returns a new :class:`Tensor`.  When any input requires gradients
(and recording is enabled) the output keeps its parents plus a closure that
maps the output gradient to one gradient per parent.  :func:`backward`
walks that graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "GradientError",
    "Tensor",
    "as_tensor",
    "backward",
    "no_grad",
    "precision",
    "get_default_dtype",
    "set_default_dtype",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "silu",
    "gelu",
    "matmul",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "swapaxes",
    "getitem",
    "concat",
    "embedding",
    "take_along_last",
    "softmax",
    "log_softmax",
    "layer_norm",
    "rotary",
    "straight_through",
    "stop_gradient",
]

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GradientError(RuntimeError):
    pass


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float type (``float64`` for gradient checks)."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    # make numpy defer to our reflected operators
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op: str | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return transpose(self, None)

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Tensor":
        return stop_gradient(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _wrap_pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    # numpy scalars and float64 constants must not silently widen float32 graphs
    ref = parents[0].dtype
    if data.dtype != ref and all(p.dtype == ref for p in parents):
        data = data.astype(ref)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    _broadcast_check("add", a, b)

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), fn, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    _broadcast_check("sub", a, b)

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), fn, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    _broadcast_check("mul", a, b)

    def fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), fn, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def fn(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), fn, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data**exponent

    def fn(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(out, (a,), fn, "power")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: no overflow and no sign-split masking
    out = np.multiply(x, 0.5)
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    x = a.data

    def fn(g):
        return (g * (s * (1.0 + x * (1.0 - s))),)

    return _make(x * s, (a,), fn, "silu")


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    th = x2 * (0.044715 * _GELU_C)
    th += _GELU_C
    th *= x
    np.tanh(th, out=th)
    out = th + 1.0
    out *= x
    out *= 0.5

    def fn(g):
        # 0.5 (1 + th) + 0.5 x (1 - th^2) c (1 + 3k x^2)
        d = x2 * (3 * 0.044715 * _GELU_C)
        d += _GELU_C
        d *= x
        d *= 1.0 - th * th
        d += th
        d += 1.0
        d *= 0.5
        d *= g
        return (d,)

    return _make(out, (a,), fn, "gelu")


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        # vector cases: promote, compute, squeeze
        if a.ndim == 1 and b.ndim >= 2:
            return reshape(matmul(reshape(a, (1, -1)), b), b.shape[:-2] + (b.shape[-1],))
        if b.ndim == 1 and a.ndim >= 2:
            return reshape(matmul(a, reshape(b, (-1, 1))), a.shape[:-1])
        raise ShapeError("matmul", a.shape, b.shape, detail="need rank >= 1 with one operand rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dims") from None

    def fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), fn, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def fn(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), fn, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data**exponent

    def fn(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(out, (a,), fn, "power")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: no overflow and no sign-split masking
    out = np.multiply(x, 0.5)
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    x = a.data

    def fn(g):
        return (g * (s * (1.0 + x * (1.0 - s))),)

    return _make(x * s, (a,), fn, "silu")


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    th = x2 * (0.044715 * _GELU_C)
    th += _GELU_C
    th *= x
    np.tanh(th, out=th)
    out = th + 1.0
    out *= x
    out *= 0.5

    def fn(g):
        # 0.5 (1 + th) + 0.5 x (1 - th^2) c (1 + 3k x^2)
        d = x2 * (3 * 0.044715 * _GELU_C)
        d += _GELU_C
        d *= x
        d *= 1.0 - th * th
        d += th
        d += 1.0
        d *= 0.5
        d *= g
        return (d,)

    return _make(out, (a,), fn, "gelu")


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        # vector cases: promote, compute, squeeze
        if a.ndim == 1 and b.ndim >= 2:
            return reshape(matmul(reshape(a, (1, -1)), b), b.shape[:-2] + (b.shape[-1],))
        if b.ndim == 1 and a.ndim >= 2:
            return reshape(matmul(a, reshape(b, (-1, 1))), a.shape[:-1])
        raise ShapeError("matmul", a.shape, b.shape, detail="need rank >= 1 with one operand rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dims") from None

    if b.ndim == 2 and a.ndim > 2:
        # shared weight: fold the batch dims into one GEMM each way
        a2 = a.data.reshape(-1, a.shape[-1])

        def fn2(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make((a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],)), (a, b), fn2, "matmul")

    def fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), fn, "matmul")


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(np.asarray(out), (a,), fn, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, detail=f"bad axes {axes}")
    inv = np.argsort([ax % a.ndim for ax in axes])
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def _is_basic_index(idx) -> bool:
    if not isinstance(idx, tuple):
        idx = (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in idx)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def fn(g):
        z = np.zeros_like(a.data)
        if basic:
            z[idx] += g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return _make(out.copy() if basic else out, (a,), fn, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            s1 != s2 for i, (s1, s2) in enumerate(zip(t.shape, ref.shape)) if i != axis
        ):
            raise ShapeError("concat", *(t.shape for t in tensors), detail=f"axis={axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, fn, "concat")


def embedding(table: Tensor, idx) -> Tensor:
    """Row lookup ``table[idx]`` for an integer index array of any shape."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding: index out of range for table of {table.shape[0]} rows")

    def fn(g):
        z = np.zeros_like(table.data)
        np.add.at(z, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (z,)

    return _make(table.data[idx], (table,), fn, "embedding")


def take_along_last(a: Tensor, idx) -> Tensor:
    """``out[..., ] = a[..., idx[...]]``; ``idx`` has ``a.shape[:-1]``."""
    idx = np.asarray(idx)
    if idx.shape != a.shape[:-1]:
        raise ShapeError("take_along_last", a.shape, idx.shape)
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def fn(g):
        z = np.zeros_like(a.data)
        np.put_along_axis(z, idx[..., None], g[..., None], axis=-1)
        return (z,)

    return _make(out, (a,), fn, "take_along_last")


# ---------------------------------------------------------------------------
# fused nn primitives
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), fn, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse

    def fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), fn, "log_softmax")


LAYER_NORM_EPS = 1e-5


def layer_norm(a: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis (no affine terms)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def fn(g):
        gsum = g.sum(axis=-1, keepdims=True)
        gx = (g * xhat).sum(axis=-1, keepdims=True)
        return (inv * (g - gsum / n - xhat * gx / n),)

    return _make(xhat, (a,), fn, "layer_norm")


def _rotate_half(x: np.ndarray) -> np.ndarray:
    h = x.shape[-1] // 2
    return np.concatenate([-x[..., h:], x[..., :h]], axis=-1)


def _rotate_half_t(y: np.ndarray) -> np.ndarray:
    h = y.shape[-1] // 2
    return np.concatenate([y[..., h:], -y[..., :h]], axis=-1)


def rotary(a: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary position rotation of the last axis; ``cos``/``sin`` broadcast over ``a``."""
    if a.shape[-1] % 2:
        raise ShapeError("rotary", a.shape, detail="last dim must be even")
    cos = np.asarray(cos, dtype=a.dtype)
    sin = np.asarray(sin, dtype=a.dtype)
    out = a.data * cos + _rotate_half(a.data) * sin

    def fn(g):
        return (g * cos + _rotate_half_t(g * sin),)

    return _make(out, (a,), fn, "rotary")


def straight_through(a: Tensor, forward: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    """Apply ``forward`` to the values but pass gradients through unchanged."""
    out = np.asarray(forward(a.data), dtype=a.dtype)
    if out.shape != a.shape:
        raise ShapeError("straight_through", a.shape, out.shape)
    return _make(out, (a,), lambda g: (g,), "straight_through")


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if not loss.requires_grad:
        raise GradientError("backward called on a tensor with no computation record")
    if grad is None:
        if loss.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def leaves(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad and t._backward is None]
