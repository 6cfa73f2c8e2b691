"""Minimal dense-tensor kernel: autodiff, seeded randomness, AdamW, checkpoints."""

from . import tensor as ops
from .params import (
    CHECKPOINT_VERSION,
    NonFiniteGradientError,
    ParameterStore,
    adamw_step,
    global_grad_norm,
    load_checkpoint,
    save_checkpoint,
)
from .rng import Rng
from .tensor import (
    GradientError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    get_default_dtype,
    no_grad,
    precision,
    set_default_dtype,
)

__all__ = [
    "ops",
    "Tensor",
    "as_tensor",
    "backward",
    "no_grad",
    "precision",
    "get_default_dtype",
    "set_default_dtype",
    "ShapeError",
    "GradientError",
    "NonFiniteGradientError",
    "ParameterStore",
    "adamw_step",
    "global_grad_norm",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
    "Rng",
]
