"""Integrators for the learned velocity field.

A *field* is any callable ``field(x, t, conditional=True)`` returning an
array shaped like ``x``.  Fields that also accept ``self_cond=`` advertise
it with a truthy ``uses_self_cond`` attribute.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable

import numpy as np

from .geometry import center_ca
from .numerics import Rng

__all__ = [
    "SamplerConfig",
    "SAMPLER_PRESETS",
    "SamplingError",
    "noise_like",
    "guided_field",
    "score_from_field",
    "g_of_t",
    "euler_sample",
    "sde_sample",
    "sample",
]

SCORE_CUTOFF = 0.995  # score and noise terms are switched off beyond this t
GT_MODES = ("constant", "linear")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 100
    guidance: float = 0.0
    eta: float = 0.0
    gamma: float = 0.0
    gt_mode: str = "constant"
    seed: int = 0
    self_condition: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.gt_mode not in GT_MODES:
            raise ValueError(f"gt_mode must be one of {GT_MODES}")

    @property
    def stochastic(self) -> bool:
        return self.eta != 0.0 or self.gamma != 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def replace(self, **kw) -> "SamplerConfig":
        return replace(self, **kw)


SAMPLER_PRESETS = {
    "euler": SamplerConfig(),
    "starred": SamplerConfig(guidance=2.0, eta=0.45, gamma=1.0),
}


class SamplingError(FloatingPointError):
    def __init__(self, step: int, message: str = "non-finite sampler state"):
        self.step = step
        super().__init__(f"{message} at step {step}")


def noise_like(shape, rng: Rng) -> np.ndarray:
    """Standard normal noise projected onto the zero Cα-centroid subspace."""
    return center_ca(rng.normal(tuple(shape)))


def _eval(field: Callable, x, t, conditional: bool, self_cond):
    if self_cond is not None and getattr(field, "uses_self_cond", False):
        return field(x, t, conditional, self_cond=self_cond)
    return field(x, t, conditional)


def guided_field(field: Callable, x: np.ndarray, t: float, guidance: float, self_cond=None) -> np.ndarray:
    """Conditional field pushed away from the unconditional one by ``guidance``."""
    v_c = _eval(field, x, t, True, self_cond)
    if guidance == 0.0:
        return v_c
    v_u = _eval(field, x, t, False, self_cond)
    return v_c + guidance * (v_c - v_u)


def score_from_field(x: np.ndarray, t: float, v: np.ndarray) -> np.ndarray:
    """Score of the linear-path marginal implied by velocity ``v``."""
    if t >= 1.0 - 1e-6:
        raise ValueError(f"score is singular at t={t}")
    return (t * v - x) / (1.0 - t)


def g_of_t(t: float, mode: str = "constant") -> float:
    if mode == "constant":
        return 1.0
    if mode == "linear":
        return 1.0 - t
    raise ValueError(f"unknown gt_mode {mode!r}")


def _check(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise SamplingError(step)


def euler_sample(field: Callable, x0: np.ndarray, cfg: SamplerConfig, trajectory: list | None = None) -> np.ndarray:
    """Integrate from t=0 to t=1 in ``cfg.steps`` uniform Euler steps."""
    n = cfg.steps
    dt = 1.0 / n
    x = np.array(x0, dtype=np.float64)
    sc = None
    for i in range(n):
        t = i / n
        v = guided_field(field, x, t, cfg.guidance, sc)
        x = x + v * dt
        _check(x, i)
        if cfg.self_condition:
            sc = x + (1.0 - (t + dt)) * v
        if trajectory is not None:
            trajectory.append(x)
    return x


def sde_sample(field: Callable, x0: np.ndarray, cfg: SamplerConfig, rng: Rng, trajectory: list | None = None) -> np.ndarray:
    """Euler–Maruyama with extra score drift (``eta``) and Langevin noise (``gamma``)."""
    n = cfg.steps
    dt = 1.0 / n
    x = np.array(x0, dtype=np.float64)
    sc = None
    for i in range(n):
        t = i / n
        v = guided_field(field, x, t, cfg.guidance, sc)
        drift = v
        active = t <= SCORE_CUTOFF
        if active and cfg.eta != 0.0:
            drift = v + g_of_t(t, cfg.gt_mode) * cfg.eta * score_from_field(x, t, v)
        x = x + drift * dt
        if active and cfg.gamma > 0.0:
            x = x + np.sqrt(2.0 * g_of_t(t, cfg.gt_mode) * cfg.gamma * dt) * noise_like(x.shape, rng)
        _check(x, i)
        if cfg.self_condition:
            sc = x + (1.0 - (t + dt)) * v
        if trajectory is not None:
            trajectory.append(x)
    return x


def sample(field: Callable, shape, cfg: SamplerConfig, rng: Rng | None = None, trajectory: list | None = None) -> np.ndarray:
    """Draw centered noise from ``cfg.seed`` (or ``rng``) and integrate."""
    rng = Rng(cfg.seed) if rng is None else rng
    x0 = noise_like(shape, rng)
    if cfg.stochastic:
        return sde_sample(field, x0, cfg, rng, trajectory)
    return euler_sample(field, x0, cfg, trajectory)
