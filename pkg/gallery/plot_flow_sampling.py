"""
Euler and stochastic sampling on a known field
==============================================

For a single data point x1 the optimal linear-path field is
(x1 - x) / (1 - t). Integrating it from noise lands on x1, and the
stochastic sampler with its noise switched off retraces the Euler path.
"""

import numpy as np

from flowtok.numerics import Rng
from flowtok.sampler import SamplerConfig, euler_sample, noise_like, sde_sample

target = np.zeros((1, 12, 1, 3))
target[0, :, 0, 0] = np.linspace(-1, 1, 12)
target -= target.mean(axis=1, keepdims=True)


def field(x, t, conditional=True):
    return (target - x) / (1 - t)


x0 = noise_like(target.shape, Rng(1))
for steps in (1, 4, 32):
    out = euler_sample(field, x0, SamplerConfig(steps=steps))
    print(f"{steps:3d} steps: max error {np.abs(out - target).max():.2e}")

cfg = SamplerConfig(steps=32)
same = np.array_equal(sde_sample(field, x0, cfg, Rng(2)), euler_sample(field, x0, cfg))
print("SDE with eta=gamma=0 matches Euler:", same)

