"""
Finite scalar quantization
==========================

Each latent channel is squashed with tanh and rounded to a small set of
integer levels. The product of the levels gives the codebook size, with no
learned codebook at all.
"""

import numpy as np

from flowtok.numerics import Rng, Tensor
from flowtok.tokenizer import FSQ

fsq = FSQ([8, 5, 5, 5])
print("codebook size:", fsq.codebook_size)

# random latents land on the grid
z = Rng(0).normal((6, 4)) * 2
q = fsq.quantize(Tensor(z)).data
codes = fsq.codes_from_grid(q)
print(np.c_[q, codes])

# codes map back to the same grid points
assert np.array_equal(fsq.grid_from_codes(codes), q)

# an even level count gives one more negative level than positive
print("channel 0 levels:", np.unique(fsq.grid_from_codes(np.arange(1000))[:, 0]))
