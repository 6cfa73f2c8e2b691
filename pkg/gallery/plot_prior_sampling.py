"""
Sampling codes from the autoregressive prior
============================================

A causal transformer over code sequences, framed by BOS and EOS. After
memorizing a handful of sequences, greedy decoding returns one of them
and nucleus sampling mostly does too.
"""

import numpy as np

from flowtok.numerics import Rng
from flowtok.prior import Prior, PriorConfig, PriorTrainConfig, best_of_n, generate, greedy, sequence_log_likelihood, train_prior

cfg = PriorConfig(codebook_size=16, layers=2, width=32, heads=4, max_len=16, top_p=0.9, best_of=4)
prior = Prior(cfg, dtype=np.float64)
seqs = [[1, 2, 3, 4, 5], [9, 9, 8, 7], [0, 15, 0, 15, 0, 15]]

history = train_prior(prior, seqs, PriorTrainConfig(lr=3e-3, warmup=10, batch_size=3), steps=200)
print(f"final loss {history[-1]['loss']:.4f}")

print("greedy:", greedy(prior, cfg).codes.tolist())
rng = Rng(0)
for i in range(3):
    g = generate(prior, cfg, rng.spawn(i))
    print("nucleus:", g.codes.tolist(), f"log p = {g.log_likelihood:.3f}")

best = best_of_n(prior, cfg, Rng(1))
assert abs(sequence_log_likelihood(prior, best.codes) - best.log_likelihood) < 1e-6
print("best of 4:", best.codes.tolist())
