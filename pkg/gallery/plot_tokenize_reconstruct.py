"""
Tokenize and reconstruct a small backbone
=========================================

Trains the tiny tokenizer for 1500 steps, at a higher learning rate than
the reference one, on three synthetic chains. Each chain becomes one code
per residue and the coordinates are sampled back, landing around 2 A RMSD.
"""

import numpy as np

from flowtok.flowtrain import TRAIN_PRESETS, Trainer
from flowtok.geometry import rmsd
from flowtok.numerics import Rng
from flowtok.sampler import SamplerConfig
from flowtok.synth import synthetic_dataset
from flowtok.tokenizer import Tokenizer, preset, reconstruct

chains = synthetic_dataset(3, seed=0, min_len=12, max_len=16)
model = Tokenizer(preset("tiny"))
trainer = Trainer(model, [c.coords for c in chains], TRAIN_PRESETS["small"].replace(lr=2e-3, min_lr=2e-4, warmup=50))

for _ in range(6):
    recs = trainer.run(250)
    print(f"step {trainer.step}: loss {np.mean([r['loss'] for r in recs]):.3f}")

for i, chain in enumerate(chains):
    codes = model.tokenize(chain.coords)
    back = reconstruct(model, chain, SamplerConfig(steps=50), rng=Rng(i))
    print(chain.id, "codes", codes[:8], "...", f"RMSD {rmsd(back.coords, chain.coords):.2f} A")
