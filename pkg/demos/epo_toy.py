"""Preference training on a toy LM: the reward margin grows step by step.

Usage: python demos/epo_toy.py
"""

import numpy as np

from epochat.epo import EpoConfig, epo_step, margin_stats
from epochat.lm import DialogueLM, LmConfig, MixedInput
from epochat.tensor import Adam

rng = np.random.default_rng(0)
lm = DialogueLM(LmConfig(30, d_model=32, n_layers=1, n_heads=2, d_ff=64, max_seq_len=32, seed=0))
prompts = [MixedInput([("tokens", rng.integers(1, 30, size=4).tolist())]) for _ in range(16)]
chosen = [rng.integers(1, 15, size=3).tolist() for _ in prompts]      # "appropriate" replies
rejected = [rng.integers(15, 30, size=3).tolist() for _ in prompts]   # "counter-emotional" replies

cfg = EpoConfig(lr=3e-3)
opt = Adam(lm, lr=cfg.lr)
print("step  margin  above_gamma  ar_loss")
for step in range(41):
    if step % 10 == 0:
        s = margin_stats(lm, prompts, chosen, rejected, cfg)
        print(f"{step:4d}  {s['margin']:6.3f}  {s['frac_above_gamma']:11.2f}  {s['ar_loss']:7.3f}")
    epo_step(lm, opt, prompts, chosen, rejected, cfg)
