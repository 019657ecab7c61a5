"""Flow matching on mels: the path, guidance, the ODE, and a short training run.

Run: python3 demos/03_flow_matching.py   (a couple of minutes on one core)
"""
# %%
import math

import numpy as np
import torch

from covomix import pipeline
from covomix.acoustic import (draw_cfm_sample, cfm_loss, guided_field, integrate_flow, ode_sample,
                              sample_flow_point, zero_field_loss)
from covomix.metrics import mcd_dtw
from covomix.dsp import MelSpectrogram

# %% the interpolation path runs from noise (t=0) to data (t=1)
m, m0 = np.array([2.0]), np.array([-1.0])
for t in (0.0, 0.5, 1.0):
    print(f"t={t}: w={sample_flow_point(m, m0, t)[0]:+.5f}")
print("guided 2 vs 1 at alpha 0.7 ->", guided_field(torch.tensor(2.0), torch.tensor(1.0), 0.7).item())

# %% Euler on dx/dt = x converges to e at first order
for n in (8, 32, 128):
    x = integrate_flow(lambda x, t: x, torch.tensor([1.0]), n).item()
    print(f"{n:4d} steps: {x:.5f} (error {abs(x - math.e):.5f})")

# %% a tiny mixed-channel model on the toy corpus
torch.manual_seed(0)
corpus = pipeline.toy_corpus(4, seed=0, K=32)
examples = pipeline.acoustic_examples(corpus, "mix")
cfg = pipeline.acoustic_config_for(corpus, variant="mix", dim=64, layers=2, n_heads=4, emb_dim=16)
model = pipeline.AcousticModel(cfg)
draw = draw_cfm_sample(model, examples, np.random.default_rng(1))
print("v=0 baseline loss", round(zero_field_loss(draw).item(), 3))
losses, _ = pipeline.train_acoustic(model, examples, 1500, rng=np.random.default_rng(0),
                                    lr_at=pipeline.cosine_lr(1e-3, 1500, warmup=50))
print("loss after 1500 steps", round(float(np.mean(losses[-20:])), 3),
      "on the fixed draw", round(cfm_loss(model, draw).item(), 3))

# %% continue a dialogue from a 15% prompt with guided sampling
# a run this short is far from converged, so expect a large distance here
d = corpus.dialogues[0]
mask = np.zeros(d.n_frames, bool)
mask[int(0.15 * d.n_frames):] = True
out = ode_sample(model, d.tokens, d.mel_channels, mask, steps=32, alpha=0.7, seed=0, out_ctx=d.mel_mix[None])[0]
print("MCD-DTW on the generated region:",
      round(mcd_dtw(MelSpectrogram(d.mel_mix[mask]), MelSpectrogram(out.values[mask])), 2), "dB")
