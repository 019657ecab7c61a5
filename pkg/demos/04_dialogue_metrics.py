"""Turn-taking events, laughter, speaker consistency and MCD-DTW.

Run: python3 demos/04_dialogue_metrics.py
"""
# %%
import numpy as np

from covomix.dsp import MelSpectrogram
from covomix.metrics import (SpeakerSegments, consistency_matrix, extract_turn_events, laughter_stats,
                             mcd_dtw, turn_stats)
from covomix.synthetic import make_recording

# %% events of one recording
rec = make_recording(n_episodes=6, seed=2)
ev = extract_turn_events(SpeakerSegments.from_utterances(rec.utterances))
for kind in ("overlap", "intra_pause", "inter_silence", "active"):
    d = ev.durations(kind)
    print(f"{kind:14s} n={len(d):3d} total={d.sum():6.2f}s")

# %% pooled distribution over several recordings
events = [extract_turn_events(SpeakerSegments.from_utterances(make_recording(4, seed=s).utterances))
          for s in range(5)]
st = turn_stats(events, edges=np.linspace(0, 1.5, 7))
print("inter-speaker silence histogram", st["inter_silence"].hist, "median", round(st["inter_silence"].median, 3))
laughs = laughter_stats([[s for u in make_recording(4, seed=s).utterances for s in u.laughter_spans]
                         for s in range(5)])
print(f"laughter: {laughs.count} events, mean {laughs.mean_duration:.2f}s")

# %% consistency of segment embeddings (any vectors will do)
rng = np.random.default_rng(0)
voice = rng.standard_normal(16)
segments = [voice + 0.3 * rng.standard_normal(16) for _ in range(3)] + [rng.standard_normal(16)]
print(np.round(consistency_matrix(segments), 2))

# %% MCD-DTW absorbs time warps but not spectral change
a = MelSpectrogram(rng.standard_normal((30, 80)))
slow = MelSpectrogram(np.repeat(a.values, 2, axis=0))
print("warped copy", mcd_dtw(a, slow), "dB; perturbed",
      round(mcd_dtw(a, MelSpectrogram(a.values + 0.1 * rng.standard_normal((30, 80)))), 3), "dB")
