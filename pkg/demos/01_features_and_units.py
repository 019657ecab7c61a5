"""Toy speech -> log-mel frames -> k-means units, and back to audio with Griffin-Lim.

Run: python3 demos/01_features_and_units.py
"""
# %%
import numpy as np

from covomix import dsp
from covomix.synthetic import make_recording
from covomix.tokenizer import fit_codebook, speech_to_semantic

rec = make_recording(n_episodes=3, seed=0)
print("speakers", rec.speakers, "seconds", len(rec.channels[0]) / rec.sample_rate)
for u in rec.utterances[:4]:
    print(f"  {u.speaker} [{u.start_s:5.2f}, {u.end_s:5.2f}] {u.text!r} laughter={u.laughter_spans}")

# %% 8 kHz, 50 ms window, 20 ms hop, 80 mel bins
waves = [dsp.Waveform(ch) for ch in rec.channels]
mels = [dsp.mel_spectrogram(w) for w in waves]
mix = dsp.mel_spectrogram(dsp.mix_waveforms(*waves))
print("mel frames", mels[0].n_frames, "bins", mels[0].n_mels, "floor", dsp.DEFAULT_MEL.log_floor)

# %% a small codebook over both channels; the silence row gets its own unit
floor_row = np.full(80, dsp.DEFAULT_MEL.log_floor)
cb = fit_codebook([m.values for m in mels], K=16, seed=0, silence_frame=floor_row)
streams = [speech_to_semantic(m, cb, c) for c, m in enumerate(mels)]
print("silence unit", cb.silence_id)
for s in streams:
    print(f"  ch{s.channel}:", "".join("." if i == cb.silence_id else chr(ord("a") + i) for i in s.ids[:70]))

# %% phase reconstruction of the mixed channel
wave = dsp.griffin_lim(mix, iterations=30, seed=0)
back = dsp.mel_spectrogram(wave)
r = np.corrcoef(mix.values.ravel(), back.values.ravel())[0, 1]
print(f"Griffin-Lim: {len(wave.samples)} samples, log-mel correlation {r:.3f}")
