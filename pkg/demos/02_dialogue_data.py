"""Cutting a long two-channel conversation into training dialogues.

Run: python3 demos/02_dialogue_data.py
"""
# %%
from covomix.dataprep import (Utterance, prepare_dialogues, serialize_transcript, simulate_dialogues,
                              slice_monologues)
from covomix.synthetic import make_recording

# %% the three hand-traced cases of the cache walk
cases = {
    "flush": [Utterance("A", 0, 2, "how are you"), Utterance("B", 1.5, 3, "i'm good"), Utterance("A", 5, 6, "ok")],
    "one speaker": [Utterance("A", 0, 1), Utterance("A", 2, 3), Utterance("A", 4, 5)],
    "too long": [Utterance("A", 0, 30), Utterance("B", 29, 45), Utterance("A", 50, 51)],
}
for name, utts in cases.items():
    out = prepare_dialogues(utts, max_duration=40)
    print(f"{name:12s} -> {[d.serialized_text for d in out]}")

# %% a toy recording: overlapping turns, laughter, episodes separated by pauses
rec = make_recording(n_episodes=5, seed=4)
dialogues = prepare_dialogues(rec.utterances)
for d in dialogues:
    print(f"[{d.start_s:6.2f}, {d.end_s:6.2f}] {d.serialized_text}")

# %% monologues: same-speaker utterances joined until a minimum duration
for m in slice_monologues(rec.utterances, min_duration=1.0)[:4]:
    print(f"{m.speaker} {m.duration_s:4.2f}s {m.text}")

# %% simulated dialogues: alternate monologues with short random gaps
sim = simulate_dialogues(slice_monologues(rec.utterances, 1.0), seed=0)
print(len(sim), "simulated;", sim[0].serialized_text)
print("transcript of the full recording:", serialize_transcript(rec.utterances)[:120], "...")
