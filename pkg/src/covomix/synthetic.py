"""Deterministic toy speech for desk-scale corpora.

Each word is a steady harmonic complex shaped by two formants derived
from the word's spelling; each speaker has its own pitch and spectral
tilt.  Laughter is a train of short "ha" pulses.  Nothing
here is random at render time, so the same transcript always yields the
same samples and mel frames.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .dataprep import Utterance

LEXICON = (
    "hello", "yeah", "okay", "right", "so", "well", "really", "sure",
    "good", "fine", "thanks", "no", "maybe", "great", "wow", "cool",
)


@dataclass(frozen=True)
class ToySpeaker:
    name: str
    f0: float
    tilt: float  # dB per kHz
    gain: float = 0.25


SPEAKERS = (
    ToySpeaker("A", 110.0, -6.0),
    ToySpeaker("B", 190.0, -2.0),
    ToySpeaker("C", 140.0, -9.0),
    ToySpeaker("D", 240.0, -4.0),
)

WORD_S = 0.2
LAUGH_PULSE_S = 0.08
LAUGH_GAP_S = 0.04
LAUGH_PULSES = 3
RAMP_S = 0.01


def word_formants(word: str) -> tuple[float, float]:
    h = zlib.crc32(word.encode("utf-8"))
    f1 = 300.0 + (h % 9) * 70.0
    f2 = 1000.0 + ((h >> 8) % 13) * 180.0
    return f1, f2


def laugh_duration() -> float:
    return LAUGH_PULSES * LAUGH_PULSE_S + (LAUGH_PULSES - 1) * LAUGH_GAP_S


def _envelope(n: int, sr: int) -> np.ndarray:
    ramp = min(int(RAMP_S * sr), n // 2)
    env = np.ones(n)
    if ramp:
        env[:ramp] = np.linspace(0.0, 1.0, ramp, endpoint=False)
        env[n - ramp:] = np.linspace(1.0, 0.0, ramp, endpoint=False)
    return env


def _harmonic_tone(f0, formants, tilt, duration, sr, bandwidth=160.0):
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    out = np.zeros(n)
    for h in range(1, int((sr / 2 - 100) // f0) + 1):
        f = h * f0
        amp = 0.05 + sum(np.exp(-0.5 * ((f - fc) / bandwidth) ** 2) for fc in formants)
        amp *= 10 ** (tilt * f / 1000.0 / 20.0)
        out += amp * np.sin(2 * np.pi * f * t + 0.3 * h)
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def render_word(word: str, spk: ToySpeaker, sr: int = 8000) -> np.ndarray:
    tone = _harmonic_tone(spk.f0, word_formants(word), spk.tilt, WORD_S, sr)
    return spk.gain * tone * _envelope(len(tone), sr)


def render_laugh(spk: ToySpeaker, sr: int = 8000) -> np.ndarray:
    pulse = _harmonic_tone(spk.f0 * 1.3, (800.0, 1400.0), spk.tilt, LAUGH_PULSE_S, sr)
    pulse = spk.gain * pulse * _envelope(len(pulse), sr)
    gap = np.zeros(int(round(LAUGH_GAP_S * sr)))
    parts = []
    for i in range(LAUGH_PULSES):
        parts.append(pulse)
        if i < LAUGH_PULSES - 1:
            parts.append(gap)
    return np.concatenate(parts)


def utterance_items(words: list[str], laugh_at: int | None):
    """Sequence of ("word", w) / ("laugh", None) items."""
    items = [("word", w) for w in words]
    if laugh_at is not None:
        items.insert(laugh_at, ("laugh", None))
    return items


def items_duration(items) -> float:
    return sum(WORD_S if kind == "word" else laugh_duration() for kind, _ in items)


def render_items(items, spk: ToySpeaker, sr: int = 8000) -> np.ndarray:
    parts = [render_word(w, spk, sr) if kind == "word" else render_laugh(spk, sr) for kind, w in items]
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class ToyRecording:
    """A long two-channel conversation plus its utterance annotations."""

    utterances: list[Utterance]
    channels: list[np.ndarray]
    speakers: tuple
    sample_rate: int = 8000


def make_recording(n_episodes: int = 9, seed: int = 0, speakers=("A", "B"), turns=(2, 3),
                   words_per_turn=(1, 3), overlap=(0.0, 0.1), episode_gap=1.2,
                   laugh_prob: float = 0.25, lead_s: float = 0.2, sr: int = 8000) -> ToyRecording:
    """Conversation built from episodes of overlapping or abutting turns.

    Within an episode every turn starts at or before the previous turn's
    end; episodes are separated by `episode_gap` seconds of silence.
    """
    rng = np.random.default_rng(seed)
    spk_map = {s.name: s for s in SPEAKERS}
    voices = [spk_map[s] for s in speakers]
    plan = []  # (speaker index, start, items)
    t = lead_s
    for _ in range(n_episodes):
        n_turns = int(rng.integers(turns[0], turns[1] + 1))
        who = int(rng.integers(2))
        prev_end = None
        for _ in range(n_turns):
            n_words = int(rng.integers(words_per_turn[0], words_per_turn[1] + 1))
            words = [LEXICON[i] for i in rng.integers(len(LEXICON), size=n_words)]
            laugh_at = int(rng.integers(n_words + 1)) if rng.random() < laugh_prob else None
            items = utterance_items(words, laugh_at)
            start = t if prev_end is None else prev_end - float(rng.uniform(*overlap))
            start = round(start, 2)
            plan.append((who, start, items))
            prev_end = start + items_duration(items)
            who = 1 - who
        t = round(prev_end + episode_gap, 2)
    total = int(round((t + lead_s) * sr))
    channels = [np.zeros(total) for _ in voices]
    utts = []
    for who, start, items in plan:
        audio = render_items(items, voices[who], sr)
        s = int(round(start * sr))
        channels[who][s:s + len(audio)] += audio
        laughs = []
        pos = start
        for kind, _ in items:
            d = WORD_S if kind == "word" else laugh_duration()
            if kind == "laugh":
                laughs.append((round(pos, 6), round(pos + d, 6)))
            pos += d
        text = " ".join(w for kind, w in items if kind == "word")
        utts.append(Utterance(speakers[who], start, round(start + items_duration(items), 6), text, tuple(laughs)))
    return ToyRecording(utts, channels, tuple(speakers), sr)


def slice_channels(rec: ToyRecording, start_s: float, end_s: float) -> list[np.ndarray]:
    a = max(0, int(round(start_s * rec.sample_rate)))
    b = int(round(end_s * rec.sample_rate))
    out = []
    for ch in rec.channels:
        seg = np.zeros(b - a)
        piece = ch[a:b]
        seg[:len(piece)] = piece
        out.append(seg)
    return out


def write_recording(folder, stem: str, rec: ToyRecording) -> None:
    """<stem>.jsonl transcript plus <stem>.wav with one channel per speaker (sorted by label)."""
    import json
    from pathlib import Path

    from .dsp import Waveform, write_wav

    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(u.to_json(), sort_keys=True) for u in rec.utterances]
    (folder / f"{stem}.jsonl").write_text("\n".join(lines) + "\n")
    order = sorted(range(len(rec.speakers)), key=lambda i: rec.speakers[i])
    write_wav(folder / f"{stem}.wav", [Waveform(rec.channels[i], rec.sample_rate) for i in order])
