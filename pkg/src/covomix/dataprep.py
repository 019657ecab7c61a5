"""Dialogue segmentation, transcript serialization and monologue slicing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .tokenizer import LAUGHTER, SPKCHANGE


@dataclass(frozen=True)
class Utterance:
    speaker: str
    start_s: float
    end_s: float
    text: str = ""
    laughter_spans: tuple = ()

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise DataError(f"utterance must have start < end, got [{self.start_s}, {self.end_s}]")
        spans = tuple(tuple(float(x) for x in s) for s in self.laughter_spans)
        for s, e in spans:
            if not (self.start_s <= s < e <= self.end_s):
                raise DataError(f"laughter span [{s}, {e}] outside utterance [{self.start_s}, {self.end_s}]")
        object.__setattr__(self, "laughter_spans", spans)

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def to_json(self) -> dict:
        return {"speaker": self.speaker, "start": self.start_s, "end": self.end_s,
                "text": self.text, "laughter": [list(s) for s in self.laughter_spans]}

    @classmethod
    def from_json(cls, d: dict) -> "Utterance":
        return cls(str(d["speaker"]), float(d["start"]), float(d["end"]),
                   d.get("text", ""), tuple(tuple(s) for s in d.get("laughter", [])))


def sort_key(u: Utterance):
    # equal starts break by speaker id, then end time
    return (u.start_s, u.speaker, u.end_s)


def chronological(utterances) -> list[Utterance]:
    return sorted(utterances, key=sort_key)


@dataclass
class DialogueSample:
    utterances: list[Utterance]
    serialized_text: str = ""
    channels: tuple = ()
    speakers: tuple = ()
    # source utterance for each entry of `utterances` (differs after retiming)
    origins: list | None = None

    def __post_init__(self):
        if self.origins is not None:
            order = sorted(range(len(self.utterances)), key=lambda i: sort_key(self.utterances[i]))
            self.utterances = [self.utterances[i] for i in order]
            self.origins = [self.origins[i] for i in order]
        else:
            self.utterances = chronological(self.utterances)
            self.origins = list(self.utterances)
        if not self.speakers:
            self.speakers = tuple(dict.fromkeys(u.speaker for u in self.utterances))
        if not self.serialized_text:
            self.serialized_text = serialize_transcript(self)

    @property
    def start_s(self) -> float:
        return self.utterances[0].start_s

    @property
    def end_s(self) -> float:
        return max(u.end_s for u in self.utterances)

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class MonologueSample:
    speaker: str
    utterances: list[Utterance] = field(default_factory=list)
    text: str = ""

    @property
    def duration_s(self) -> float:
        return sum(u.duration_s for u in self.utterances)


def read_utterances_jsonl(lines) -> list[Utterance]:
    """Parse JSON-lines transcripts; errors name the offending line."""
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(Utterance.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"line {lineno}: {exc}") from exc
    return out


def _cache_end(cache) -> float:
    return max(u.end_s for u in cache)


def prepare_dialogues(utterances, max_duration: float = 40.0) -> list[DialogueSample]:
    """Cut a long two-channel conversation into dialogue samples.

    Walks the utterances by start time with a cache.  The cache is emitted
    when the next utterance starts after everything cached has ended and
    the cache holds more than one speaker; a cache spanning more than
    max_duration is discarded instead.  The utterance that triggers either
    outcome in the flush branch seeds the next cache.
    """
    if max_duration <= 0:
        raise ValueError("max_duration must be positive")
    out = []
    cache: list[Utterance] = []
    speakers: set = set()
    for u in chronological(utterances):
        if not cache:
            cache.append(u)
            speakers.add(u.speaker)
        elif u.start_s > _cache_end(cache) and len(speakers) > 1:
            if _cache_end(cache) - cache[0].start_s <= max_duration:
                out.append(DialogueSample(list(cache)))
            cache, speakers = [u], {u.speaker}
        elif _cache_end(cache) - cache[0].start_s > max_duration:
            cache, speakers = [], set()
        else:
            cache.append(u)
            speakers.add(u.speaker)
    return out


def _laughter_words(u: Utterance) -> list[str]:
    words = u.text.split()
    if not u.laughter_spans:
        return words
    # tag goes at the word index proportional to the span's offset
    inserts = sorted(
        min(len(words), int(np.floor(len(words) * (s - u.start_s) / u.duration_s)))
        for s, _ in u.laughter_spans
    )
    out = []
    for i in range(len(words) + 1):
        out.extend(LAUGHTER for pos in inserts if pos == i)
        if i < len(words):
            out.append(words[i])
    return out


def serialize_transcript(sample) -> str:
    """Chronological transcript; speaker changes become [spkchange]."""
    utts = sample.utterances if hasattr(sample, "utterances") else sample
    words = []
    prev = None
    for u in chronological(utts):
        if prev is not None and u.speaker != prev:
            words.append(SPKCHANGE)
        words.extend(_laughter_words(u))
        prev = u.speaker
    return " ".join(words)


def count_speaker_changes(utterances) -> int:
    spk = [u.speaker for u in chronological(utterances)]
    return sum(a != b for a, b in zip(spk, spk[1:]))


def slice_monologues(utterances, min_duration: float = 10.0) -> list[MonologueSample]:
    """Greedily join consecutive same-speaker utterances until min_duration.

    Utterances are grouped per speaker in chronological order; an
    unfinished group is dropped when the speaker's utterances run out.
    """
    if min_duration <= 0:
        raise ValueError("min_duration must be positive")
    per_speaker: dict[str, list[Utterance]] = {}
    for u in chronological(utterances):
        per_speaker.setdefault(u.speaker, []).append(u)
    out = []
    for spk, utts in per_speaker.items():
        group: list[Utterance] = []
        for u in utts:
            group.append(u)
            if sum(g.duration_s for g in group) >= min_duration:
                out.append(MonologueSample(spk, group, serialize_transcript(group)))
                group = []
    return out


def simulate_dialogues(monologues, seed: int = 0, gap_range=(0.1, 0.4),
                       turns: int = 2) -> list[DialogueSample]:
    """Concatenate monologues from alternating speakers into dialogues.

    Monologues are consumed in order, alternating between the two speakers
    with the most material; each dialogue takes `turns` of them, retimed
    back-to-back with gaps drawn uniformly from gap_range.
    """
    by_spk: dict[str, list] = {}
    for m in monologues:
        by_spk.setdefault(m.speaker, []).append(m)
    if len(by_spk) < 2:
        raise ValueError("simulating dialogues needs monologues from at least two speakers")
    rng = np.random.default_rng(seed)
    a, b = sorted(by_spk, key=lambda s: (-len(by_spk[s]), s))[:2]
    queues = {a: list(by_spk[a]), b: list(by_spk[b])}
    out = []
    while True:
        picks = []
        for i in range(turns):
            spk = (a, b)[i % 2]
            if not queues[spk]:
                break
            picks.append(queues[spk].pop(0))
        if len(picks) < turns:
            break
        t = 0.0
        utts, origins = [], []
        for m in picks:
            for u in m.utterances:
                shift = t - u.start_s
                utts.append(Utterance(m.speaker, t, t + u.duration_s, u.text,
                                      tuple((s + shift, e + shift) for s, e in u.laughter_spans)))
                origins.append(u)
                t += u.duration_s
            t += float(rng.uniform(*gap_range))
        out.append(DialogueSample(utts, speakers=(a, b), origins=origins))
    return out


def assemble_channels(sample: DialogueSample, fetch, sample_rate: int = 8000, pad_s: float = 0.0):
    """Place each utterance's source audio on its speaker's channel.

    fetch(origin_utterance) returns the samples of that source span.  The
    result has one sample array per speaker in `sample.speakers` order,
    covering [start - pad_s, end + pad_s].
    """
    t0 = sample.start_s - pad_s
    n = int(round((sample.duration_s + 2 * pad_s) * sample_rate))
    chans = {spk: np.zeros(n) for spk in sample.speakers}
    for u, src in zip(sample.utterances, sample.origins):
        audio = np.asarray(fetch(src), dtype=np.float64)
        s = int(round((u.start_s - t0) * sample_rate))
        seg = audio[:max(0, n - s)]
        chans[u.speaker][s:s + len(seg)] += seg
    return [chans[spk] for spk in sample.speakers]
