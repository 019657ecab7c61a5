"""Dialogue evaluation: turn-taking events, laughter, speaker consistency, MCD-DTW."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dsp import MelSpectrogram, mel_cepstra
from .errors import DimensionError

MCD_CONST = 10.0 * math.sqrt(2.0) / math.log(10.0)

KINDS = ("intra_pause", "inter_silence", "overlap", "active")


def merge_intervals(intervals) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for s, e in sorted(intervals):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


@dataclass
class SpeakerSegments:
    segments: dict  # speaker -> list of (start_s, end_s)

    def __post_init__(self):
        clean = {}
        for spk, ivs in self.segments.items():
            ivs = sorted((float(s), float(e)) for s, e in ivs)
            for (s0, e0), (s1, _) in zip(ivs, ivs[1:]):
                if s1 < e0:
                    raise ValueError(f"speaker {spk!r} has overlapping segments")
            if any(e <= s for s, e in ivs):
                raise ValueError(f"speaker {spk!r} has an empty segment")
            clean[spk] = ivs
        self.segments = clean

    @property
    def speakers(self):
        return list(self.segments)

    @classmethod
    def from_utterances(cls, utterances) -> "SpeakerSegments":
        per: dict = {}
        for u in utterances:
            per.setdefault(u.speaker, []).append((u.start_s, u.end_s))
        return cls({k: merge_intervals(v) for k, v in per.items()})


@dataclass
class TurnTakingEvents:
    intra_pauses: list = field(default_factory=list)
    inter_silences: list = field(default_factory=list)
    overlaps: list = field(default_factory=list)
    active: list = field(default_factory=list)

    def durations(self, kind: str) -> np.ndarray:
        events = {"intra_pause": self.intra_pauses, "inter_silence": self.inter_silences,
                  "overlap": self.overlaps, "active": self.active}[kind]
        return np.array([e - s for s, e, _ in events], dtype=np.float64)

    def total(self, kind: str) -> float:
        return float(self.durations(kind).sum())


def extract_turn_events(segs: SpeakerSegments) -> TurnTakingEvents:
    """Classify the silences and overlaps of a two-party conversation.

    A gap in the union of active speech is an intra-speaker pause when a
    speaker whose speech ends at the gap also starts speech at its end,
    otherwise an inter-speaker silence.  Zero-length gaps are not events.
    """
    spk = segs.speakers
    if len(spk) > 2:
        raise ValueError(f"turn-taking analysis supports two speakers, got {len(spk)}")
    ev = TurnTakingEvents()
    for name in spk:
        ev.active.extend((s, e, f"active:{name}") for s, e in segs.segments[name])
    if len(spk) == 2:
        a, b = segs.segments[spk[0]], segs.segments[spk[1]]
        i = j = 0
        while i < len(a) and j < len(b):
            s, e = max(a[i][0], b[j][0]), min(a[i][1], b[j][1])
            if s < e:
                ev.overlaps.append((s, e, "overlap"))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
    union = merge_intervals(iv for ivs in segs.segments.values() for iv in ivs)
    for (_, g0), (g1, _) in zip(union, union[1:]):
        if g1 <= g0:
            continue
        left = {name for name, ivs in segs.segments.items() if any(e == g0 for _, e in ivs)}
        right = {name for name, ivs in segs.segments.items() if any(s == g1 for s, _ in ivs)}
        if left & right:
            ev.intra_pauses.append((g0, g1, "intra_pause"))
        else:
            ev.inter_silences.append((g0, g1, "inter_silence"))
    return ev


@dataclass
class DurationSummary:
    count: int
    mean: float
    median: float
    hist: np.ndarray
    edges: np.ndarray


DEFAULT_EDGES = np.linspace(0.0, 3.0, 31)


def turn_stats(events, edges=DEFAULT_EDGES) -> dict[str, DurationSummary]:
    """Per-kind duration distribution over a corpus of TurnTakingEvents."""
    events = list(events)
    if not events:
        raise ValueError("turn_stats needs at least one dialogue")
    edges = np.asarray(edges, dtype=np.float64)
    out = {}
    for kind in KINDS:
        d = np.concatenate([e.durations(kind) for e in events])
        hist, _ = np.histogram(d, bins=edges)
        if len(d):
            out[kind] = DurationSummary(len(d), float(d.mean()), float(np.median(d)), hist, edges)
        else:
            out[kind] = DurationSummary(0, 0.0, 0.0, hist, edges)
    return out


@dataclass
class LaughterStats:
    count: int
    mean_duration: float
    defined: bool  # False when there were no laughs (mean reported as 0)


def laughter_stats(annotations) -> LaughterStats:
    """annotations: per dialogue, a list of (start_s, end_s) laughter spans."""
    durs = []
    for spans in annotations:
        for s, e in spans:
            if e < s:
                raise ValueError(f"invalid laughter span [{s}, {e}]")
            durs.append(e - s)
    if not durs:
        return LaughterStats(0, 0.0, False)
    return LaughterStats(len(durs), float(np.mean(durs)), True)


def consistency_matrix(embeddings) -> np.ndarray:
    """Pairwise cosine similarities; symmetric with an exact unit diagonal."""
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2 or len(E) < 2:
        raise DimensionError("embeddings (n >= 2, dim)", "(n, dim)", E.shape)
    norms = np.linalg.norm(E, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm embedding")
    U = E / norms[:, None]
    S = np.clip(U @ U.T, -1.0, 1.0)
    S = np.triu(S, 1)
    S = S + S.T
    np.fill_diagonal(S, 1.0)
    return S


def frame_distances(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    """MCD between every pair of cepstral frames, shape (len(ca), len(cb))."""
    diff = ca[:, None, :] - cb[None, :, :]
    return MCD_CONST * np.sqrt((diff ** 2).sum(-1))


def dtw_path_cost(cost: np.ndarray) -> tuple[float, int]:
    """Minimum accumulated cost over monotone paths with steps (1,0),(0,1),(1,1).

    Returns (total cost, length of the chosen path in cells).
    """
    n, m = cost.shape
    D = np.full((n, m), np.inf)
    L = np.zeros((n, m), dtype=np.int64)
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                D[0, 0], L[0, 0] = cost[0, 0], 1
                continue
            best, blen = np.inf, 0
            # diagonal first so exact ties prefer the shorter path
            for pi, pj in ((i - 1, j - 1), (i - 1, j), (i, j - 1)):
                if pi >= 0 and pj >= 0 and D[pi, pj] < best:
                    best, blen = D[pi, pj], L[pi, pj]
            D[i, j] = cost[i, j] + best
            L[i, j] = blen + 1
    return float(D[-1, -1]), int(L[-1, -1])


def mcd_dtw(ref: MelSpectrogram, hyp: MelSpectrogram, order: int = 13) -> float:
    """Mel-cepstral distortion (dB) along the optimal DTW alignment, per path cell."""
    if ref.n_frames == 0 or hyp.n_frames == 0:
        raise ValueError("mcd_dtw needs non-empty spectrograms")
    if ref.n_mels != hyp.n_mels:
        raise DimensionError("mel bins", ref.n_mels, hyp.n_mels)
    cost = frame_distances(mel_cepstra(ref, order), mel_cepstra(hyp, order))
    total, length = dtw_path_cost(cost)
    return total / length


def mcd_aligned(ref: MelSpectrogram, hyp: MelSpectrogram, order: int = 13) -> float:
    """Frame-by-frame MCD without warping; lengths must match."""
    if ref.n_frames != hyp.n_frames:
        raise DimensionError("frame counts", ref.n_frames, hyp.n_frames)
    ca, cb = mel_cepstra(ref, order), mel_cepstra(hyp, order)
    return float(np.mean(MCD_CONST * np.sqrt(((ca - cb) ** 2).sum(1))))
