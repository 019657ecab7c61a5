"""Word-level text tokenizer and the k-means semantic quantizer."""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import MelSpectrogram
from .errors import DataError, DimensionError

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPKCHANGE, LAUGHTER = "[spkchange]", "[laughter]"
SPECIALS = (PAD, BOS, EOS, UNK, SPKCHANGE, LAUGHTER)

_TOKEN_RE = re.compile(r"\[spkchange\]|\[laughter\]|<unk>|[a-z0-9]+(?:'[a-z0-9]+)*|[^\sa-z0-9]")


def split_words(transcript: str) -> list[str]:
    """Lowercase and split into words, punctuation marks and special tags.

    A bare "|" is read as a speaker change.
    """
    text = transcript.lower().replace("|", f" {SPKCHANGE} ")
    return _TOKEN_RE.findall(text)


@dataclass
class Vocab:
    tokens: list[str] = field(default_factory=lambda: list(SPECIALS))

    def __post_init__(self):
        if tuple(self.tokens[:len(SPECIALS)]) != SPECIALS:
            raise DataError("vocab must start with the reserved special tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("duplicate tokens in vocab")

    def __len__(self):
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    @property
    def pad_id(self):
        return self.index[PAD]

    @property
    def bos_id(self):
        return self.index[BOS]

    @property
    def eos_id(self):
        return self.index[EOS]

    @property
    def unk_id(self):
        return self.index[UNK]

    @property
    def spkchange_id(self):
        return self.index[SPKCHANGE]

    @property
    def laughter_id(self):
        return self.index[LAUGHTER]

    @classmethod
    def build(cls, transcripts) -> "Vocab":
        seen = dict.fromkeys(SPECIALS)
        for text in transcripts:
            for w in split_words(text):
                seen.setdefault(w)
        return cls(list(seen))

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass
class TextTokenSeq:
    ids: np.ndarray
    vocab: Vocab

    def __len__(self):
        return len(self.ids)


def tokenize_text(transcript: str, vocab: Vocab) -> TextTokenSeq:
    ids = [vocab.bos_id] + [vocab.id(w) for w in split_words(transcript)] + [vocab.eos_id]
    return TextTokenSeq(np.array(ids, dtype=np.int64), vocab)


def detokenize(seq: TextTokenSeq) -> str:
    skip = {seq.vocab.bos_id, seq.vocab.eos_id, seq.vocab.pad_id}
    return " ".join(seq.vocab.tokens[i] for i in seq.ids if i not in skip)


# --- semantic tokens --------------------------------------------------------

@dataclass
class SemanticTokenStream:
    ids: np.ndarray
    vocab_size: int
    channel: int = 0

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= self.vocab_size):
            raise DataError(f"token ids outside [0, {self.vocab_size})")

    def __len__(self):
        return len(self.ids)


CDBK_MAGIC = b"CDBK"
CDBK_VERSION = 1


@dataclass
class Codebook:
    centroids: np.ndarray
    silence_id: int | None = None

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise DataError("codebook needs at least one centroid")
        if not np.isfinite(self.centroids).all():
            raise DataError("codebook has non-finite centroids")

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def save(self, path) -> None:
        """Binary "CDBK": magic, u32 version, u32 K, u32 dim, i32 silence id (-1: none), f64 centroids."""
        sid = -1 if self.silence_id is None else self.silence_id
        head = CDBK_MAGIC + struct.pack("<IIIi", CDBK_VERSION, self.size, self.dim, sid)
        Path(path).write_bytes(head + np.ascontiguousarray(self.centroids, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Codebook":
        blob = Path(path).read_bytes()
        if blob[:4] != CDBK_MAGIC:
            raise DataError(f"{path}: not a CDBK file")
        version, k, dim, sid = struct.unpack_from("<IIIi", blob, 4)
        if version != CDBK_VERSION:
            raise DataError(f"{path}: unsupported CDBK version {version}")
        if len(blob) != 20 + 8 * k * dim:
            raise DataError(f"{path}: size mismatch")
        cents = np.frombuffer(blob, dtype="<f8", offset=20).reshape(k, dim)
        return cls(cents.copy(), None if sid < 0 else sid)


def nearest_centroid(frames: np.ndarray, centroids: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Index of the closest centroid per row; argmin keeps the lowest id on ties."""
    out = np.empty(len(frames), dtype=np.int64)
    for s in range(0, len(frames), chunk):
        block = frames[s:s + chunk]
        d = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
        out[s:s + chunk] = d.argmin(1)
    return out


def kmeans_objective(frames, centroids, weights=None) -> float:
    labels = nearest_centroid(frames, centroids)
    per_frame = ((frames - centroids[labels]) ** 2).sum(1)
    return float(per_frame.sum() if weights is None else (weights * per_frame).sum())


def _lloyd(points, weights, init, max_iter, tol, history=None):
    centroids = init.copy()
    for _ in range(max_iter):
        labels = nearest_centroid(points, centroids)
        if history is not None:
            history.append(float((weights * ((points - centroids[labels]) ** 2).sum(1)).sum()))
        updated = centroids.copy()
        for k in range(len(centroids)):
            sel = labels == k
            if sel.any():
                updated[k] = (weights[sel, None] * points[sel]).sum(0) / weights[sel].sum()
        shift = np.abs(updated - centroids).max()
        centroids = updated
        if shift <= tol:
            break
    return centroids


def fit_codebook(mels, K: int = 64, seed: int = 0, max_iter: int = 100, tol: float = 0.0,
                 silence_frame: np.ndarray | None = None, history: list | None = None) -> Codebook:
    """Lloyd's k-means over all mel frames.

    Initial centroids are K distinct frames picked k-means++-style from the
    de-duplicated frame set, so duplicating the data leaves the result
    unchanged.  When silence_frame is given its nearest centroid becomes
    the codebook's silence id.
    """
    frames = np.concatenate([m.values if isinstance(m, MelSpectrogram) else np.asarray(m) for m in mels])
    if K < 1:
        raise ValueError("K must be positive")
    if len(frames) < K:
        raise ValueError(f"K={K} exceeds number of frames ({len(frames)})")
    uniq, counts = np.unique(frames, axis=0, return_counts=True)
    if len(uniq) < K:
        raise ValueError(f"K={K} exceeds number of distinct frames ({len(uniq)})")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(uniq)))]
    d2 = ((uniq - uniq[chosen[0]]) ** 2).sum(1)
    for _ in range(1, K):
        total = d2.sum()
        nxt = int(rng.choice(len(uniq), p=d2 / total)) if total > 0 else int(rng.integers(len(uniq)))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((uniq - uniq[nxt]) ** 2).sum(1))
    centroids = _lloyd(uniq, counts.astype(np.float64), uniq[chosen], max_iter, tol, history)
    silence_id = None
    if silence_frame is not None:
        silence_id = int(nearest_centroid(np.asarray(silence_frame, dtype=np.float64)[None], centroids)[0])
    return Codebook(centroids, silence_id)


def speech_to_semantic(mel: MelSpectrogram, cb: Codebook, channel: int = 0) -> SemanticTokenStream:
    if mel.n_mels != cb.dim:
        raise DimensionError("mel bins vs codebook dim", cb.dim, mel.n_mels)
    return SemanticTokenStream(nearest_centroid(mel.values, cb.centroids), cb.size, channel)


# --- token file -------------------------------------------------------------

SEMT_MAGIC = b"SEMT"
SEMT_VERSION = 1


def write_tokens(path, stream: SemanticTokenStream) -> None:
    if stream.vocab_size > 65536:
        raise DataError("vocab too large for u16 token file")
    head = SEMT_MAGIC + struct.pack("<III", SEMT_VERSION, len(stream), stream.vocab_size)
    Path(path).write_bytes(head + stream.ids.astype("<u2").tobytes())


def read_tokens(path, channel: int = 0) -> SemanticTokenStream:
    blob = Path(path).read_bytes()
    if blob[:4] != SEMT_MAGIC:
        raise DataError(f"{path}: not a SEMT file")
    version, n, vocab = struct.unpack_from("<III", blob, 4)
    if version != SEMT_VERSION:
        raise DataError(f"{path}: unsupported SEMT version {version}")
    if len(blob) != 16 + 2 * n:
        raise DataError(f"{path}: size mismatch")
    ids = np.frombuffer(blob, dtype="<u2", offset=16).astype(np.int64)
    return SemanticTokenStream(ids, vocab, channel)
