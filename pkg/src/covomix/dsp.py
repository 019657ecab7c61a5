"""Waveform <-> log-mel front-end, mel-cepstra, and a Griffin-Lim vocoder.

Frames are taken without centering: frame i covers samples
[i * hop, i * hop + win_length).  At the default 8 kHz rate a hop of 160
samples gives the 20 ms frame shift shared with the semantic tokens.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import DataError, DimensionError


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 8000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise DimensionError("waveform samples", "1-d", self.samples.shape)
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    values: np.ndarray
    frame_shift_ms: float = 20.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError("mel values (frames, n_mels)", 2, self.values.ndim)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 8000
    n_fft: int = 512
    win_length: int = 400
    hop_length: int = 160
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None
    power_floor: float = 1e-10

    def __post_init__(self):
        if self.win_length > self.n_fft:
            raise ValueError("win_length must not exceed n_fft")

    @property
    def frame_shift_ms(self) -> float:
        return 1000.0 * self.hop_length / self.sample_rate

    @property
    def log_floor(self) -> float:
        return float(np.log(self.power_floor))


DEFAULT_MEL = MelConfig()


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    """Center frequency in Hz of every triangular filter."""
    fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2
    pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2)
    return mel_to_hz(pts)[1:-1]


@lru_cache(maxsize=8)
def mel_filterbank(cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    """Triangular HTK-scale filters with unit peak, shape (n_mels, n_fft // 2 + 1)."""
    fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2))
    freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def _window(cfg: MelConfig) -> np.ndarray:
    # periodic Hann
    return np.hanning(cfg.win_length + 1)[:-1]


def n_frames_for(n_samples: int, cfg: MelConfig = DEFAULT_MEL) -> int:
    if n_samples < cfg.win_length:
        return 0
    return (n_samples - cfg.win_length) // cfg.hop_length + 1


def stft(samples: np.ndarray, cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    """Complex spectra, shape (frames, n_fft // 2 + 1)."""
    n = n_frames_for(len(samples), cfg)
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(n)[:, None]
    frames = samples[idx] * _window(cfg)
    return np.fft.rfft(frames, n=cfg.n_fft, axis=1)


def istft(spec: np.ndarray, cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    """Weighted overlap-add inverse of stft; length (frames - 1) * hop + win_length."""
    n = spec.shape[0]
    win = _window(cfg)
    length = (n - 1) * cfg.hop_length + cfg.win_length if n else 0
    out = np.zeros(length)
    norm = np.zeros(length)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1)[:, :cfg.win_length] * win
    for i in range(n):
        s = i * cfg.hop_length
        out[s:s + cfg.win_length] += frames[i]
        norm[s:s + cfg.win_length] += win ** 2
    if n:
        # the outermost samples see only a window tail; floor the normalizer
        # there so they are attenuated rather than blown up
        out /= np.maximum(norm, 0.1 * norm.max())
    return out


def mel_spectrogram(w: Waveform, cfg: MelConfig = DEFAULT_MEL) -> MelSpectrogram:
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform rate {w.sample_rate} != config rate {cfg.sample_rate}")
    if len(w) == 0:
        raise ValueError("empty waveform")
    if len(w) < cfg.win_length:
        raise ValueError(f"waveform shorter than one window ({len(w)} < {cfg.win_length})")
    power = np.abs(stft(w.samples, cfg)) ** 2
    mel_power = power @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel_power, cfg.power_floor)), cfg.frame_shift_ms)


def mix_waveforms(a: Waveform, b: Waveform) -> Waveform:
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"sample rate mismatch: {a.sample_rate} vs {b.sample_rate}")
    n = max(len(a), len(b))
    out = np.zeros(n)
    out[:len(a)] += a.samples
    out[:len(b)] += b.samples
    return Waveform(np.clip(out, -1.0, 1.0), a.sample_rate)


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row k is basis vector k."""
    return scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=0)


def mel_cepstra(mel: MelSpectrogram, order: int = 13) -> np.ndarray:
    """Coefficients 1..order of the row-wise orthonormal DCT-II (c0 dropped)."""
    if order < 1:
        raise ValueError(f"cepstral order must be >= 1, got {order}")
    if order > mel.n_mels - 1:
        raise ValueError(f"order {order} needs at least {order + 1} mel bins, have {mel.n_mels}")
    c = scipy.fft.dct(mel.values, type=2, norm="ortho", axis=1)
    return c[:, 1:order + 1]


def mel_to_linear_magnitude(mel: MelSpectrogram, cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    fb = mel_filterbank(cfg)
    power = np.exp(mel.values) @ np.linalg.pinv(fb).T
    return np.sqrt(np.maximum(power, 0.0))


def griffin_lim(mel: MelSpectrogram, iterations: int = 60, seed: int = 0,
                cfg: MelConfig = DEFAULT_MEL) -> Waveform:
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if mel.n_mels != cfg.n_mels:
        raise DimensionError("mel bins", cfg.n_mels, mel.n_mels)
    mag = mel_to_linear_magnitude(mel, cfg)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    y = istft(mag * phase, cfg)
    for _ in range(iterations):
        rebuilt = stft(y, cfg)
        phase = np.exp(1j * np.angle(rebuilt))
        y = istft(mag * phase, cfg)
    return Waveform(np.clip(y, -1.0, 1.0), cfg.sample_rate)


# --- file formats -----------------------------------------------------------

MEL_MAGIC = b"MELF"
MEL_VERSION = 1


def write_mel(path, mel: MelSpectrogram) -> None:
    head = MEL_MAGIC + struct.pack("<IIIf", MEL_VERSION, mel.n_frames, mel.n_mels, mel.frame_shift_ms)
    Path(path).write_bytes(head + np.ascontiguousarray(mel.values, dtype="<f4").tobytes())


def read_mel(path) -> MelSpectrogram:
    blob = Path(path).read_bytes()
    if blob[:4] != MEL_MAGIC:
        raise DataError(f"{path}: not a MELF file")
    version, n_frames, n_mels, shift = struct.unpack_from("<IIIf", blob, 4)
    if version != MEL_VERSION:
        raise DataError(f"{path}: unsupported MELF version {version}")
    expected = 20 + 4 * n_frames * n_mels
    if len(blob) != expected:
        raise DataError(f"{path}: size {len(blob)} != expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=20).reshape(n_frames, n_mels)
    return MelSpectrogram(values.astype(np.float64), float(shift))


def write_wav(path, channels: list[Waveform]) -> None:
    """16-bit PCM, one or two channels; shorter channels are zero-padded."""
    if not channels:
        raise ValueError("no channels to write")
    rate = channels[0].sample_rate
    if any(c.sample_rate != rate for c in channels):
        raise ValueError("channels have different sample rates")
    n = max(len(c) for c in channels)
    data = np.zeros((n, len(channels)))
    for i, c in enumerate(channels):
        data[:len(c), i] = c.samples
    pcm = np.round(np.clip(data, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(len(channels))
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> list[Waveform]:
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise DataError(f"{path}: only 16-bit PCM is supported")
        n_ch = fh.getnchannels()
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").reshape(-1, n_ch)
    return [Waveform(pcm[:, i] / 32767.0, rate) for i in range(n_ch)]
