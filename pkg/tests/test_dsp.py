import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covomix import dsp
from covomix.dsp import (DEFAULT_MEL, MelConfig, MelSpectrogram, Waveform, dct_matrix, griffin_lim, mel_cepstra,
                         mel_center_frequencies, mel_filterbank, mel_spectrogram, mix_waveforms, n_frames_for)
from covomix.errors import DataError, DimensionError


def naive_dct_row(x):
    n = len(x)
    out = np.zeros(n)
    for k in range(n):
        s = sum(x[i] * math.cos(math.pi * (i + 0.5) * k / n) for i in range(n))
        out[k] = s * math.sqrt((1 if k == 0 else 2) / n)
    return out


def noise_bursts(seed=0, seconds=1.0, sr=8000, floor=1e-3):
    """100 ms noise bursts every 200 ms over a -60 dB background."""
    rng = np.random.default_rng(seed)
    n = int(seconds * sr)
    x = rng.standard_normal(n) * floor
    for s in range(0, n, 1600):
        x[s:s + 800] += rng.standard_normal(800) * 0.2 * rng.uniform(0.3, 1.0)
    return Waveform(np.clip(x, -1, 1), sr)


def test_frame_count_formula():
    for n in (400, 401, 559, 560, 8000, 12345):
        mel = mel_spectrogram(Waveform(np.zeros(n)))
        assert mel.n_frames == (n - 400) // 160 + 1 == n_frames_for(n)
        assert mel.n_mels == 80 and mel.frame_shift_ms == 20.0


def test_too_short_or_empty_rejected():
    with pytest.raises(ValueError):
        mel_spectrogram(Waveform(np.zeros(0)))
    with pytest.raises(ValueError):
        mel_spectrogram(Waveform(np.zeros(399)))


def test_silence_is_log_floor():
    mel = mel_spectrogram(Waveform(np.zeros(4000)))
    assert np.all(mel.values == math.log(1e-10))
    assert DEFAULT_MEL.log_floor == math.log(1e-10)


def test_filterbank_shape_and_unit_peaks():
    fb = mel_filterbank()
    assert fb.shape == (80, 257)
    assert fb.min() >= 0 and fb.max() <= 1.0
    centers = mel_center_frequencies()
    assert np.all(np.diff(centers) > 0) and centers[-1] < 4000


@pytest.mark.parametrize("k", [5, 20, 40, 60, 75])
def test_sine_at_center_peaks_in_its_filter(k):
    f = mel_center_frequencies()[k]
    t = np.arange(8000) / 8000
    mel = mel_spectrogram(Waveform(0.5 * np.sin(2 * np.pi * f * t)))
    assert np.all(mel.values.argmax(axis=1) == k)


def test_mix_of_waveforms_is_not_sum_of_logs():
    a, b = noise_bursts(1), noise_bursts(2)
    mix = mel_spectrogram(mix_waveforms(a, b))
    ma, mb = mel_spectrogram(a), mel_spectrogram(b)
    assert mix.values.shape == ma.values.shape
    assert not np.allclose(mix.values, ma.values + mb.values)


def test_mix_waveforms_cases():
    rng = np.random.default_rng(7)
    a = Waveform(rng.uniform(-0.8, 0.8, 100))
    b = Waveform(rng.uniform(-0.8, 0.8, 60))
    assert np.array_equal(mix_waveforms(a, Waveform(np.zeros(100))).samples, a.samples)
    assert np.all(mix_waveforms(a, Waveform(-a.samples)).samples == 0)
    got = mix_waveforms(a, b).samples
    for i in range(100):
        s = a.samples[i] + (b.samples[i] if i < 60 else 0.0)
        assert got[i] == min(1.0, max(-1.0, s))
    with pytest.raises(ValueError):
        mix_waveforms(a, Waveform(np.zeros(3), 16000))


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        Waveform(np.zeros(3), 0)


def test_cepstra_constant_and_cosine_rows():
    mel = MelSpectrogram(np.full((3, 80), -4.2))
    assert np.allclose(mel_cepstra(mel), 0.0, atol=1e-12)
    basis = dct_matrix(80)
    c = mel_cepstra(MelSpectrogram(basis[7][None] * 3.0))
    expect = np.zeros(13)
    expect[6] = 3.0
    assert np.allclose(c[0], expect, atol=1e-12)


def test_cepstra_match_naive_dct():
    x = np.random.default_rng(0).standard_normal((3, 8))
    c = mel_cepstra(MelSpectrogram(x), order=7)
    for r in range(3):
        assert np.allclose(c[r], naive_dct_row(x[r])[1:], atol=1e-9)


def test_cepstra_order_bounds():
    mel = MelSpectrogram(np.zeros((2, 80)))
    with pytest.raises(ValueError):
        mel_cepstra(mel, 0)
    with pytest.raises(ValueError):
        mel_cepstra(mel, 80)
    assert mel_cepstra(mel, 79).shape == (2, 79)


def test_dct_is_orthonormal_and_invertible():
    D = dct_matrix(80)
    assert np.allclose(D @ D.T, np.eye(80), atol=1e-12)
    rows = np.random.default_rng(1).standard_normal((4, 80))
    assert np.allclose((rows @ D.T) @ D, rows, atol=1e-9)


def test_istft_inverts_stft():
    x = noise_bursts(3).samples
    y = dsp.istft(dsp.stft(x))
    n = len(y)
    # the first and last hop are covered by a single tapered window
    assert np.allclose(y[160:n - 160], x[160:n - 160], atol=1e-10)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_griffin_lim_round_trip_correlation(seed):
    mel = mel_spectrogram(noise_bursts(seed))
    back = mel_spectrogram(griffin_lim(mel, 60, seed=0))
    r = np.corrcoef(mel.values.ravel(), back.values.ravel())[0, 1]
    assert r >= 0.9


def test_griffin_lim_zero_iterations_length_and_determinism():
    mel = mel_spectrogram(noise_bursts(4, 0.5))
    y = griffin_lim(mel, 0)
    assert len(y) == (mel.n_frames - 1) * 160 + 400
    assert np.array_equal(griffin_lim(mel, 5, seed=3).samples, griffin_lim(mel, 5, seed=3).samples)
    assert not np.array_equal(griffin_lim(mel, 5, seed=3).samples, griffin_lim(mel, 5, seed=4).samples)


def test_griffin_lim_of_floor_is_near_silent():
    mel = MelSpectrogram(np.full((20, 80), DEFAULT_MEL.log_floor))
    assert np.abs(griffin_lim(mel, 10).samples).max() < 1e-3


def test_griffin_lim_wrong_bins():
    with pytest.raises(DimensionError):
        griffin_lim(MelSpectrogram(np.zeros((4, 40))), 1)


def test_mel_file_roundtrip(tmp_path):
    vals = np.random.default_rng(0).standard_normal((7, 80)).astype(np.float32).astype(np.float64)
    dsp.write_mel(tmp_path / "a.mel", MelSpectrogram(vals))
    back = dsp.read_mel(tmp_path / "a.mel")
    assert np.array_equal(back.values, vals) and back.frame_shift_ms == 20.0
    (tmp_path / "b.mel").write_bytes((tmp_path / "a.mel").read_bytes()[:-4])
    with pytest.raises(DataError):
        dsp.read_mel(tmp_path / "b.mel")


def test_wav_roundtrip(tmp_path):
    a = Waveform(np.linspace(-1, 1, 500))
    b = Waveform(np.zeros(300))
    dsp.write_wav(tmp_path / "s.wav", [a, b])
    ch = dsp.read_wav(tmp_path / "s.wav")
    assert len(ch) == 2 and len(ch[1]) == 500
    assert np.abs(ch[0].samples - a.samples).max() <= 0.5 / 32767 + 1e-12
    assert np.all(ch[1].samples == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(400, 3000), st.integers(0, 2**31 - 1))
def test_mel_is_finite_and_bounded_below(n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    mel = mel_spectrogram(Waveform(x))
    assert np.isfinite(mel.values).all()
    assert mel.values.min() >= DEFAULT_MEL.log_floor


def test_custom_config_frames():
    cfg = MelConfig(n_mels=40, hop_length=80, win_length=200, n_fft=256)
    mel = mel_spectrogram(Waveform(np.zeros(1000)), cfg)
    assert mel.values.shape == ((1000 - 200) // 80 + 1, 40)
    assert cfg.frame_shift_ms == 10.0
