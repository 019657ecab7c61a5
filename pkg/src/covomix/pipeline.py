"""Glue between the stages: corpus features, training loops, synthesis and voice conversion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from . import dsp
from .acoustic import AcousticConfig, AcousticModel, CfmExample, cfm_loss, draw_cfm_sample, ode_sample
from .dataprep import DialogueSample, prepare_dialogues
from .errors import NumericalError
from .nn import Adam
from .t2s import StreamPair, T2SModel, collate, t2s_generate, t2s_loss, teacher_forced_accuracy
from .tokenizer import (Codebook, TextTokenSeq, Vocab, fit_codebook, speech_to_semantic,
                        tokenize_text)

log = logging.getLogger(__name__)


@dataclass
class DialogueData:
    name: str
    sample: DialogueSample
    waves: list            # per-speaker channel samples
    mel_channels: np.ndarray  # (2, T, n_mels)
    mel_mix: np.ndarray       # (T, n_mels)
    tokens: np.ndarray | None = None  # (T, 2)

    @property
    def text(self) -> str:
        return self.sample.serialized_text

    @property
    def n_frames(self) -> int:
        return self.mel_mix.shape[0]


@dataclass
class Corpus:
    dialogues: list[DialogueData]
    vocab: Vocab
    codebook: Codebook | None = None
    mel_cfg: dsp.MelConfig = field(default_factory=dsp.MelConfig)

    def mel_stats(self) -> tuple[float, float]:
        vals = np.concatenate([np.concatenate([d.mel_channels.reshape(-1), d.mel_mix.reshape(-1)])
                               for d in self.dialogues])
        return float(vals.mean()), float(vals.std())


def cut_segment(channels, start_s: float, end_s: float, sr: int) -> list[np.ndarray]:
    a = int(round(start_s * sr))
    b = int(round(end_s * sr))
    out = []
    for ch in channels:
        seg = np.zeros(b - a)
        lo, hi = max(a, 0), min(b, len(ch))
        if hi > lo:
            seg[lo - a:hi - a] = ch[lo:hi]
        out.append(seg)
    return out


def featurize(waves, cfg: dsp.MelConfig = dsp.DEFAULT_MEL):
    chans = [dsp.Waveform(w, cfg.sample_rate) for w in waves]
    mel_ch = np.stack([dsp.mel_spectrogram(c, cfg).values for c in chans])
    mix = chans[0]
    for c in chans[1:]:
        mix = dsp.mix_waveforms(mix, c)
    return mel_ch, dsp.mel_spectrogram(mix, cfg).values


def dialogues_from_recording(utterances, channels, speakers, max_duration=40.0, lead_s=0.1, tail_s=0.5,
                             cfg: dsp.MelConfig = dsp.DEFAULT_MEL, prefix="dlg") -> list[DialogueData]:
    """Segment one stereo recording and extract per-channel and mixed mels.

    channels[i] holds the audio of speakers[i].
    """
    out = []
    for i, sample in enumerate(prepare_dialogues(utterances, max_duration)):
        sample.speakers = tuple(speakers)
        waves = cut_segment(channels, sample.start_s - lead_s, sample.end_s + tail_s, cfg.sample_rate)
        mel_ch, mel_mix = featurize(waves, cfg)
        out.append(DialogueData(f"{prefix}{i:04d}", sample, waves, mel_ch, mel_mix))
    return out


def silence_row(cfg: dsp.MelConfig = dsp.DEFAULT_MEL) -> np.ndarray:
    return np.full(cfg.n_mels, cfg.log_floor)


def fit_corpus_codebook(corpus: Corpus, K: int = 64, seed: int = 0) -> Codebook:
    mels = [m for d in corpus.dialogues for m in d.mel_channels]
    cb = fit_codebook(mels, K, seed, silence_frame=silence_row(corpus.mel_cfg))
    corpus.codebook = cb
    for d in corpus.dialogues:
        d.tokens = np.stack(
            [speech_to_semantic(dsp.MelSpectrogram(m), cb).ids for m in d.mel_channels], axis=1)
    return cb


def toy_corpus(n_dialogues: int = 8, seed: int = 0, K: int = 64) -> Corpus:
    """Tiny two-speaker corpus rendered from the toy voice synthesizer."""
    from .synthetic import make_recording

    rec = make_recording(n_episodes=n_dialogues + 1, seed=seed)
    dialogues = dialogues_from_recording(rec.utterances, rec.channels, rec.speakers)[:n_dialogues]
    corpus = Corpus(dialogues, Vocab.build(d.text for d in dialogues))
    fit_corpus_codebook(corpus, K, seed)
    return corpus


# --- training ---------------------------------------------------------------

def t2s_examples(corpus: Corpus, n_streams: int = 2):
    out = []
    for d in corpus.dialogues:
        ids = tokenize_text(d.text, corpus.vocab).ids
        out.append((ids, d.tokens[:, :n_streams]))
    return out


def t2s_step_loss(model: T2SModel, examples, pad_id: int = 0):
    batch = collate(examples, model.cfg.bos_id, pad_id)
    logits = model(batch.text, batch.dec_in, batch.text_pad, batch.frame_pad)
    return t2s_loss(logits, batch.targets), logits, batch


def cosine_lr(peak: float, total_steps: int, warmup: int = 0, final: float = 0.0):
    """Linear warmup then cosine decay from peak to final over total_steps."""
    def lr_at(step: int) -> float:
        if warmup and step < warmup:
            return peak * (step + 1) / warmup
        frac = min(1.0, (step - warmup) / max(1, total_steps - warmup))
        return final + 0.5 * (peak - final) * (1 + np.cos(np.pi * frac))
    return lr_at


def train_t2s(model: T2SModel, examples, steps: int, lr: float = 1e-4, batch_size: int | None = None,
              rng: np.random.Generator | None = None, opt: Adam | None = None, log_every: int = 0,
              lr_at=None, start_step: int = 0):
    """Teacher-forced training; returns (losses, optimizer).

    lr_at(step), when given, overrides the learning rate at every step.
    """
    rng = rng or np.random.default_rng(0)
    opt = opt or Adam(model, lr=lr)
    losses = []
    model.train()
    for step in range(steps):
        if batch_size and batch_size < len(examples):
            idx = rng.choice(len(examples), size=batch_size, replace=False)
            batch = [examples[i] for i in sorted(idx)]
        else:
            batch = examples
        loss, _, _ = t2s_step_loss(model, batch)
        if not torch.isfinite(loss):
            raise NumericalError(f"t2s loss is {loss.item()} at step {step}")
        if lr_at is not None:
            opt.state.lr = lr_at(start_step + step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if log_every and step % log_every == 0:
            log.info("t2s step %d loss %.4f", step, losses[-1])
    return losses, opt


@torch.no_grad()
def t2s_accuracy(model: T2SModel, examples) -> float:
    was = model.training
    model.eval()
    _, logits, batch = t2s_step_loss(model, examples)
    model.train(was)
    return teacher_forced_accuracy(logits, batch.targets)


def acoustic_examples(corpus: Corpus, variant: str = "mix") -> list[CfmExample]:
    out = []
    for d in corpus.dialogues:
        if variant == "mix":
            out.append(CfmExample(d.mel_mix[None], d.mel_channels, d.tokens))
        elif variant == "stereo":
            out.append(CfmExample(d.mel_channels, d.mel_channels, d.tokens))
        else:
            for c in range(d.mel_channels.shape[0]):
                out.append(CfmExample(d.mel_channels[c:c + 1], d.mel_channels[c:c + 1], d.tokens[:, c:c + 1]))
    return out


def train_acoustic(model: AcousticModel, examples, steps: int, lr: float = 1e-4, batch_size: int | None = None,
                   rng: np.random.Generator | None = None, opt: Adam | None = None, log_every: int = 0,
                   lr_at=None, start_step: int = 0):
    rng = rng or np.random.default_rng(0)
    opt = opt or Adam(model, lr=lr)
    dtype = next(model.parameters()).dtype
    losses = []
    model.train()
    for step in range(steps):
        if batch_size and batch_size < len(examples):
            idx = rng.choice(len(examples), size=batch_size, replace=False)
            batch = [examples[i] for i in sorted(idx)]
        else:
            batch = examples
        sample = draw_cfm_sample(model, batch, rng, dtype=dtype)
        loss = cfm_loss(model, sample)
        if not torch.isfinite(loss):
            raise NumericalError(f"acoustic loss is {loss.item()} at step {step}")
        if lr_at is not None:
            opt.state.lr = lr_at(start_step + step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if log_every and step % log_every == 0:
            log.info("acoustic step %d loss %.4f", step, losses[-1])
    return losses, opt


def acoustic_config_for(corpus: Corpus, **kw) -> AcousticConfig:
    mean, std = corpus.mel_stats()
    kw.setdefault("semantic_vocab", corpus.codebook.size)
    return AcousticConfig(mel_mean=mean, mel_std=std, **kw)


# --- synthesis ----------------------------------------------------------------

@dataclass
class Prompt:
    """Acoustic prompt for one speaker: its mel and semantic tokens."""

    mel: np.ndarray      # (P, n_mels)
    tokens: np.ndarray   # (P,)


def make_prompt(wave: dsp.Waveform, cb: Codebook, cfg: dsp.MelConfig = dsp.DEFAULT_MEL) -> Prompt:
    mel = dsp.mel_spectrogram(wave, cfg)
    return Prompt(mel.values, speech_to_semantic(mel, cb).ids)


def layout_with_prompts(prompts: list[Prompt], tokens: np.ndarray, silence_id: int, floor: float):
    """Prefix prompts (one per speaker, in turn) before the frames to generate.

    Returns (tokens (T, C), m_ctx (C, T, n_mels), mask (T,), n_prefix).
    While speaker c's prompt plays, every other channel is silent.
    """
    C = tokens.shape[1]
    n_mels = prompts[0].mel.shape[1]
    n_prefix = sum(len(p.tokens) for p in prompts)
    T = n_prefix + len(tokens)
    tok = np.full((T, C), silence_id, dtype=np.int64)
    ctx = np.full((C, T, n_mels), floor)
    pos = 0
    for c, p in enumerate(prompts):
        n = len(p.tokens)
        tok[pos:pos + n, c] = p.tokens
        ctx[c, pos:pos + n] = p.mel
        pos += n
    tok[n_prefix:] = tokens
    mask = np.zeros(T, dtype=bool)
    mask[n_prefix:] = True
    return tok, ctx, mask, n_prefix


def render_tokens(model: AcousticModel, tokens: np.ndarray, prompts: list[Prompt], silence_id: int,
                  steps: int = 32, alpha: float = 0.7, seed: int = 0,
                  floor: float = dsp.DEFAULT_MEL.log_floor) -> list[np.ndarray]:
    """Acoustic model on semantic tokens (T, C) with per-speaker prompts.

    Returns the generated mel(s) with the prompt prefix removed.
    """
    if len(prompts) != model.cfg.n_ctx:
        raise ValueError(f"need {model.cfg.n_ctx} prompts, got {len(prompts)}")
    tok, ctx, mask, n_prefix = layout_with_prompts(prompts, tokens, silence_id, floor)
    mels = ode_sample(model, tok, ctx, mask, steps=steps, alpha=alpha, seed=seed)
    return [m.values[n_prefix:] for m in mels]


def synthesize(t2s_model: T2SModel, ac_model: AcousticModel, text: TextTokenSeq, prompts: list[Prompt],
               silence_id: int, max_frames: int = 500, steps: int = 32, alpha: float = 0.7, seed: int = 0,
               temperature: float = 0.0):
    """Text -> semantic streams -> mel(s).  Returns (streams, mels)."""
    gen = torch.Generator().manual_seed(seed)
    streams = t2s_generate(t2s_model, text, max_frames, temperature, gen)
    arr = streams.as_array()
    n_ctx = ac_model.cfg.n_ctx
    if arr.shape[1] < n_ctx:
        arr = np.concatenate([arr, np.full((len(arr), n_ctx - arr.shape[1]), silence_id)], axis=1)
    if ac_model.cfg.variant == "single":
        mels = [render_tokens(ac_model, arr[:, c:c + 1], [prompts[c]], silence_id, steps, alpha, seed)[0]
                for c in range(arr.shape[1])]
        mels = [power_sum(mels)]
    else:
        mels = render_tokens(ac_model, arr, prompts, silence_id, steps, alpha, seed)
    return StreamPair.from_array(arr, streams.streams[0].vocab_size), mels


def power_sum(mels) -> np.ndarray:
    """Mel of a sum of non-coherent sources, approximated by summing powers."""
    out = mels[0]
    for m in mels[1:]:
        out = np.logaddexp(out, m)
    return out


def voice_convert(source: list[dsp.Waveform], target_prompts: list[Prompt | None], cb: Codebook,
                  model: AcousticModel, steps: int = 32, alpha: float = 0.7, seed: int = 0,
                  cfg: dsp.MelConfig = dsp.DEFAULT_MEL, vocoder_iters: int = 60):
    """Re-voice one or two source channels with the target speakers' prompts.

    Semantic tokens come from the source speech; the acoustic model renders
    them with the target prompts.  The single-talker variant converts each
    channel on its own and mixes the results.  Returns (mel, waveform).
    """
    streams = np.stack([speech_to_semantic(dsp.mel_spectrogram(w, cfg), cb).ids for w in source], axis=1)
    active = [bool((streams[:, c] != cb.silence_id).any()) for c in range(streams.shape[1])]
    for c, p in enumerate(target_prompts):
        if active[c] and p is None:
            raise ValueError(f"channel {c} is active but has no target prompt")
    silent_prompt = Prompt(np.full((1, cfg.n_mels), cfg.log_floor), np.array([cb.silence_id]))
    prompts = [p if p is not None else silent_prompt for p in target_prompts]
    if model.cfg.variant == "single":
        parts = [render_tokens(model, streams[:, c:c + 1], [prompts[c]], cb.silence_id, steps, alpha, seed)[0]
                 for c in range(streams.shape[1]) if active[c]]
        mel = power_sum(parts) if parts else np.full((len(streams), cfg.n_mels), cfg.log_floor)
    else:
        if streams.shape[1] < 2:
            streams = np.concatenate([streams, np.full_like(streams, cb.silence_id)], axis=1)
            prompts = prompts + [silent_prompt]
        mels = render_tokens(model, streams, prompts, cb.silence_id, steps, alpha, seed)
        mel = power_sum(mels)
    wave = dsp.griffin_lim(dsp.MelSpectrogram(mel), vocoder_iters, seed, cfg)
    return dsp.MelSpectrogram(mel), wave
