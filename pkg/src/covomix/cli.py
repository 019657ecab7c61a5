"""Command-line entry point: ``covomix <command> [options]``.

Work-directory layout written by the commands::

    manifest.jsonl, monologues.jsonl, vocab.txt       prepare
    mels/<dlg>.ch0.mel, .ch1.mel, .mix.mel            prepare
    codebook.cdbk, tokens/<dlg>.ch{0,1}.sem           fit-codebook
    t2s.ckpt, t2s.json, t2s_loss.csv, ...             train-t2s
    acoustic-<variant>.ckpt, .json, _loss.csv         train-acoustic

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from . import dsp, pipeline
from .acoustic import AcousticConfig, AcousticModel, cfm_loss, draw_cfm_sample
from .dataprep import (DialogueSample, Utterance, prepare_dialogues, read_utterances_jsonl,
                       serialize_transcript, slice_monologues)
from .errors import DataError, NumericalError
from .metrics import (DEFAULT_EDGES, KINDS, SpeakerSegments, consistency_matrix, extract_turn_events,
                      laughter_stats, mcd_dtw, turn_stats)
from .t2s import T2SConfig, T2SModel, t2s_generate
from .tokenizer import (SPKCHANGE, Codebook, SemanticTokenStream, Vocab, fit_codebook, read_tokens,
                        speech_to_semantic, tokenize_text, write_tokens)
from .training import fit, load_model_tensors
from .checkpoint import load_archive

log = logging.getLogger("covomix")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- work directory ------------------------------------------------------------

def _jsonl_write(path: Path, rows) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def _jsonl_read(path: Path) -> list[dict]:
    if not path.exists():
        raise DataError(f"{path} not found; run `covomix prepare` first")
    return [json.loads(ln) for ln in path.read_text().splitlines() if ln.strip()]


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"{what} {p} does not exist")
    return p


def _manifest_sample(row: dict) -> DialogueSample:
    utts = [Utterance.from_json(u) for u in row["utterances"]]
    return DialogueSample(utts, row["text"], speakers=tuple(row["speakers"]))


def load_corpus(cfg, need_tokens: bool = True) -> pipeline.Corpus:
    """Featurized dialogues of the work directory, in manifest order."""
    work = _require_dir(cfg.work_dir, "work_dir")
    rows = [r for r in _jsonl_read(work / "manifest.jsonl") if r["featurized"]]
    vocab = Vocab.load(work / "vocab.txt")
    if need_tokens and not (work / "codebook.cdbk").exists():
        raise DataError("codebook missing; run `covomix fit-codebook` first")
    cb = Codebook.load(work / "codebook.cdbk") if need_tokens else None
    out = []
    for r in rows:
        name = r["name"]
        chans = np.stack([dsp.read_mel(work / "mels" / f"{name}.ch{c}.mel").values for c in range(2)])
        mix = dsp.read_mel(work / "mels" / f"{name}.mix.mel").values
        tokens = None
        if need_tokens:
            tokens = np.stack([read_tokens(work / "tokens" / f"{name}.ch{c}.sem").ids for c in range(2)], axis=1)
        out.append(pipeline.DialogueData(name, _manifest_sample(r), [], chans, mix, tokens))
    return pipeline.Corpus(out, vocab, cb)


def _split(items, val_count: int):
    if val_count and val_count < len(items):
        return items[:-val_count], items[-val_count:]
    return items, items


# --- prepare / fit-codebook ----------------------------------------------------

def cmd_prepare(cfg, args) -> int:
    data = _require_dir(cfg.data_dir, "data_dir")
    work = Path(cfg.work_dir)
    (work / "mels").mkdir(parents=True, exist_ok=True)
    mel_cfg = dsp.DEFAULT_MEL
    manifest, monologues, texts = [], [], []
    sources = sorted(data.glob("*.jsonl"))
    if not sources:
        log.warning("no transcripts (*.jsonl) in %s; writing empty manifests", data)
    for src in sources:
        try:
            utts = read_utterances_jsonl(src.read_text().splitlines())
        except DataError as exc:
            raise DataError(f"{src}: {exc}") from exc
        speakers = sorted({u.speaker for u in utts})
        wav_path = src.with_suffix(".wav")
        if not wav_path.exists():
            raise DataError(f"{src}: audio {wav_path.name} not found")
        channels = dsp.read_wav(wav_path)
        if len(channels) < len(speakers):
            raise DataError(f"{wav_path}: {len(channels)} channels for {len(speakers)} speakers")
        if channels[0].sample_rate != mel_cfg.sample_rate:
            raise DataError(f"{wav_path}: sample rate {channels[0].sample_rate} != {mel_cfg.sample_rate}")
        by_spk = {s: channels[i].samples for i, s in enumerate(speakers)}
        for i, sample in enumerate(prepare_dialogues(utts, cfg.max_duration)):
            name = f"{src.stem}_{i:04d}"
            two = len(sample.speakers) == 2
            row = {"name": name, "source": src.name, "start": sample.start_s, "end": sample.end_s,
                   "speakers": list(sample.speakers), "text": sample.serialized_text, "featurized": two,
                   "utterances": [u.to_json() for u in sample.utterances]}
            if two:
                waves = pipeline.cut_segment([by_spk[s] for s in sample.speakers],
                                             sample.start_s - cfg.lead_s, sample.end_s + cfg.tail_s,
                                             mel_cfg.sample_rate)
                mel_ch, mel_mix = pipeline.featurize(waves, mel_cfg)
                for c in range(2):
                    dsp.write_mel(work / "mels" / f"{name}.ch{c}.mel", dsp.MelSpectrogram(mel_ch[c]))
                dsp.write_mel(work / "mels" / f"{name}.mix.mel", dsp.MelSpectrogram(mel_mix))
                row["n_frames"] = int(mel_mix.shape[0])
                texts.append(sample.serialized_text)
            manifest.append(row)
        for kind, min_d in (("long", cfg.min_monologue_s), ("short", cfg.min_short_monologue_s)):
            for m in slice_monologues(utts, min_d):
                monologues.append({"source": src.name, "kind": kind, "speaker": m.speaker,
                                   "duration": m.duration_s, "text": m.text,
                                   "utterances": [u.to_json() for u in m.utterances]})
    _jsonl_write(work / "manifest.jsonl", manifest)
    _jsonl_write(work / "monologues.jsonl", monologues)
    Vocab.build(texts).save(work / "vocab.txt")
    n_feat = sum(r["featurized"] for r in manifest)
    dur = sum(r["end"] - r["start"] for r in manifest)
    print(f"recordings {len(sources)}  dialogues {len(manifest)} ({n_feat} two-party)  "
          f"dialogue hours {dur / 3600:.4f}  monologues long "
          f"{sum(m['kind'] == 'long' for m in monologues)} short {sum(m['kind'] == 'short' for m in monologues)}")
    return EXIT_OK


def cmd_fit_codebook(cfg, args) -> int:
    work = _require_dir(cfg.work_dir, "work_dir")
    corpus = load_corpus(cfg, need_tokens=False)
    if not corpus.dialogues:
        raise DataError("no featurized dialogues to fit a codebook on")
    mels = [m for d in corpus.dialogues for m in d.mel_channels]
    cb = fit_codebook(mels, cfg.codebook_size, cfg.seed, silence_frame=pipeline.silence_row())
    cb.save(work / "codebook.cdbk")
    (work / "tokens").mkdir(exist_ok=True)
    used = set()
    for d in corpus.dialogues:
        for c in range(2):
            s = speech_to_semantic(dsp.MelSpectrogram(d.mel_channels[c]), cb, c)
            used.update(s.ids.tolist())
            write_tokens(work / "tokens" / f"{d.name}.ch{c}.sem", s)
    print(f"codebook K={cb.size} silence_id={cb.silence_id} units used {len(used)}")
    return EXIT_OK


# --- training --------------------------------------------------------------------

def t2s_config(cfg, corpus) -> T2SConfig:
    n_streams = 1 if cfg.t2s_variant == "single" else 2
    return T2SConfig(len(corpus.vocab), corpus.codebook.size, n_streams, cfg.t2s_variant,
                     cfg.t2s_enc_layers, cfg.t2s_dec_layers, cfg.t2s_enc_dim, cfg.t2s_dec_dim,
                     cfg.t2s_heads, corpus.codebook.silence_id)


def t2s_training_examples(corpus, variant: str):
    if variant == "mix":
        return pipeline.t2s_examples(corpus, 2)
    out = []
    for d in corpus.dialogues:
        for c, spk in enumerate(d.sample.speakers):
            utts = [u for u in d.sample.utterances if u.speaker == spk]
            out.append((tokenize_text(serialize_transcript(utts), corpus.vocab).ids, d.tokens[:, c:c + 1]))
    return out


def _seed_all(seed: int):
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def cmd_train_t2s(cfg, args) -> int:
    corpus = load_corpus(cfg)
    if not corpus.dialogues:
        raise DataError("no featurized dialogues to train on")
    _seed_all(cfg.seed)
    mcfg = t2s_config(cfg, corpus)
    model = T2SModel(mcfg)
    (Path(cfg.work_dir) / "t2s.json").write_text(json.dumps(mcfg.to_dict(), indent=1, sort_keys=True))
    train, val = _split(t2s_training_examples(corpus, cfg.t2s_variant), cfg.val_count)

    def loss_fn(m, batch, rng):
        return pipeline.t2s_step_loss(m, batch)[0]

    @torch.no_grad()
    def val_fn(m):
        m.eval()
        out = pipeline.t2s_step_loss(m, val)[0].item()
        m.train()
        return out

    state = fit(model, train, loss_fn, val_fn, epochs=cfg.t2s_epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                seed=cfg.seed, out_dir=cfg.work_dir, prefix="t2s", resume=args.resume)
    print(f"t2s: epochs {state['epoch']} steps {state['step']} best val {state['best_val']:.6f} "
          f"(epoch {state['best_epoch']})")
    return EXIT_OK


def acoustic_model_config(cfg, corpus) -> AcousticConfig:
    return pipeline.acoustic_config_for(corpus, variant=cfg.ac_variant, dim=cfg.ac_dim, layers=cfg.ac_layers,
                                        n_heads=cfg.ac_heads, emb_dim=cfg.ac_emb_dim, sigma_min=cfg.sigma_min,
                                        p_uncond=cfg.p_uncond)


def cmd_train_acoustic(cfg, args) -> int:
    corpus = load_corpus(cfg)
    if not corpus.dialogues:
        raise DataError("no featurized dialogues to train on")
    _seed_all(cfg.seed)
    mcfg = acoustic_model_config(cfg, corpus)
    model = AcousticModel(mcfg)
    prefix = f"acoustic-{cfg.ac_variant}"
    (Path(cfg.work_dir) / f"{prefix}.json").write_text(json.dumps(mcfg.to_dict(), indent=1, sort_keys=True))
    train, val = _split(pipeline.acoustic_examples(corpus, cfg.ac_variant), cfg.val_count)

    def loss_fn(m, batch, rng):
        return cfm_loss(m, draw_cfm_sample(m, batch, rng))

    @torch.no_grad()
    def val_fn(m):
        # same draw every epoch so validation losses are comparable
        rng = np.random.default_rng([cfg.seed, 1_000_003])
        return cfm_loss(m, draw_cfm_sample(m, val, rng, p_uncond=0.0)).item()

    state = fit(model, train, loss_fn, val_fn, epochs=cfg.ac_epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                seed=cfg.seed, out_dir=cfg.work_dir, prefix=prefix, resume=args.resume)
    print(f"{prefix}: epochs {state['epoch']} steps {state['step']} best val {state['best_val']:.6f} "
          f"(epoch {state['best_epoch']})")
    return EXIT_OK


# --- inference -------------------------------------------------------------------

def _load_model(work: Path, prefix: str, build):
    meta, ckpt = work / f"{prefix}.json", work / f"{prefix}.ckpt"
    if not meta.exists() or not ckpt.exists():
        raise DataError(f"{prefix} checkpoint not found in {work}; train it first")
    model = build(json.loads(meta.read_text()))
    load_model_tensors(model, load_archive(ckpt))
    model.eval()
    return model


def load_t2s(work: Path) -> T2SModel:
    return _load_model(work, "t2s", lambda d: T2SModel(T2SConfig(**d)))


def load_acoustic(work: Path, variant: str) -> AcousticModel:
    return _load_model(work, f"acoustic-{variant}", lambda d: AcousticModel(AcousticConfig(**d)))


def load_prompt(path, cb: Codebook) -> pipeline.Prompt:
    path = Path(path)
    if not path.exists():
        raise DataError(f"prompt {path} not found")
    if path.suffix == ".mel":
        mel = dsp.read_mel(path)
        return pipeline.Prompt(mel.values, speech_to_semantic(mel, cb).ids)
    chans = dsp.read_wav(path)
    return pipeline.make_prompt(chans[0], cb)


def _required_prompts(n: int, got: int, what: str):
    if got < n:
        need = ", ".join(f"stream {c} ({'first' if c == 0 else 'second'} speaker)" for c in range(n))
        raise DataError(f"missing prompt: {what} needs {n} prompt(s) [{need}], got {got}")


def _vocode(mel: np.ndarray, cfg, seed: int) -> dsp.Waveform:
    return dsp.griffin_lim(dsp.MelSpectrogram(mel), cfg.vocoder_iters, seed)


def generate_streams(t2s: T2SModel, text: str, vocab: Vocab, cfg, seed: int, silence_id: int) -> np.ndarray:
    """(frames, 2) semantic tokens for a serialized dialogue transcript.

    The single-stream model renders each turn on its own; turns then
    alternate between the two streams while the other stream is silent.
    """
    gen = torch.Generator().manual_seed(seed)
    if t2s.cfg.n_streams == 2:
        return t2s_generate(t2s, tokenize_text(text, vocab), cfg.max_frames, cfg.temperature, gen).as_array()
    turns = [t.strip() for t in text.split(SPKCHANGE)]
    parts = []
    for i, turn in enumerate(t for t in turns if t):
        ids = t2s_generate(t2s, tokenize_text(turn, vocab), cfg.max_frames, cfg.temperature, gen).as_array()[:, 0]
        block = np.full((len(ids), 2), silence_id, dtype=np.int64)
        block[:, i % 2] = ids
        parts.append(block)
    if not parts:
        raise DataError("empty transcript")
    return np.concatenate(parts)


def _render(ac: AcousticModel, streams: np.ndarray, prompts, silence_id: int, cfg, seed: int):
    if ac.cfg.variant == "single":
        mels = [pipeline.render_tokens(ac, streams[:, c:c + 1], [prompts[c]], silence_id, cfg.steps, cfg.alpha,
                                       seed)[0] for c in range(streams.shape[1])]
        return [pipeline.power_sum(mels)]
    return pipeline.render_tokens(ac, streams, prompts, silence_id, cfg.steps, cfg.alpha, seed)


def _write_outputs(out: Path, stem: str, mels, cfg, seed: int) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if len(mels) == 2:
        waves = []
        for c, m in enumerate(mels):
            dsp.write_mel(out / f"{stem}.ch{c}.mel", dsp.MelSpectrogram(m))
            waves.append(_vocode(m, cfg, seed))
            dsp.write_wav(out / f"{stem}.ch{c}.wav", [waves[-1]])
            written += [out / f"{stem}.ch{c}.mel", out / f"{stem}.ch{c}.wav"]
        mix_mel = pipeline.power_sum(mels)
        mix_wave = dsp.mix_waveforms(*waves)
    else:
        mix_mel = mels[0]
        mix_wave = _vocode(mix_mel, cfg, seed)
    dsp.write_mel(out / f"{stem}.mel", dsp.MelSpectrogram(mix_mel))
    dsp.write_wav(out / f"{stem}.wav", [mix_wave])
    return written + [out / f"{stem}.mel", out / f"{stem}.wav"]


def cmd_synth(cfg, args) -> int:
    work = _require_dir(cfg.work_dir, "work_dir")
    text = args.text if args.text is not None else Path(args.text_file).read_text().strip()
    cb = Codebook.load(work / "codebook.cdbk")
    vocab = Vocab.load(work / "vocab.txt")
    t2s, ac = load_t2s(work), load_acoustic(work, cfg.ac_variant)
    _required_prompts(2, len(args.prompt), "synthesis")
    prompts = [load_prompt(p, cb) for p in args.prompt[:2]]
    streams = generate_streams(t2s, text, vocab, cfg, cfg.seed, cb.silence_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for c in range(2):
        write_tokens(out / f"synth.ch{c}.sem", SemanticTokenStream(streams[:, c], cb.size, c))
    mels = _render(ac, streams, prompts, cb.silence_id, cfg, cfg.seed)
    paths = _write_outputs(out, "synth", mels, cfg, cfg.seed)
    print(f"synth: {len(streams)} frames -> {', '.join(p.name for p in paths)}")
    return EXIT_OK


def cmd_vc(cfg, args) -> int:
    work = _require_dir(cfg.work_dir, "work_dir")
    cb = Codebook.load(work / "codebook.cdbk")
    ac = load_acoustic(work, cfg.ac_variant)
    source = Path(args.source)
    if not source.exists():
        raise DataError(f"source {source} not found")
    chans = dsp.read_wav(source)
    _required_prompts(len(chans), len(args.prompt), "voice conversion")
    prompts = [load_prompt(p, cb) for p in args.prompt[:len(chans)]]
    mel, wave = pipeline.voice_convert(chans, prompts, cb, ac, cfg.steps, cfg.alpha, cfg.seed,
                                       vocoder_iters=cfg.vocoder_iters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dsp.write_mel(out / "vc.mel", mel)
    dsp.write_wav(out / "vc.wav", [wave])
    print(f"vc: {mel.n_frames} frames -> vc.mel, vc.wav")
    return EXIT_OK


# --- evaluation ------------------------------------------------------------------

def _load_spec(path: Path) -> dsp.MelSpectrogram:
    if path.suffix == ".mel":
        return dsp.read_mel(path)
    chans = dsp.read_wav(path)
    mix = chans[0]
    for c in chans[1:]:
        mix = dsp.mix_waveforms(mix, c)
    return dsp.mel_spectrogram(mix)


def _by_stem(folder: Path, suffixes) -> dict:
    out = {}
    for p in sorted(folder.iterdir()):
        if p.is_file() and p.suffix in suffixes:
            out.setdefault(p.name[:-len(p.suffix)], p)
    return out


def _side_report(folder: Path, edges) -> dict:
    annos = _by_stem(folder, {".jsonl"})
    events, laughs = [], []
    per = {}
    for stem, p in annos.items():
        utts = read_utterances_jsonl(p.read_text().splitlines())
        ev = extract_turn_events(SpeakerSegments.from_utterances(utts))
        events.append(ev)
        laughs.append([s for u in utts for s in u.laughter_spans])
        per[stem] = {k: ev.total(k) for k in KINDS}
    embs = {}
    for p in sorted(folder.glob("*.emb.npy")):
        embs[p.name[:-len(".emb.npy")]] = consistency_matrix(np.load(p)).tolist()
    rep = {"annotations": len(annos), "per_dialogue": per, "consistency": embs}
    if events:
        stats = turn_stats(events, edges)
        rep["turn_taking"] = {k: {"count": s.count, "mean": s.mean, "median": s.median,
                                  "hist": s.hist.tolist()} for k, s in stats.items()}
        ls = laughter_stats(laughs)
        rep["laughter"] = {"count": ls.count, "mean_duration": ls.mean_duration, "defined": ls.defined}
    return rep


def cmd_eval(cfg, args) -> int:
    hyp_dir, ref_dir = _require_dir(args.hyp, "hyp dir"), _require_dir(args.ref, "ref dir")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    edges = DEFAULT_EDGES
    hyp, ref = _by_stem(hyp_dir, {".mel", ".wav"}), _by_stem(ref_dir, {".mel", ".wav"})
    paired = sorted(set(hyp) & set(ref))
    unpaired = sorted(set(hyp) ^ set(ref))
    rows = []
    for stem in paired:
        r, h = _load_spec(ref[stem]), _load_spec(hyp[stem])
        rows.append((stem, mcd_dtw(r, h), r.n_frames, h.n_frames))
    with open(out / "mcd.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "mcd_dtw", "ref_frames", "hyp_frames"])
        for stem, v, nr, nh in rows:
            w.writerow([stem, repr(v), nr, nh])
    summary = {"pairs": len(rows), "unpaired": unpaired,
               "mcd_dtw_mean": float(np.mean([r[1] for r in rows])) if rows else None,
               "hyp": _side_report(hyp_dir, edges), "ref": _side_report(ref_dir, edges),
               "hist_edges": edges.tolist()}
    for side in ("hyp", "ref"):
        tt = summary[side].get("turn_taking")
        if not tt:
            continue
        with open(out / f"hist_{side}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "lo", "hi", "count"])
            for kind in KINDS:
                for lo, hi, n in zip(edges[:-1], edges[1:], tt[kind]["hist"]):
                    w.writerow([kind, repr(float(lo)), repr(float(hi)), n])
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    for stem in unpaired:
        print(f"unpaired, skipped: {stem}", file=sys.stderr)
    n_anno = summary["hyp"]["annotations"] + summary["ref"]["annotations"]
    if not rows and not n_anno:
        print("eval: nothing to evaluate", file=sys.stderr)
        return EXIT_DATA
    print(f"eval: {len(rows)} pairs, mean MCD-DTW "
          f"{summary['mcd_dtw_mean'] if rows else float('nan'):.4f} dB -> {out}")
    return EXIT_DATA if unpaired else EXIT_OK


# --- entry point ---------------------------------------------------------------

COMMANDS = {
    "prepare": cmd_prepare,
    "fit-codebook": cmd_fit_codebook,
    "train-t2s": cmd_train_t2s,
    "train-acoustic": cmd_train_acoustic,
    "synth": cmd_synth,
    "vc": cmd_vc,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--threads", type=int, help="CPU threads (default: $COVOMIX_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")
    sampling = _Parser(add_help=False)
    sampling.add_argument("--steps", type=int, help="ODE steps")
    sampling.add_argument("--alpha", type=float, help="guidance strength")
    variant = _Parser(add_help=False)
    variant.add_argument("--variant", choices=("single", "mix", "stereo"),
                         help="acoustic model variant (overrides ac_variant)")
    sampling.add_argument("--out", default="out", help="output directory")
    sampling.add_argument("--prompt", action="append", default=[],
                          help="speaker prompt (.wav or .mel), once per stream in order")

    p = _Parser(prog="covomix", description="Dialogue speech generation toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("prepare", parents=[common], help="segment transcripts and extract mels")
    sub.add_parser("fit-codebook", parents=[common], help="fit k-means units and tokenize")
    for name, parents in (("train-t2s", [common]), ("train-acoustic", [common, variant])):
        sp = sub.add_parser(name, parents=parents, help=f"train the {name[6:]} model")
        sp.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    sp = sub.add_parser("synth", parents=[common, sampling, variant], help="text to dialogue audio")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--text")
    g.add_argument("--text-file")
    sp = sub.add_parser("vc", parents=[common, sampling, variant], help="voice conversion")
    sp.add_argument("--source", required=True, help="source WAV, one channel per speaker")
    sp = sub.add_parser("eval", parents=[common], help="metric reports")
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--out", default="report")
    return p


def resolve_config(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    cfg = cfgmod.apply_overrides(cfg, args.set)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    for key in ("steps", "alpha"):
        if getattr(args, key, None) is not None:
            kw[key] = getattr(args, key)
    if getattr(args, "variant", None):
        kw["ac_variant"] = args.variant
    try:
        return cfg.replace(**kw) if kw else cfg
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def set_threads(n: int | None) -> None:
    if n is None and os.environ.get("COVOMIX_THREADS"):
        try:
            n = int(os.environ["COVOMIX_THREADS"])
        except ValueError as exc:
            raise UsageError(f"COVOMIX_THREADS must be an integer, got {os.environ['COVOMIX_THREADS']!r}") from exc
    if n is not None:
        if n < 1:
            raise UsageError("--threads must be >= 1")
        torch.set_num_threads(n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        set_threads(args.threads)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"covomix: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"covomix: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"covomix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
