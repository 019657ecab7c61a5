"""Multi-stream text-to-semantic model (CoMix) and its single-stream variant (CoSingle)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import DimensionError
from .nn import Linear, RMSNorm, TransformerBlock, init_uniform_
from .tokenizer import SemanticTokenStream, TextTokenSeq

IGNORE = -1


@dataclass
class T2SConfig:
    text_vocab: int
    semantic_vocab: int = 64
    n_streams: int = 2
    variant: str = "mix"  # "mix" (split head) or "single" (plain head, one stream)
    enc_layers: int = 4
    dec_layers: int = 4
    enc_dim: int = 512
    dec_dim: int = 1024
    n_heads: int = 8
    silence_id: int = 0
    stop_run: int = 25

    def __post_init__(self):
        if self.variant not in ("mix", "single"):
            raise ValueError(f"unknown t2s variant {self.variant!r}")
        if self.variant == "single" and self.n_streams != 1:
            raise ValueError("the single-stream variant has exactly one stream")
        if self.dec_dim % self.n_streams:
            raise DimensionError("dec_dim divisible by stream count", f"multiple of {self.n_streams}", self.dec_dim)

    @property
    def bos_id(self) -> int:
        return self.semantic_vocab

    def to_dict(self):
        return asdict(self)


def cosingle_config(text_vocab, **kw) -> T2SConfig:
    kw.setdefault("dec_dim", 512)
    return T2SConfig(text_vocab, n_streams=1, variant="single", **kw)


def comix_config(text_vocab, **kw) -> T2SConfig:
    return T2SConfig(text_vocab, variant="mix", **kw)


@dataclass
class StreamPair:
    streams: list[SemanticTokenStream]

    def __post_init__(self):
        lengths = {len(s) for s in self.streams}
        if len(lengths) > 1:
            raise DimensionError("stream lengths", "all equal", sorted(lengths))

    def __len__(self):
        return len(self.streams[0]) if self.streams else 0

    @property
    def n_streams(self) -> int:
        return len(self.streams)

    def as_array(self) -> np.ndarray:
        """(frames, streams) int array."""
        return np.stack([s.ids for s in self.streams], axis=1)

    @classmethod
    def from_array(cls, arr, vocab_size: int) -> "StreamPair":
        arr = np.asarray(arr)
        return cls([SemanticTokenStream(arr[:, c], vocab_size, c) for c in range(arr.shape[1])])


class SplitHead(nn.Module):
    """Final projection that splits the hidden vector into one chunk per stream.

    Chunk c (width dim / C) is mapped to K logits for stream c.
    """

    def __init__(self, dim: int, n_streams: int, vocab: int, zero_init: bool = False):
        super().__init__()
        self.n_streams = n_streams
        self.chunk = dim // n_streams
        self.weight = nn.Parameter(torch.empty(n_streams, vocab, self.chunk))
        self.bias = nn.Parameter(torch.zeros(n_streams, vocab))
        if zero_init:
            nn.init.zeros_(self.weight)
        else:
            for c in range(n_streams):
                init_uniform_(self.weight.data[c], self.chunk)

    def forward(self, h):
        b, n, _ = h.shape
        chunks = h.view(b, n, self.n_streams, self.chunk)
        return torch.einsum("bncd,ckd->bnck", chunks, self.weight) + self.bias


class T2SModel(nn.Module):
    """Encoder-decoder with rotary self-attention and a per-stream output head.

    forward returns logits of shape (batch, frames, streams, K).
    """

    def __init__(self, cfg: T2SConfig, zero_head: bool = False):
        super().__init__()
        self.cfg = cfg
        C, K = cfg.n_streams, cfg.semantic_vocab
        self.text_emb = nn.Embedding(cfg.text_vocab, cfg.enc_dim)
        nn.init.uniform_(self.text_emb.weight, -1.0, 1.0)
        self.encoder = nn.ModuleList(TransformerBlock(cfg.enc_dim, cfg.n_heads) for _ in range(cfg.enc_layers))
        self.enc_norm = RMSNorm(cfg.enc_dim)
        self.memory_proj = Linear(cfg.enc_dim, cfg.dec_dim) if cfg.enc_dim != cfg.dec_dim else None
        # one table per stream; index K is the BOS token
        self.token_emb = nn.ModuleList(nn.Embedding(K + 1, cfg.dec_dim) for _ in range(C))
        for emb in self.token_emb:
            nn.init.uniform_(emb.weight, -1.0, 1.0)
        self.fuse = Linear(C * cfg.dec_dim, cfg.dec_dim) if C > 1 else None
        self.decoder = nn.ModuleList(
            TransformerBlock(cfg.dec_dim, cfg.n_heads, cross_attention=True) for _ in range(cfg.dec_layers)
        )
        self.dec_norm = RMSNorm(cfg.dec_dim)
        if cfg.variant == "single":
            self.head = Linear(cfg.dec_dim, K, zero_init=zero_head)
        else:
            self.head = SplitHead(cfg.dec_dim, C, K, zero_init=zero_head)

    def encode(self, text_ids, text_pad=None):
        x = self.text_emb(text_ids)
        for blk in self.encoder:
            x = blk(x, key_padding_mask=text_pad)
        x = self.enc_norm(x)
        return self.memory_proj(x) if self.memory_proj is not None else x

    def decode(self, memory, dec_in, text_pad=None, frame_pad=None):
        """dec_in: (batch, frames, streams) previous-token ids."""
        if dec_in.shape[-1] != self.cfg.n_streams:
            raise DimensionError("decoder input streams", self.cfg.n_streams, dec_in.shape[-1])
        embs = [emb(dec_in[..., c]) for c, emb in enumerate(self.token_emb)]
        x = self.fuse(torch.cat(embs, dim=-1)) if self.fuse is not None else embs[0]
        for blk in self.decoder:
            x = blk(x, causal=True, key_padding_mask=frame_pad, memory=memory, memory_padding_mask=text_pad)
        h = self.dec_norm(x)
        logits = self.head(h)
        if self.cfg.variant == "single":
            logits = logits.unsqueeze(2)
        return logits

    def forward(self, text_ids, dec_in, text_pad=None, frame_pad=None):
        return self.decode(self.encode(text_ids, text_pad), dec_in, text_pad, frame_pad)


def shift_right(targets: np.ndarray, bos: int) -> np.ndarray:
    """(frames, streams) targets -> decoder inputs with BOS at frame 0."""
    out = np.empty_like(targets)
    out[0] = bos
    out[1:] = targets[:-1]
    return out


@dataclass
class T2SBatch:
    text: torch.Tensor       # (B, Lt)
    text_pad: torch.Tensor   # (B, Lt) bool, True = pad
    dec_in: torch.Tensor     # (B, T, C)
    targets: torch.Tensor    # (B, T, C), IGNORE at padding
    frame_pad: torch.Tensor  # (B, T) bool


def collate(examples, bos: int, text_pad_id: int = 0) -> T2SBatch:
    """examples: sequence of (text ids, (frames, streams) target array)."""
    B = len(examples)
    Lt = max(len(t) for t, _ in examples)
    T = max(len(s) for _, s in examples)
    C = examples[0][1].shape[1]
    text = np.full((B, Lt), text_pad_id, dtype=np.int64)
    text_pad = np.ones((B, Lt), dtype=bool)
    dec_in = np.full((B, T, C), bos, dtype=np.int64)
    targets = np.full((B, T, C), IGNORE, dtype=np.int64)
    frame_pad = np.ones((B, T), dtype=bool)
    for i, (t, s) in enumerate(examples):
        s = np.asarray(s)
        if s.ndim != 2 or s.shape[1] != C:
            raise DimensionError("target streams", f"(frames, {C})", s.shape)
        text[i, :len(t)] = t
        text_pad[i, :len(t)] = False
        dec_in[i, :len(s)] = shift_right(s, bos)
        targets[i, :len(s)] = s
        frame_pad[i, :len(s)] = False
    return T2SBatch(*(torch.from_numpy(a) for a in (text, text_pad, dec_in, targets, frame_pad)))


def t2s_forward(model: T2SModel, text: TextTokenSeq, teacher: StreamPair) -> torch.Tensor:
    """Teacher-forced logits for one example, shape (frames, streams, K)."""
    batch = collate([(text.ids, teacher.as_array())], model.cfg.bos_id, text.vocab.pad_id)
    return model(batch.text, batch.dec_in, batch.text_pad, batch.frame_pad)[0]


def t2s_loss(logits: torch.Tensor, targets: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Negative log-likelihood summed over streams and frames.

    logits (..., frames, streams, K); targets (..., frames, streams) with
    IGNORE marking padding.  "mean" divides by the number of non-padding
    (frame, stream) targets.
    """
    if logits.shape[:-1] != targets.shape:
        raise DimensionError("logits vs targets", tuple(targets.shape), tuple(logits.shape[:-1]))
    logp = torch.log_softmax(logits, dim=-1)
    valid = targets != IGNORE
    picked = logp.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    nll = -(picked * valid).sum()
    if reduction == "sum":
        return nll
    return nll / valid.sum().clamp(min=1)


def teacher_forced_accuracy(logits, targets) -> float:
    valid = targets != IGNORE
    hits = (logits.argmax(-1) == targets) & valid
    return float(hits.sum()) / max(1, int(valid.sum()))


@torch.no_grad()
def t2s_generate(model: T2SModel, text: TextTokenSeq, max_frames: int, temperature: float = 0.0,
                 generator: torch.Generator | None = None) -> StreamPair:
    """Autoregressive decoding, all streams advancing one frame per step.

    temperature 0 is greedy.  Decoding stops after max_frames or once every
    stream has produced cfg.stop_run consecutive silence tokens.
    """
    if max_frames <= 0:
        raise ValueError("max_frames must be positive")
    cfg = model.cfg
    was_training = model.training
    model.eval()
    text_ids = torch.as_tensor(text.ids)[None]
    memory = model.encode(text_ids)
    dec_in = torch.full((1, 1, cfg.n_streams), cfg.bos_id, dtype=torch.long)
    out = []
    silent_run = 0
    for _ in range(max_frames):
        logits = model.decode(memory, dec_in)[0, -1]  # (C, K)
        if temperature > 0:
            probs = torch.softmax(logits / temperature, dim=-1)
            nxt = torch.multinomial(probs, 1, generator=generator).squeeze(-1)
        else:
            nxt = logits.argmax(-1)
        out.append(nxt.numpy().copy())
        silent_run = silent_run + 1 if bool((nxt == cfg.silence_id).all()) else 0
        if silent_run >= cfg.stop_run:
            break
        dec_in = torch.cat([dec_in, nxt.view(1, 1, -1)], dim=1)
    model.train(was_training)
    return StreamPair.from_array(np.array(out), cfg.semantic_vocab)


def with_silence_streams(pair: StreamPair, n_streams: int, silence_id: int) -> StreamPair:
    """Pad a single-stream result with all-silence streams for a multi-stream acoustic model."""
    arr = pair.as_array()
    extra = np.full((len(arr), n_streams - arr.shape[1]), silence_id, dtype=np.int64)
    return StreamPair.from_array(np.concatenate([arr, extra], axis=1), pair.streams[0].vocab_size)


def uniform_loss(K: int) -> float:
    return math.log(K)
