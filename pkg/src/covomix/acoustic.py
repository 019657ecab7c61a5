"""Flow-matching acoustic model: VoSingle, VoMix and VoMix-stereo.

All mel tensors are (frames, n_mels) per channel; batched model inputs
are (batch, frames, features).  The model works on normalized log-mels,
x_norm = (x - mel_mean) / mel_std, and the public sampling functions
take and return raw log-mels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .dsp import MelSpectrogram
from .errors import DimensionError
from .nn import AdaRMSNorm, Linear, TransformerBlock, timestep_embedding

VARIANTS = ("single", "mix", "stereo")


@dataclass
class AcousticConfig:
    semantic_vocab: int = 64
    variant: str = "mix"
    n_mels: int = 80
    dim: int = 1024
    layers: int = 8
    n_heads: int = 8
    emb_dim: int = 64
    sigma_min: float = 1e-4
    p_uncond: float = 0.3
    mel_mean: float = 0.0
    mel_std: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown acoustic variant {self.variant!r}")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ValueError("p_uncond must lie in [0, 1]")
        if self.mel_std <= 0:
            raise ValueError("mel_std must be positive")

    @property
    def n_ctx(self) -> int:
        """Number of speaker channels conditioning the model."""
        return 1 if self.variant == "single" else 2

    @property
    def n_out(self) -> int:
        """Number of mel channels generated."""
        return 2 if self.variant == "stereo" else 1

    def to_dict(self):
        return asdict(self)


@dataclass
class GuidanceConfig:
    p_uncond: float = 0.3
    alpha: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ValueError("p_uncond must lie in [0, 1]")


class AcousticModel(nn.Module):
    """Transformer encoder over frame-wise [w | m_ctx | s_emb] with AdaRMSNorm time conditioning."""

    def __init__(self, cfg: AcousticConfig):
        super().__init__()
        self.cfg = cfg
        state = cfg.n_out * cfg.n_mels
        d_in = state + cfg.n_ctx * (cfg.n_mels + cfg.emb_dim)
        self.sem_emb = nn.Embedding(cfg.semantic_vocab, cfg.emb_dim)
        nn.init.uniform_(self.sem_emb.weight, -1.0, 1.0)
        self.input = Linear(d_in, cfg.dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.dim, cfg.n_heads, time_dim=cfg.dim) for _ in range(cfg.layers)
        )
        self.final_norm = AdaRMSNorm(cfg.dim, cfg.dim)
        self.output = Linear(cfg.dim, state, zero_init=True)

    def normalize(self, x):
        return (x - self.cfg.mel_mean) / self.cfg.mel_std

    def denormalize(self, x):
        return x * self.cfg.mel_std + self.cfg.mel_mean

    def velocity(self, w, t, m_ctx, tokens, frame_pad=None, drop=None):
        """Predicted vector field.

        w (B, T, n_out*n_mels) flow state; t (B,) flow times; m_ctx
        (B, T, n_ctx*n_mels) normalized context, already zero on masked
        frames; tokens (B, T, n_ctx) semantic ids; drop (B,) bool replaces
        both m_ctx and the semantic embeddings by zeros.
        """
        cfg = self.cfg
        if w.shape[-1] != cfg.n_out * cfg.n_mels:
            raise DimensionError("flow state width", cfg.n_out * cfg.n_mels, w.shape[-1])
        if tokens.shape[-1] != cfg.n_ctx or m_ctx.shape[-1] != cfg.n_ctx * cfg.n_mels:
            raise DimensionError("context channels", cfg.n_ctx, (m_ctx.shape[-1], tokens.shape[-1]))
        s_emb = self.sem_emb(tokens).flatten(-2)
        if drop is not None:
            keep = (~drop).to(w.dtype)[:, None, None]
            m_ctx = m_ctx * keep
            s_emb = s_emb * keep
        x = self.input(torch.cat([w, m_ctx, s_emb], dim=-1))
        temb = timestep_embedding(t.to(w.dtype), cfg.dim)
        for blk in self.blocks:
            x = blk(x, time_emb=temb, key_padding_mask=frame_pad)
        return self.output(self.final_norm(x, temb))


def sample_flow_point(m, m0, t, sigma_min: float = 1e-4):
    """w = (1 - (1 - sigma_min) t) m0 + t m, with t broadcast over trailing dims."""
    if m.shape != m0.shape:
        raise DimensionError("flow endpoints", tuple(m.shape), tuple(m0.shape))
    t_arr = t if isinstance(t, (torch.Tensor, np.ndarray)) else np.asarray(t, dtype=float)
    if (t_arr < 0).any() or (t_arr > 1).any():
        raise ValueError("flow time t must lie in [0, 1]")
    if isinstance(t, (torch.Tensor, np.ndarray)) and t.ndim:
        t = t.reshape(t.shape + (1,) * (m.ndim - t.ndim))
    # (1 - t) + sigma t equals 1 - (1 - sigma) t but is exact at both endpoints
    return ((1 - t) + sigma_min * t) * m0 + t * m


def flow_target(m, m0, sigma_min: float = 1e-4):
    return m - (1 - sigma_min) * m0


def guided_field(v_cond, v_uncond, alpha: float):
    if v_cond.shape != v_uncond.shape:
        raise DimensionError("guided field inputs", tuple(v_cond.shape), tuple(v_uncond.shape))
    return (1 + alpha) * v_cond - alpha * v_uncond


def make_training_mask(frames: int, rng: np.random.Generator, fraction: float | None = None) -> np.ndarray:
    """One contiguous masked span covering ~Uniform(0.7, 1.0) of the frames."""
    if frames < 2:
        raise ValueError("need at least 2 frames to mask")
    if fraction is None:
        fraction = float(rng.uniform(0.7, 1.0))
    n = int(round(fraction * frames))
    n = max(1, min(frames, n))
    if fraction < 1.0:
        n = min(n, frames - 1)
    start = int(rng.integers(0, frames - n + 1))
    mask = np.zeros(frames, dtype=bool)
    mask[start:start + n] = True
    return mask


@dataclass
class CfmExample:
    """One training dialogue: target mel(s), per-speaker mels and tokens.

    target (n_out, T, n_mels); channels (n_ctx, T, n_mels); tokens (T, n_ctx).
    All arrays are raw log-mels.
    """

    target: np.ndarray
    channels: np.ndarray
    tokens: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.target.shape[1]


@dataclass
class CfmSample:
    """A drawn training batch, already normalized and padded."""

    t: torch.Tensor        # (B,)
    m0: torch.Tensor       # (B, T, n_out*n_mels)
    m: torch.Tensor        # (B, T, n_out*n_mels)
    mask: torch.Tensor     # (B, T) bool, masked (to predict) frames
    m_ctx: torch.Tensor    # (B, T, n_ctx*n_mels)
    tokens: torch.Tensor   # (B, T, n_ctx)
    frame_pad: torch.Tensor  # (B, T) bool
    drop: torch.Tensor     # (B,) bool


def _flat_channels(arr: np.ndarray) -> np.ndarray:
    """(ch, T, n_mels) -> (T, ch * n_mels)."""
    return np.concatenate(list(arr), axis=-1)


def draw_cfm_sample(model: AcousticModel, examples, rng: np.random.Generator, p_uncond: float | None = None,
                    masks=None, dtype=torch.float32) -> CfmSample:
    """Draw t, noise, masks and guidance drops for a batch of examples."""
    cfg = model.cfg
    p_uncond = cfg.p_uncond if p_uncond is None else p_uncond
    B = len(examples)
    T = max(e.n_frames for e in examples)
    S, X = cfg.n_out * cfg.n_mels, cfg.n_ctx * cfg.n_mels
    m = np.zeros((B, T, S))
    ctx = np.zeros((B, T, X))
    tokens = np.zeros((B, T, cfg.n_ctx), dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    pad = np.ones((B, T), dtype=bool)
    for i, e in enumerate(examples):
        n = e.n_frames
        if e.target.shape[0] != cfg.n_out or e.channels.shape[0] != cfg.n_ctx:
            raise DimensionError("example channels", (cfg.n_out, cfg.n_ctx), (e.target.shape[0], e.channels.shape[0]))
        mk = masks[i] if masks is not None else make_training_mask(n, rng)
        m[i, :n] = _flat_channels(model.normalize(e.target))
        ctx[i, :n] = _flat_channels(model.normalize(e.channels)) * (~mk)[:, None]
        tokens[i, :n] = e.tokens
        mask[i, :n] = mk
        pad[i, :n] = False
    t = rng.uniform(0.0, 1.0, size=B)
    m0 = rng.standard_normal((B, T, S)) * (~pad)[..., None]
    drop = rng.random(B) < p_uncond
    as_t = lambda a: torch.as_tensor(a, dtype=dtype)  # noqa: E731
    return CfmSample(as_t(t), as_t(m0), as_t(m), torch.from_numpy(mask), as_t(ctx),
                     torch.from_numpy(tokens), torch.from_numpy(pad), torch.from_numpy(drop))


def cfm_loss(model: AcousticModel, batch: CfmSample, sigma_min: float | None = None, return_parts=False):
    """Masked flow-matching regression loss.

    Per example: squared error between the straight-path velocity and the
    model field, summed over masked frames and mel bins, divided by the
    number of masked elements; then averaged over the batch.
    """
    sigma_min = model.cfg.sigma_min if sigma_min is None else sigma_min
    if not bool(batch.mask.any(dim=1).all()):
        raise ValueError("every example needs at least one masked frame")
    w = sample_flow_point(batch.m, batch.m0, batch.t, sigma_min)
    v = model.velocity(w, batch.t, batch.m_ctx, batch.tokens, batch.frame_pad, batch.drop)
    return masked_flow_error(v, batch, sigma_min, return_parts)


def masked_flow_error(v, batch: CfmSample, sigma_min: float, return_parts=False):
    resid = flow_target(batch.m, batch.m0, sigma_min) - v
    mk = batch.mask.to(resid.dtype)[..., None]
    per_example = (mk * resid ** 2).sum(dim=(1, 2)) / (mk.sum(dim=(1, 2)) * resid.shape[-1])
    loss = per_example.mean()
    return (loss, per_example) if return_parts else loss


def zero_field_loss(batch: CfmSample, sigma_min: float = 1e-4):
    """Loss of the field v = 0 on the same draw (the regression baseline)."""
    return masked_flow_error(torch.zeros_like(batch.m), batch, sigma_min)


# --- sampling ---------------------------------------------------------------

def integrate_flow(field, x0, steps: int = 32, method: str = "euler", project=None):
    """Integrate dx/dt = field(x, t) from t=0 to 1 with fixed steps.

    project(x, t), when given, is applied after every step (and at t=0)
    to pin known components.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if method not in ("euler", "midpoint"):
        raise ValueError(f"unknown ODE method {method!r}")
    h = 1.0 / steps
    x = x0 if project is None else project(x0, 0.0)
    for k in range(steps):
        t = k * h
        if method == "euler":
            x = x + h * field(x, t)
        else:
            mid = x + 0.5 * h * field(x, t)
            if project is not None:
                mid = project(mid, t + 0.5 * h)
            x = x + h * field(mid, t + 0.5 * h)
        if project is not None:
            x = project(x, (k + 1) * h)
    return x


def default_output_context(cfg: AcousticConfig, m_ctx: np.ndarray) -> np.ndarray:
    """Known output-space context from the per-speaker prompts.

    For the mixed variant the prompt mels are power-summed, which equals
    the mixture's mel when the prompts do not overlap in time.
    """
    if cfg.variant == "mix":
        return np.logaddexp(m_ctx[0], m_ctx[1])[None]
    return m_ctx


@torch.no_grad()
def ode_sample(model: AcousticModel, tokens, m_ctx, mask, steps: int = 32, alpha: float = 0.7,
               seed: int = 0, method: str = "euler", out_ctx=None) -> list[MelSpectrogram]:
    """Generate mel(s) for the masked frames, keeping the prompt frames.

    tokens (T, n_ctx) ids; m_ctx (n_ctx, T, n_mels) raw per-speaker mels
    (values on masked frames are ignored); mask (T,) bool.  out_ctx
    (n_out, T, n_mels) is the known output on unmasked frames; by default
    it is derived from m_ctx.  Returns n_out mel spectrograms.
    """
    cfg = model.cfg
    if steps < 1:
        raise ValueError("steps must be >= 1")
    tokens = np.asarray(tokens)
    m_ctx = np.asarray(m_ctx, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    T = len(mask)
    if tokens.shape != (T, cfg.n_ctx) or m_ctx.shape != (cfg.n_ctx, T, cfg.n_mels):
        raise DimensionError("ode_sample inputs", ((T, cfg.n_ctx), (cfg.n_ctx, T, cfg.n_mels)),
                             (tokens.shape, m_ctx.shape))
    if out_ctx is None:
        out_ctx = default_output_context(cfg, m_ctx)
    out_ctx = np.asarray(out_ctx, dtype=np.float64)
    dtype = next(model.parameters()).dtype
    keep = ~mask
    ctx_in = torch.as_tensor(_flat_channels(model.normalize(m_ctx)) * keep[:, None], dtype=dtype)[None]
    known = torch.as_tensor(_flat_channels(model.normalize(out_ctx)), dtype=dtype)[None]
    tok = torch.as_tensor(tokens)[None]
    gen = np.random.default_rng(seed)
    x0 = torch.as_tensor(gen.standard_normal((1, T, cfg.n_out * cfg.n_mels)), dtype=dtype)
    keep_t = torch.as_tensor(keep)[None, :, None]
    sigma = cfg.sigma_min
    was_training = model.training
    model.eval()

    def field(x, t):
        tt = torch.full((1,), t, dtype=dtype)
        v_cond = model.velocity(x, tt, ctx_in, tok)
        if alpha == 0:
            return v_cond
        v_unc = model.velocity(x, tt, ctx_in, tok, drop=torch.ones(1, dtype=torch.bool))
        return guided_field(v_cond, v_unc, alpha)

    def project(x, t):
        # prompt frames follow the noise-to-context path used in training
        return torch.where(keep_t, sample_flow_point(known, x0, t, sigma), x)

    x1 = integrate_flow(field, x0, steps, method, project if keep.any() else None)
    model.train(was_training)
    out = model.denormalize(x1[0].double().numpy())
    mels = []
    for c in range(cfg.n_out):
        vals = out[:, c * cfg.n_mels:(c + 1) * cfg.n_mels].copy()
        vals[keep] = out_ctx[c][keep]
        mels.append(MelSpectrogram(vals))
    return mels
