"""Transformer building blocks and optimizer shared by both models.

Autograd comes from torch; everything above raw tensor ops (rotary
attention, adaptive RMSNorm, the block itself, Adam) is written here so
the math stays visible and testable against plain-loop references.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import DimensionError, NumericalError


def init_uniform_(weight: torch.Tensor, fan_in: int, generator=None) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)
    return weight


class Linear(nn.Module):
    """Affine map with fan-in scaled uniform init (or zeros)."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True, zero_init: bool = False):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.weight = nn.Parameter(torch.empty(d_out, d_in))
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None
        if zero_init:
            nn.init.zeros_(self.weight)
        else:
            init_uniform_(self.weight, d_in)

    def forward(self, x):
        if x.shape[-1] != self.d_in:
            raise DimensionError("linear input features", self.d_in, x.shape[-1])
        y = x @ self.weight.T
        if self.bias is not None:
            y = y + self.bias
        return y


def rms_norm(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + eps)


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        return rms_norm(x, self.eps) * self.weight


class AdaRMSNorm(nn.Module):
    """RMSNorm whose scale and shift are linear functions of a time embedding.

    out = (1 + scale(t)) * rms_norm(x) + shift(t)
    """

    def __init__(self, dim: int, time_dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.to_scale_shift = Linear(time_dim, 2 * dim, zero_init=True)

    def forward(self, x, time_emb):
        scale, shift = self.to_scale_shift(time_emb).chunk(2, dim=-1)
        # time_emb is (batch, time_dim); broadcast over frames
        scale = scale.unsqueeze(-2)
        shift = shift.unsqueeze(-2)
        return (1 + scale) * rms_norm(x, self.eps) + shift


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features of flow time t in [0, 1], shape (..., dim)."""
    t = torch.as_tensor(t)
    if not t.is_floating_point():
        t = t.to(torch.get_default_dtype())
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half).to(t.dtype)
    # scale so that t in [0,1] spans many periods of the fastest frequency
    args = 1000.0 * t.unsqueeze(-1) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


def rotary_tables(n_pos: int, head_dim: int, base: float = 10000.0, dtype=torch.float32):
    if head_dim % 2:
        raise DimensionError("rotary head dim (must be even)", "even", head_dim)
    inv_freq = base ** (-torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim)
    angles = torch.arange(n_pos, dtype=torch.float64)[:, None] * inv_freq[None, :]
    return torch.cos(angles).to(dtype), torch.sin(angles).to(dtype)


def apply_rotary(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate (first half, second half) feature pairs of x by position angles.

    x is (..., frames, head_dim); cos/sin are (frames, head_dim // 2).
    """
    x1, x2 = x.chunk(2, dim=-1)
    return torch.cat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int, rotary: bool = True):
        super().__init__()
        if dim % n_heads:
            raise DimensionError("model dim divisible by head count", f"multiple of {n_heads}", dim)
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.rotary = rotary
        self.q = Linear(dim, dim)
        self.k = Linear(dim, dim)
        self.v = Linear(dim, dim)
        self.out = Linear(dim, dim)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x, memory=None, causal=False, key_padding_mask=None):
        """key_padding_mask: (batch, keys) bool, True marks padding."""
        src = x if memory is None else memory
        q = self._split(self.q(x))
        k = self._split(self.k(src))
        v = self._split(self.v(src))
        if self.rotary and memory is None:
            cos, sin = rotary_tables(x.shape[1], self.head_dim, dtype=x.dtype)
            q = apply_rotary(q, cos, sin)
            k = apply_rotary(k, cos, sin)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        n_q, n_k = scores.shape[-2], scores.shape[-1]
        blocked = torch.zeros(n_q, n_k, dtype=torch.bool)
        if causal:
            blocked = torch.triu(torch.ones(n_q, n_k, dtype=torch.bool), diagonal=1)
        blocked = blocked[None, None]
        if key_padding_mask is not None:
            blocked = blocked | key_padding_mask[:, None, None, :]
        scores = scores.masked_fill(blocked, float("-inf"))
        # rows with every key blocked (padding queries) would give NaN
        all_blocked = blocked.all(-1, keepdim=True)
        scores = scores.masked_fill(all_blocked, 0.0)
        attn = torch.softmax(scores, dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], self.dim)
        return self.out(y)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4):
        super().__init__()
        self.up = Linear(dim, mult * dim)
        self.down = Linear(mult * dim, dim)

    def forward(self, x):
        return self.down(torch.nn.functional.gelu(self.up(x)))


class TransformerBlock(nn.Module):
    """Pre-norm block: self-attention, optional cross-attention, feed-forward.

    With time_dim set, every norm is an AdaRMSNorm driven by the time
    embedding passed to forward.
    """

    def __init__(self, dim: int, n_heads: int, cross_attention: bool = False,
                 time_dim: int | None = None, ff_mult: int = 4):
        super().__init__()
        self.dim = dim
        self.time_dim = time_dim

        def norm():
            return AdaRMSNorm(dim, time_dim) if time_dim else RMSNorm(dim)

        self.norm_attn = norm()
        self.attn = MultiHeadAttention(dim, n_heads)
        self.cross = cross_attention
        if cross_attention:
            self.norm_cross = norm()
            self.cross_attn = MultiHeadAttention(dim, n_heads, rotary=False)
        self.norm_ff = norm()
        self.ff = FeedForward(dim, ff_mult)

    def _norm(self, layer, x, time_emb):
        return layer(x, time_emb) if self.time_dim else layer(x)

    def forward(self, x, time_emb=None, causal=False, key_padding_mask=None,
                memory=None, memory_padding_mask=None):
        if x.dim() != 3 or x.shape[-1] != self.dim:
            raise DimensionError("block input (batch, frames, dim)", f"(*, *, {self.dim})", tuple(x.shape))
        if self.time_dim and time_emb is None:
            raise DimensionError("time embedding", f"(batch, {self.time_dim})", None)
        h = self._norm(self.norm_attn, x, time_emb)
        x = x + self.attn(h, causal=causal, key_padding_mask=key_padding_mask)
        if self.cross:
            h = self._norm(self.norm_cross, x, time_emb)
            x = x + self.cross_attn(h, memory=memory, key_padding_mask=memory_padding_mask)
        h = self._norm(self.norm_ff, x, time_emb)
        return x + self.ff(h)

    def zero_output_projections_(self):
        with torch.no_grad():
            for layer in [self.attn.out, self.ff.down] + ([self.cross_attn.out] if self.cross else []):
                layer.weight.zero_()
                layer.bias.zero_()
        return self


def forward_transformer_block(x, block: TransformerBlock, time_cond=None, causal=False):
    """Apply one block to an unbatched (frames, dim) input.

    time_cond is a scalar flow time; it is embedded sinusoidally at the
    block's time width.
    """
    if x.dim() != 2:
        raise DimensionError("block input (frames, dim)", 2, x.dim())
    time_emb = None
    if time_cond is not None:
        t = torch.as_tensor(time_cond, dtype=x.dtype).reshape(1)
        time_emb = timestep_embedding(t, block.time_dim)
    return block(x[None], time_emb=time_emb, causal=causal)[0]


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, lr: float | None = None, state: AdamState | None = None) -> AdamState:
    """One bias-corrected Adam update, applied in place to params.

    Parameters whose gradient is None are skipped.
    """
    state = state if state is not None else AdamState()
    lr = state.lr if lr is None else lr
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {name!r} at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if p.shape != g.shape:
                raise DimensionError(f"gradient for {name!r}", tuple(p.shape), tuple(g.shape))
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + state.eps))
    return state


class Adam:
    """Thin optimizer wrapper around adam_step for an nn.Module."""

    def __init__(self, module: nn.Module, lr: float = 1e-4, **kw):
        self.module = module
        self.state = AdamState(lr=lr, **kw)

    def step(self):
        params = dict(self.module.named_parameters())
        grads = {k: p.grad for k, p in params.items()}
        adam_step(params, grads, state=self.state)

    def zero_grad(self):
        for p in self.module.parameters():
            p.grad = None

    def state_tensors(self) -> dict:
        out = {"adam.step": torch.tensor(float(self.state.step))}
        for k, m in self.state.m.items():
            out[f"adam.m.{k}"] = m
            out[f"adam.v.{k}"] = self.state.v[k]
        return out

    def load_state_tensors(self, tensors: dict):
        params = dict(self.module.named_parameters())
        self.state.step = int(tensors["adam.step"].item())
        self.state.m = {}
        self.state.v = {}
        for k, p in params.items():
            if f"adam.m.{k}" in tensors:
                self.state.m[k] = torch.as_tensor(tensors[f"adam.m.{k}"], dtype=p.dtype).clone()
                self.state.v[k] = torch.as_tensor(tensors[f"adam.v.{k}"], dtype=p.dtype).clone()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
