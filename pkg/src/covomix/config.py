"""Flat key=value run configuration shared by all CLI commands."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import DataError


@dataclass
class RunConfig:
    data_dir: str = "data"
    work_dir: str = "work"
    seed: int = 0
    # data preparation
    max_duration: float = 40.0
    min_monologue_s: float = 10.0
    min_short_monologue_s: float = 1.0
    lead_s: float = 0.1
    tail_s: float = 0.5
    codebook_size: int = 64
    # text-to-semantic
    t2s_variant: str = "mix"
    t2s_enc_layers: int = 4
    t2s_dec_layers: int = 4
    t2s_enc_dim: int = 512
    t2s_dec_dim: int = 1024
    t2s_heads: int = 8
    t2s_epochs: int = 10
    # acoustic
    ac_variant: str = "mix"
    ac_dim: int = 1024
    ac_layers: int = 8
    ac_heads: int = 8
    ac_emb_dim: int = 64
    ac_epochs: int = 100
    # optimisation
    lr: float = 1e-4
    batch_size: int = 8
    val_count: int = 0
    # flow matching and sampling
    p_uncond: float = 0.3
    alpha: float = 0.7
    sigma_min: float = 1e-4
    steps: int = 32
    ode_method: str = "euler"
    max_frames: int = 1500
    temperature: float = 0.0
    vocoder_iters: int = 60

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, _coerce(f, getattr(self, f.name)))
        self.validate()

    def validate(self):
        positive = ("max_duration", "min_monologue_s", "min_short_monologue_s", "codebook_size",
                    "t2s_enc_layers", "t2s_dec_layers", "t2s_enc_dim", "t2s_dec_dim", "t2s_heads",
                    "ac_dim", "ac_layers", "ac_heads", "ac_emb_dim", "lr", "batch_size", "sigma_min",
                    "steps", "max_frames")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        nonneg = ("seed", "lead_s", "tail_s", "t2s_epochs", "ac_epochs", "val_count", "alpha",
                  "temperature", "vocoder_iters")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ValueError(f"p_uncond must lie in [0, 1], got {self.p_uncond}")
        if self.sigma_min >= 1.0:
            raise ValueError(f"sigma_min must be < 1, got {self.sigma_min}")
        if self.t2s_variant not in ("mix", "single"):
            raise ValueError(f"t2s_variant must be mix or single, got {self.t2s_variant!r}")
        if self.ac_variant not in ("single", "mix", "stereo"):
            raise ValueError(f"ac_variant must be single, mix or stereo, got {self.ac_variant!r}")
        if self.ode_method not in ("euler", "midpoint"):
            raise ValueError(f"ode_method must be euler or midpoint, got {self.ode_method!r}")
        if self.t2s_enc_dim % self.t2s_heads or self.t2s_dec_dim % self.t2s_heads:
            raise ValueError("t2s dims must be divisible by t2s_heads")
        if self.ac_dim % self.ac_heads:
            raise ValueError("ac_dim must be divisible by ac_heads")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    @property
    def work(self) -> Path:
        return Path(self.work_dir)


def _coerce(f, value):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if kind == "int":
        if isinstance(value, bool):
            raise ValueError(f"{f.name}: expected an integer")
        if isinstance(value, float):
            if not value.is_integer():
                raise ValueError(f"{f.name}: expected an integer, got {value}")
            return int(value)
        try:
            return int(value)
        except ValueError:
            raise ValueError(f"{f.name}: expected an integer, got {value!r}") from None
    if kind == "float":
        try:
            out = float(value)
        except ValueError:
            raise ValueError(f"{f.name}: expected a number, got {value!r}") from None
        if not math.isfinite(out):
            raise ValueError(f"{f.name}: expected a finite number, got {value}")
        return out
    return str(value)


def parse(text: str) -> RunConfig:
    """Parse key=value lines; '#' starts a comment, blank lines are ignored."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise DataError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise DataError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = value
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise DataError(f"config: {exc}") from exc


def dump(cfg: RunConfig) -> str:
    """Normalized form: every key in declaration order, floats via repr."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load(path) -> RunConfig:
    return parse(Path(path).read_text())


def save(path, cfg: RunConfig) -> None:
    Path(path).write_text(dump(cfg))


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply 'key=value' strings on top of cfg."""
    text = dump(cfg)
    extra = {}
    for p in pairs:
        if "=" not in p:
            raise DataError(f"override {p!r} is not key=value")
        k, v = (s.strip() for s in p.split("=", 1))
        extra[k] = v
    base = {k: v for k, v in (ln.split(" = ", 1) for ln in text.splitlines())}
    unknown = set(extra) - set(base)
    if unknown:
        raise DataError(f"unknown config keys: {', '.join(sorted(unknown))}")
    base.update(extra)
    return parse("\n".join(f"{k} = {v}" for k, v in base.items()))
