"""Epoch-based training with checkpoints, a CSV loss curve and exact resume.

Each epoch draws its randomness from a generator seeded with
(seed, epoch), so resuming at an epoch boundary needs no saved RNG state
and reproduces a straight run bit for bit.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_archive, save_archive
from .errors import NumericalError
from .nn import Adam

log = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "step", "train_loss", "val_loss"]


@dataclass
class RunPaths:
    root: Path
    prefix: str

    @property
    def best(self) -> Path:
        return self.root / f"{self.prefix}.ckpt"

    @property
    def last(self) -> Path:
        return self.root / f"{self.prefix}.last.ckpt"

    @property
    def state(self) -> Path:
        return self.root / f"{self.prefix}.state.json"

    @property
    def curve(self) -> Path:
        return self.root / f"{self.prefix}_loss.csv"


def model_tensors(model: torch.nn.Module) -> dict:
    return {k: v.detach() for k, v in model.state_dict().items()}


def load_model_tensors(model: torch.nn.Module, tensors: dict) -> None:
    own = model.state_dict()
    missing = set(own) - set(tensors)
    if missing:
        raise KeyError(f"checkpoint lacks {sorted(missing)[:3]}")
    model.load_state_dict({k: torch.as_tensor(tensors[k], dtype=own[k].dtype) for k in own})


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [np.sort(order[i:i + batch_size]) for i in range(0, n, batch_size)]


def _save_last(paths: RunPaths, model, opt: Adam, state: dict) -> None:
    tensors = model_tensors(model)
    tensors.update(opt.state_tensors())
    save_archive(paths.last, tensors)
    paths.state.write_text(json.dumps(state, indent=1, sort_keys=True))


def _write_curve(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r[0], r[1], repr(r[2]), repr(r[3])])


def read_curve(path) -> list[tuple]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(int(a), int(b), float(c), float(d)) for a, b, c, d in rows]


def fit(model: torch.nn.Module, examples: list, loss_fn, val_fn, *, epochs: int, batch_size: int, lr: float,
        seed: int, out_dir, prefix: str, resume: bool = False) -> dict:
    """Train for `epochs` passes over `examples`.

    loss_fn(model, batch, rng) -> scalar tensor; val_fn(model) -> float.
    Writes <prefix>.ckpt (best validation loss so far, initialization
    included), <prefix>.last.ckpt plus <prefix>.state.json (resume point)
    and <prefix>_loss.csv.  A non-finite loss raises NumericalError
    before anything from the failing epoch is written.
    """
    paths = RunPaths(Path(out_dir), prefix)
    paths.root.mkdir(parents=True, exist_ok=True)
    opt = Adam(model, lr=lr)
    if resume and paths.state.exists():
        state = json.loads(paths.state.read_text())
        tensors = load_archive(paths.last)
        load_model_tensors(model, tensors)
        opt.load_state_tensors({k: torch.as_tensor(v) for k, v in tensors.items() if k.startswith("adam.")})
        rows = [r for r in read_curve(paths.curve) if r[0] < state["epoch"]]
        log.info("%s: resuming at epoch %d", prefix, state["epoch"])
    else:
        val = float(val_fn(model))
        state = {"epoch": 0, "step": 0, "best_val": val, "best_epoch": -1}
        rows = []
        save_archive(paths.best, model_tensors(model))
        _save_last(paths, model, opt, state)
    _write_curve(paths.curve, rows)

    for epoch in range(state["epoch"], epochs):
        rng = np.random.default_rng([seed, epoch])
        model.train()
        losses = []
        for idx in epoch_batches(len(examples), batch_size, rng):
            loss = loss_fn(model, [examples[i] for i in idx], rng)
            if not torch.isfinite(loss):
                raise NumericalError(f"{prefix}: loss is {loss.item()} at epoch {epoch}, step {state['step']}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            state["step"] += 1
        val = float(val_fn(model))
        if not math.isfinite(val):
            raise NumericalError(f"{prefix}: validation loss is {val} at epoch {epoch}")
        rows.append((epoch, state["step"], float(np.mean(losses)), val))
        state["epoch"] = epoch + 1
        if val < state["best_val"]:
            state["best_val"], state["best_epoch"] = val, epoch
            save_archive(paths.best, model_tensors(model))
        _save_last(paths, model, opt, state)
        _write_curve(paths.curve, rows)
        log.info("%s epoch %d train %.4f val %.4f", prefix, epoch, rows[-1][2], val)
    return state
