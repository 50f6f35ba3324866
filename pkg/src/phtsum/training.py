"""Training loop with warm-up Adam, periodic checkpointing and best-validation
selection. Sample order and dropout noise are derived from (seed, step), so a
run resumed from a checkpoint continues bit-identically."""

from __future__ import annotations

import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import BOS, EOS, Sample
from .model import ModelConfig, PHTModel
from .tensor import AdamState, adam_step


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 2
    # default picked by the tiny-corpus overfit check; larger-scale runs
    # would use a smaller value
    base_rate: float = 2.0
    warmup_steps: int = 100
    checkpoint_every: int = 100
    seed: int = 0
    log_every: int = 50


@dataclass
class TrainResult:
    best_checkpoint: str
    best_val_loss: float
    final_loss: float
    diverged: bool = False
    losses: list = None


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(seed * 9_176_941 + epoch).permutation(n)


def _batch_for_step(samples: list[Sample], step: int, cfg: TrainConfig) -> list[Sample]:
    n = len(samples)
    per_epoch = max(n // cfg.batch_size, 1)
    epoch, slot = divmod(step, per_epoch)
    order = _epoch_order(cfg.seed, epoch, n)
    idx = order[(slot * cfg.batch_size) % n:][: cfg.batch_size]
    if len(idx) < cfg.batch_size:
        idx = np.concatenate([idx, order[: cfg.batch_size - len(idx)]])
    return [samples[i] for i in idx]


def _loss_batch(model: PHTModel, batch: list[Sample]):
    pairs = [(s.source_paragraphs(model.cfg.prepend_title), s.summary) for s in batch]
    return model.training_loss(pairs, bos_id=BOS, eos_id=EOS)


def validation_loss(model: PHTModel, samples: list[Sample]) -> float:
    model.eval_mode()
    with T.no_grad():
        losses = [_loss_batch(model, [s]).item() for s in samples]
    return float(np.mean(losses)) if losses else float("inf")


def save_training_checkpoint(model: PHTModel, state: AdamState, path) -> None:
    extra = {"adam.step": np.array(float(state.step))}
    for name, m in state.m.items():
        extra[f"adam.m.{name}"] = m
    for name, v in state.v.items():
        extra[f"adam.v.{name}"] = v
    model.save(path, extra=extra)


def load_training_state(model: PHTModel, path, base_rate: float,
                        warmup_steps: int) -> AdamState:
    arrays = T.load_checkpoint(path)
    model.load_arrays({k: v for k, v in arrays.items() if not k.startswith("adam.")})
    state = AdamState(base_rate=base_rate, warmup_steps=warmup_steps,
                      model_dim=model.cfg.model_dim)
    state.step = int(np.asarray(arrays.get("adam.step", 0.0)).reshape(-1)[0])
    for key, value in arrays.items():
        if key.startswith("adam.m."):
            state.m[key[len("adam.m."):]] = value.copy()
        elif key.startswith("adam.v."):
            state.v[key[len("adam.v."):]] = value.copy()
    return state


def train(model: PHTModel, train_samples: list[Sample], val_samples: list[Sample],
          cfg: TrainConfig, out_dir, resume_from=None) -> TrainResult:
    """Teacher-forced training with periodic checkpoints; marks the checkpoint
    with minimum validation loss as `best.ckpt`. Non-finite loss aborts with
    the last good checkpoint retained."""
    if not train_samples:
        raise ValueError("train requires a nonempty training set")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        state = load_training_state(model, resume_from, cfg.base_rate, cfg.warmup_steps)
    else:
        state = AdamState(base_rate=cfg.base_rate, warmup_steps=cfg.warmup_steps,
                          model_dim=model.cfg.model_dim)

    best_val = float("inf")
    best_path = out_dir / "best.ckpt"
    losses: list[float] = []
    last_loss = float("nan")
    diverged = False

    def checkpoint(step: int) -> None:
        nonlocal best_val
        path = out_dir / f"step{step:06d}.ckpt"
        save_training_checkpoint(model, state, path)
        val = validation_loss(model, val_samples) if val_samples else last_loss
        if val < best_val:
            best_val = val
            shutil.copyfile(path, best_path)
            shutil.copyfile(str(path) + ".cfg", str(best_path) + ".cfg")

    start = state.step
    for step in range(start, cfg.steps):
        batch = _batch_for_step(train_samples, step, cfg)
        model.train_mode(dropout_seed=cfg.seed * 1_000_003 + step)
        try:
            loss = _loss_batch(model, batch)
        except FloatingPointError:
            last_loss = float("nan")
            losses.append(last_loss)
            diverged = True
            break
        last_loss = loss.item()
        losses.append(last_loss)
        if not np.isfinite(last_loss):
            diverged = True
            break
        for p in model.params.values():
            p.zero_grad()
        loss.backward()
        grads = {n: p.grad for n, p in model.params.items() if p.grad is not None}
        adam_step(model.params, grads, state)
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            print(f"step {step + 1}: loss {last_loss:.4f} lr {state.rate():.5f}")
        if (step + 1) % cfg.checkpoint_every == 0:
            checkpoint(step + 1)

    if not diverged and state.step % cfg.checkpoint_every != 0:
        checkpoint(state.step)
    model.eval_mode()
    if not diverged and not best_path.exists():
        save_training_checkpoint(model, state, best_path)
        best_val = validation_loss(model, val_samples) if val_samples else last_loss
    return TrainResult(best_checkpoint=str(best_path), best_val_loss=best_val,
                       final_loss=last_loss, diverged=diverged, losses=losses)
