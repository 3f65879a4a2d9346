"""Supervised training: MSE on the restored image, Adam, per-step cosine annealing.

Batches are drawn from a permutation that depends only on ``(seed, epoch)``,
so a run resumed from a checkpoint replays the remaining steps exactly.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError, TrainingAborted
from .evaluation import psnr, restore_batch
from .model import ARCNet, Checkpoint, load_checkpoint, load_state, parse_kv, save_checkpoint, state_of
from .nn import Parameter
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,step,lr,train_loss,val_psnr"
LAST_CHECKPOINT = "last.arcn"


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over every element of the batch."""
    return ops.mse(pred, target)


# -- schedule ------------------------------------------------------------------

def cosine_lr(step: int, total_steps: int, lr_init: float, lr_min: float) -> float:
    """Cosine annealing from ``lr_init`` at step 0 to ``lr_min`` at ``total_steps``."""
    if total_steps <= 0:
        return float(lr_init)
    t = min(max(step, 0), total_steps)
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * t / total_steps))


# -- optimizer -----------------------------------------------------------------

@dataclasses.dataclass
class OptimizerState:
    """Adam moments keyed by parameter name, plus the shared step counter."""

    m: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    v: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": a for k, a in self.m.items()}
        out.update({f"v.{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], step: int, **hyper) -> "OptimizerState":
        st = cls(step=step, **hyper)
        for key, arr in arrays.items():
            kind, _, name = key.partition(".")
            if kind == "m":
                st.m[name] = arr.copy()
            elif kind == "v":
                st.v[name] = arr.copy()
            else:
                raise ConfigError(f"unknown optimizer record {key!r}")
        return st


def adam_step(params: dict[str, Parameter] | Iterable[tuple[str, Parameter]], state: OptimizerState,
              lr: float) -> None:
    """One bias-corrected Adam update, in place.

    Each parameter is updated from its own (value, grad, moments) only, so the
    result does not depend on the iteration order of ``params``.
    """
    items = params.items() if isinstance(params, dict) else params
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in items:
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        if m.shape != p.shape:
            raise DimensionError(f"optimizer moment for {name}: shape {m.shape} != parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- configuration -------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 10
    lr_init: float = 1e-3
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 1  # epochs; 0 writes only the final checkpoint
    val_fraction: float = 0.05

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 < self.lr_min < self.lr_init:
            raise ConfigError(f"need 0 < lr_min < lr_init, got lr_min={self.lr_min}, lr_init={self.lr_init}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not self.adam_eps > 0:
            raise ConfigError(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        return "".join(f"train.{f.name}={getattr(self, f.name)!r}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_mapping(cls, kv: dict[str, object]) -> "TrainConfig":
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = sorted(set(kv) - set(fields))
        if unknown:
            raise ConfigError(f"unknown train field(s): {', '.join(unknown)}")
        out = {}
        for name, value in kv.items():
            conv = int if fields[name] == "int" else float
            try:
                out[name] = conv(value)
            except (TypeError, ValueError):
                raise ConfigError(f"train field {name}: cannot parse {value!r}") from None
        return cls(**out)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        kv = {k[6:]: v for k, v in parse_kv(text).items() if k.startswith("train.")}
        return cls.from_mapping(kv)


TRAIN_PRESETS = {
    "toy": TrainConfig(batch_size=4, epochs=2),
    "desk": TrainConfig(batch_size=16, epochs=10),
    "full": TrainConfig(batch_size=128, epochs=100),
}


# -- data ----------------------------------------------------------------------

@dataclasses.dataclass
class Corpus:
    """Paired patches, shape (N, H, W)."""

    clean: np.ndarray
    degraded: np.ndarray

    def __post_init__(self):
        if self.clean.shape != self.degraded.shape or self.clean.ndim != 3:
            raise DimensionError(f"corpus arrays must share an (N, H, W) shape, got "
                                 f"{self.clean.shape} and {self.degraded.shape}")

    def __len__(self) -> int:
        return len(self.clean)

    def batch(self, idx: np.ndarray) -> tuple[Tensor, Tensor]:
        return (Tensor(self.degraded[idx, None].astype(np.float32)),
                Tensor(self.clean[idx, None].astype(np.float32)))


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/validation split; at least one training patch is kept."""
    perm = np.random.default_rng([seed, 0x5A17]).permutation(n)
    n_val = min(int(round(n * val_fraction)), n - 1) if val_fraction > 0 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def epoch_order(train_idx: np.ndarray, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(train_idx)


def evaluate_psnr(model: ARCNet, corpus: Corpus, idx: np.ndarray, batch_size: int) -> float:
    """Mean per-patch PSNR of the clipped restored image, in eval mode."""
    if len(idx) == 0:
        return float("nan")
    out = restore_batch(model, corpus.degraded[idx], batch_size)
    return float(np.mean([psnr(o, c) for o, c in zip(out, corpus.clean[idx])]))


# -- loop ----------------------------------------------------------------------

@dataclasses.dataclass
class EpochRecord:
    epoch: int
    step: int
    lr: float
    train_loss: float
    val_psnr: float

    def csv(self) -> str:
        return f"{self.epoch},{self.step},{self.lr:.9e},{self.train_loss:.9e},{self.val_psnr:.6f}"


@dataclasses.dataclass
class TrainResult:
    model: ARCNet
    history: list[EpochRecord]
    optimizer: OptimizerState
    checkpoint: Path | None
    seconds: float


def make_checkpoint(model: ARCNet, opt: OptimizerState, cfg: TrainConfig, epoch: int) -> Checkpoint:
    params, buffers = state_of(model)
    meta = {"epoch": str(epoch), "step": str(opt.step), "seed": str(cfg.seed)}
    meta.update(parse_kv(cfg.to_text()))
    return Checkpoint(model.config, params, buffers, opt.to_arrays(), meta)


def _write_checkpoint(path: Path, ckpt: Checkpoint) -> None:
    try:
        save_checkpoint(path, ckpt)
    except OSError as exc:
        raise TrainingAborted(f"checkpoint write to {path} failed: {exc}") from exc


def _read_log(path: Path, upto_epoch: int) -> list[EpochRecord]:
    rows = []
    if not path.exists():
        return rows
    for line in path.read_text().splitlines()[1:]:
        e, s, lr, loss, vp = line.split(",")
        if int(e) <= upto_epoch:
            rows.append(EpochRecord(int(e), int(s), float(lr), float(loss), float(vp)))
    return rows


def train(model: ARCNet, corpus: Corpus, cfg: TrainConfig, out_dir: str | os.PathLike | None = None,
          resume: str | os.PathLike | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train ``model`` in place.

    With ``out_dir`` set, writes ``train_log.csv`` plus checkpoints
    (``epoch_XXXX.arcn`` at the configured cadence and ``last.arcn``).
    ``resume`` names a checkpoint written by an earlier call with the same
    corpus and config; training continues from the epoch after it.
    """
    if len(corpus) == 0:
        raise ConfigError("corpus is empty")
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    train_idx, val_idx = split_indices(len(corpus), cfg.val_fraction, cfg.seed)
    steps_per_epoch = math.ceil(len(train_idx) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    params = dict(model.named_parameters())
    opt = OptimizerState(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    start_epoch = 1
    history: list[EpochRecord] = []

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config != model.config:
            raise ConfigError("resume checkpoint was written for a different model config")
        load_state(model, ckpt.params, ckpt.buffers)
        done = int(ckpt.meta.get("epoch", 0))
        opt = OptimizerState.from_arrays(ckpt.optim, int(ckpt.meta.get("step", 0)),
                                         beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
        if opt.step != done * steps_per_epoch:
            raise ConfigError(f"resume checkpoint step {opt.step} does not match epoch {done} "
                              f"at {steps_per_epoch} steps per epoch")
        start_epoch = done + 1
        if out is not None:
            # earlier rows come from the output log, else the log beside the checkpoint
            prior = out / "train_log.csv"
            if not prior.exists():
                prior = Path(resume).parent / "train_log.csv"
            history = _read_log(prior, done)

    model.train()
    log_path = out / "train_log.csv" if out is not None else None
    if log_path is not None:
        log_path.write_text(LOG_HEADER + "\n" + "".join(r.csv() + "\n" for r in history))

    last_ckpt = None
    lr = cfg.lr_init
    for epoch in range(start_epoch, cfg.epochs + 1):
        order = epoch_order(train_idx, cfg.seed, epoch)
        losses = []
        for b in range(steps_per_epoch):
            sel = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            lr = cosine_lr(opt.step, total_steps, cfg.lr_init, cfg.lr_min)
            x, y = corpus.batch(sel)
            model.zero_grad()
            _, restored = model(x)
            loss = mse_loss(restored, y)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingAborted(f"non-finite loss {value} at epoch {epoch}, batch {b} "
                                      f"(step {opt.step}, lr {lr:.3e})")
            loss.backward()
            adam_step(params, opt, lr)
            losses.append(value)
        rec = EpochRecord(epoch, opt.step, lr, float(np.mean(losses)),
                          evaluate_psnr(model, corpus, val_idx, cfg.batch_size))
        history.append(rec)
        log.info("epoch %d  loss %.6f  val_psnr %.3f", epoch, rec.train_loss, rec.val_psnr)
        if log_path is not None:
            with open(log_path, "a") as f:
                f.write(rec.csv() + "\n")
        if out is not None:
            final = epoch == cfg.epochs
            if final or (cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0):
                ckpt = make_checkpoint(model, opt, cfg, epoch)
                if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                    _write_checkpoint(out / f"epoch_{epoch:04d}.arcn", ckpt)
                last_ckpt = out / LAST_CHECKPOINT
                _write_checkpoint(last_ckpt, ckpt)
        if on_epoch is not None:
            on_epoch(rec)
    return TrainResult(model, history, opt, last_ckpt, time.perf_counter() - t0)
