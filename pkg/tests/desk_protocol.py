"""Desk-scale learning protocol shared by the acceptance tests.

Training corpus: 1,000 64x64 patches cut from 24 builtin textures, Gaussian
column offsets with sigma ~ U(0, 0.10).  Held-out set: 50 patches from six
textures generated with a different seed, so no source image is shared.
"""

from __future__ import annotations

import dataclasses
import time
from pathlib import Path

import numpy as np

from stripeclean.degrade import builtin_textures, load_corpus, make_corpus
from stripeclean.evaluation import psnr, restore_batch, ssim
from stripeclean.model import PRESETS, ModelConfig, build, layout_config
from stripeclean.train import Corpus, TrainConfig, train

TRAIN_COUNT = 1000
HELD_OUT_COUNT = 50
SIGMA_MAX = 0.10
EPOCHS = 10
BATCH = 16


@dataclasses.dataclass
class DeskData:
    train: Corpus
    held_clean: np.ndarray
    held_degraded: np.ndarray


@dataclasses.dataclass
class DeskResult:
    layout: str
    seed: int
    psnr_restored: float
    psnr_degraded: float
    ssim_restored: float
    ssim_degraded: float
    seconds: float


def make_desk_data(root: Path) -> DeskData:
    train_src = [(f"t{i}", t) for i, t in enumerate(builtin_textures(24, 128, seed=0))]
    held_src = [(f"h{i}", t) for i, t in enumerate(builtin_textures(6, 128, seed=99))]
    make_corpus(train_src, root / "train", TRAIN_COUNT, patch=64, level=SIGMA_MAX, seed=0)
    make_corpus(held_src, root / "held", HELD_OUT_COUNT, patch=64, level=SIGMA_MAX, seed=7)
    c, d, _ = load_corpus(root / "train")
    hc, hd, _ = load_corpus(root / "held")
    return DeskData(Corpus(c, d), hc, hd)


def desk_config(layout: str = "A2") -> ModelConfig:
    return layout_config(layout, PRESETS["desk"])


def run_desk(data: DeskData, layout: str = "A2", seed: int = 0) -> DeskResult:
    t0 = time.perf_counter()
    model = build(desk_config(layout), seed=seed)
    cfg = TrainConfig(batch_size=BATCH, epochs=EPOCHS, seed=seed, val_fraction=0.0, checkpoint_every=0)
    train(model, data.train, cfg)
    out = restore_batch(model, data.held_degraded, BATCH)
    hc, hd = data.held_clean, data.held_degraded
    return DeskResult(
        layout, seed,
        float(np.mean([psnr(o, c) for o, c in zip(out, hc)])),
        float(np.mean([psnr(d, c) for d, c in zip(hd, hc)])),
        float(np.mean([ssim(o, c) for o, c in zip(out, hc)])),
        float(np.mean([ssim(d, c) for d, c in zip(hd, hc)])),
        time.perf_counter() - t0,
    )
