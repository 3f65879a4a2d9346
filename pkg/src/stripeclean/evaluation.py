"""Image quality metrics, column profiles and size-agnostic inference."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import DimensionError
from .tensor import Tensor, no_grad

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``PSNR_CAP``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian (sigma 1.5) windows."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise DimensionError(f"ssim needs both extents >= {SSIM_WINDOW}, got {a.shape}")
    g = gaussian_window()
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def roughness(a: np.ndarray) -> float:
    """(|horizontal diffs|_1 + |vertical diffs|_1) / |a|_1 over valid regions."""
    a = np.asarray(a, dtype=np.float64)
    denom = float(np.abs(a).sum())
    if denom == 0.0:
        return 0.0
    num = float(np.abs(np.diff(a, axis=1)).sum() + np.abs(np.diff(a, axis=0)).sum())
    return num / denom


def column_means(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).mean(axis=0)


def write_column_means(path: str | os.PathLike, curves: dict[str, np.ndarray]) -> None:
    """CSV with a ``column`` index and one column per named curve."""
    names = list(curves)
    width = len(next(iter(curves.values())))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["column", *names])
        for x in range(width):
            w.writerow([x, *(f"{curves[n][x]:.8f}" for n in names)])


# -- inference --------------------------------------------------------------------

def restore_batch(model, degraded: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Restored images I_B for an (N, H, W) stack, eval mode, clipped to [0, 1]."""
    was_training = model.training
    model.eval()
    outs = []
    try:
        with no_grad():
            for i in range(0, len(degraded), batch_size):
                x = np.asarray(degraded[i:i + batch_size], dtype=np.float32)[:, None]
                _, restored = model(Tensor(x))
                outs.append(restored.data[:, 0])
    finally:
        model.train(was_training)
    return np.clip(np.concatenate(outs), 0.0, 1.0)


def infer_padded(model, image: np.ndarray, multiple: int | None = None) -> np.ndarray:
    """Reflect-pad to ``multiple`` (default: the model's), run in eval mode, crop back."""
    multiple = multiple or model.config.multiple
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    if h < multiple or w < multiple:
        raise DimensionError(f"image {h}x{w} is smaller than {multiple}x{multiple}")
    ph, pw = (-h) % multiple, (-w) % multiple
    padded = np.pad(img, ((0, ph), (0, pw)), mode="reflect") if (ph or pw) else img
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            _, restored = model(Tensor(padded[None, None]))
    finally:
        model.train(was_training)
    return restored.data[0, 0, :h, :w].astype(np.float64)


# -- reports ----------------------------------------------------------------------

@dataclasses.dataclass
class MetricsReport:
    names: list[str]
    psnr: list[float]
    ssim: list[float]
    rho: list[float]

    @classmethod
    def compute(cls, pairs: Sequence[tuple[str, np.ndarray, np.ndarray]]) -> "MetricsReport":
        """``pairs`` = (name, prediction, reference)."""
        rep = cls([], [], [], [])
        for name, pred, ref in pairs:
            rep.names.append(name)
            rep.psnr.append(psnr(pred, ref))
            rep.ssim.append(ssim(pred, ref))
            rep.rho.append(roughness(pred))
        return rep

    def summary(self) -> dict[str, float]:
        out = {}
        for key in ("psnr", "ssim", "rho"):
            vals = np.asarray(getattr(self, key), dtype=np.float64)
            out[f"{key}_mean"] = float(vals.mean()) if len(vals) else float("nan")
            out[f"{key}_std"] = float(vals.std()) if len(vals) else float("nan")
        return out

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["image", "psnr", "ssim", "rho"])
            for row in zip(self.names, self.psnr, self.ssim, self.rho):
                w.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[3]:.6f}"])

    def summary_text(self) -> str:
        s = self.summary()
        lines = [f"images = {len(self.names)}"]
        lines += [f"{k} = {v:.6f}" for k, v in s.items()]
        return "\n".join(lines) + "\n"


def write_summary(path: str | os.PathLike, report: MetricsReport) -> None:
    Path(path).write_text(report.summary_text())
