"""Stripe-noise synthesis, procedural clean textures and corpus files.

Every realisation is driven by a ``StripeNoiseSpec`` carrying its own seed,
so ``synth_stripe(clean, spec)`` is a pure function.  Corpora are written as
``data.bin`` (clean / degraded TNSR block pairs) plus a ``manifest.txt`` index.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import logging
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .tensor import read_tensor, write_tensor

log = logging.getLogger(__name__)

PATCH = 64


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    PERIODIC = "periodic"
    POLY3 = "poly3"


@dataclasses.dataclass(frozen=True)
class StripeNoiseSpec:
    """One stripe-noise realisation.

    ``params`` meaning per kind:
      gaussian  (sigma,)
      uniform   (mu,)                 offsets ~ U(-mu, mu)
      periodic  (period, amplitude, jitter)  jitter 0/1
      poly3     (sigma1, sigma2, sigma3)
    """

    kind: NoiseKind
    params: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        self.validate()

    def validate(self) -> None:
        k, p = self.kind, self.params
        expected = {NoiseKind.GAUSSIAN: 1, NoiseKind.UNIFORM: 1, NoiseKind.PERIODIC: 3, NoiseKind.POLY3: 3}[k]
        if len(p) != expected:
            raise ConfigError(f"{k.value} noise takes {expected} parameter(s), got {len(p)}")
        if not all(np.isfinite(p)):
            raise ConfigError(f"{k.value} noise parameters must be finite: {p}")
        if k is NoiseKind.PERIODIC:
            if p[0] < 2 or p[0] != int(p[0]):
                raise ConfigError(f"period must be an integer >= 2, got {p[0]}")
            if p[1] < 0:
                raise ConfigError(f"amplitude must be >= 0, got {p[1]}")
        elif any(v < 0 for v in p):
            raise ConfigError(f"{k.value} noise parameters must be >= 0, got {p}")

    @classmethod
    def gaussian(cls, sigma: float, seed: int = 0) -> "StripeNoiseSpec":
        return cls(NoiseKind.GAUSSIAN, (sigma,), seed)

    @classmethod
    def uniform(cls, mu: float, seed: int = 0) -> "StripeNoiseSpec":
        return cls(NoiseKind.UNIFORM, (mu,), seed)

    @classmethod
    def periodic(cls, period: int, amplitude: float, jitter: bool = True, seed: int = 0) -> "StripeNoiseSpec":
        return cls(NoiseKind.PERIODIC, (period, amplitude, float(jitter)), seed)

    @classmethod
    def poly3(cls, s1: float, s2: float, s3: float, seed: int = 0) -> "StripeNoiseSpec":
        return cls(NoiseKind.POLY3, (s1, s2, s3), seed)

    @property
    def is_additive(self) -> bool:
        return self.kind is not NoiseKind.POLY3


def column_coefficients(spec: StripeNoiseSpec, width: int) -> np.ndarray:
    """Per-column noise coefficients, shape (k, width), float64.

    Additive kinds return one row (the column offsets); poly3 returns the
    bias, linear and quadratic column responses.
    """
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    if spec.kind is NoiseKind.GAUSSIAN:
        return rng.normal(0.0, p[0], size=(1, width))
    if spec.kind is NoiseKind.UNIFORM:
        return rng.uniform(-p[0], p[0], size=(1, width))
    if spec.kind is NoiseKind.PERIODIC:
        period, amp, jitter = int(p[0]), p[1], bool(p[2])
        base = rng.uniform(-amp, amp, size=period)
        offsets = base[np.arange(width) % period]
        if jitter:
            offsets = offsets + rng.normal(0.0, 0.1 * amp, size=width)
        return offsets[None, :]
    return np.stack([rng.normal(0.0, s, size=width) for s in p])


def stripe_field(spec: StripeNoiseSpec, shape: tuple[int, int]) -> np.ndarray:
    """Pre-clamp additive stripe field (rows identical), float64."""
    if not spec.is_additive:
        raise ConfigError("stripe_field is defined for additive kinds only")
    h, w = shape
    return np.repeat(column_coefficients(spec, w), h, axis=0)


def synth_stripe(clean: np.ndarray, spec: StripeNoiseSpec) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt a clean image in [0, 1]; returns (degraded, noise).

    Arithmetic happens in the dtype of ``clean``; ``noise`` is exactly
    ``degraded - clean`` after clamping.
    """
    clean = np.asarray(clean)
    if clean.ndim != 2:
        raise ConfigError(f"clean image must be 2-D, got shape {clean.shape}")
    if clean.dtype not in (np.float32, np.float64):
        clean = clean.astype(np.float64)
    dt = clean.dtype
    coef = column_coefficients(spec, clean.shape[1]).astype(dt)
    if spec.is_additive:
        raw = clean + coef[0][None, :]
    else:
        n1, n2, n3 = (c[None, :] for c in coef)
        raw = clean + n1 + n2 * clean + n3 * (clean * clean)
    degraded = np.clip(raw, 0.0, 1.0).astype(dt, copy=False)
    return degraded, degraded - clean


# -- training-spec samplers -------------------------------------------------------

def sample_spec(kind: NoiseKind | str, level: float, rng: np.random.Generator, seed: int) -> StripeNoiseSpec:
    """Draw a spec with strength ~ U(0, level) (period from {6..9} for periodic)."""
    kind = NoiseKind(kind)
    s = float(rng.uniform(0.0, level))
    if kind is NoiseKind.GAUSSIAN:
        return StripeNoiseSpec.gaussian(s, seed)
    if kind is NoiseKind.UNIFORM:
        return StripeNoiseSpec.uniform(s, seed)
    if kind is NoiseKind.PERIODIC:
        return StripeNoiseSpec.periodic(int(rng.integers(6, 10)), s, True, seed)
    return StripeNoiseSpec.poly3(s, s, s, seed)


# -- builtin textures -------------------------------------------------------------

def _value_noise(rng: np.random.Generator, size: int, octaves: int = 4) -> np.ndarray:
    out = np.zeros((size, size))
    amp, total = 1.0, 0.0
    cells = 4
    for _ in range(octaves):
        grid = rng.random((cells + 1, cells + 1))
        out += amp * ndimage.zoom(grid, size / (cells + 1), order=3, mode="nearest", grid_mode=True)[:size, :size]
        total += amp
        amp *= 0.5
        cells *= 2
    out /= total
    return (out - out.min()) / max(out.max() - out.min(), 1e-12)


def builtin_textures(n: int, size: int = 128, seed: int = 0) -> list[np.ndarray]:
    """Procedural clean images in [0, 1] (float64).

    Each image blends a linear gradient with multi-octave value noise;
    every other image also gets rectangles whose vertical edges carry a
    step of at least 0.3, and some get thin vertical bars.
    """
    out = []
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        theta = rng.uniform(0, 2 * np.pi)
        grad = 0.5 + 0.5 * (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5))
        img = 0.35 * grad + 0.45 * _value_noise(rng, size) + 0.1
        if i % 2 == 0:
            for _ in range(int(rng.integers(1, 4))):
                h = int(rng.integers(size // 4, size // 2 + 1))
                w = int(rng.integers(size // 6, size // 3 + 1))
                y0 = int(rng.integers(0, size - h))
                x0 = int(rng.integers(1, size - w - 1))
                level = rng.uniform(0.0, 1.0)
                region = img[y0:y0 + h, x0:x0 + w]
                # push the patch at least 0.3 away from its left/right neighbours
                lo = min(img[y0:y0 + h, x0 - 1].min(), img[y0:y0 + h, x0 + w].min())
                hi = max(img[y0:y0 + h, x0 - 1].max(), img[y0:y0 + h, x0 + w].max())
                if hi + 0.3 <= 1.0 and (level > 0.5 or lo - 0.3 < 0.0):
                    fill = rng.uniform(hi + 0.3, 1.0)
                elif lo - 0.3 >= 0.0:
                    fill = rng.uniform(0.0, lo - 0.3)
                else:
                    fill = 1.0 if (1.0 - hi) > lo else 0.0
                img[y0:y0 + h, x0:x0 + w] = 0.15 * (region - region.mean()) + fill
        if i % 3 == 1:
            for _ in range(int(rng.integers(1, 3))):
                x0 = int(rng.integers(0, size - 3))
                img[:, x0:x0 + int(rng.integers(1, 4))] += rng.uniform(-0.25, 0.25)
        out.append(np.clip(img, 0.0, 1.0))
    return out


def has_vertical_step(img: np.ndarray, contrast: float = 0.3, min_run: int = 8) -> bool:
    """True if some column boundary carries a step >= ``contrast`` over >= ``min_run`` consecutive rows."""
    d = np.abs(np.diff(img, axis=1)) >= contrast
    for col in d.T:
        run = 0
        for v in col:
            run = run + 1 if v else 0
            if run >= min_run:
                return True
    return False


# -- corpus -----------------------------------------------------------------------

AUGMENTATIONS = ("rot90", "flip", "scale")
SCALES = (1.0, 0.75, 0.5)


@dataclasses.dataclass(frozen=True)
class PatchRecord:
    id: int
    source: str
    y: int
    x: int
    patch: int
    scale: float
    rot: int
    flip: int
    spec: StripeNoiseSpec


MANIFEST_FIELDS = ("id", "source", "y", "x", "patch", "scale", "rot", "flip", "kind", "p1", "p2", "p3", "seed")


def record_seed(seed: int, index: int) -> int:
    """Stable per-record seed derived from (seed, index)."""
    h = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def augment(patch: np.ndarray, rot: int, flip: int) -> np.ndarray:
    out = np.rot90(patch, rot)
    if flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def make_corpus(sources: Sequence[tuple[str, np.ndarray]], out_dir: str | os.PathLike, count: int, *,
                patch: int = PATCH, aug: Iterable[str] = AUGMENTATIONS, kind: NoiseKind | str = NoiseKind.GAUSSIAN,
                level: float = 0.15, params: Sequence[float] | None = None, seed: int = 0) -> list[PatchRecord]:
    """Crop, augment and corrupt ``count`` patches; writes data.bin + manifest.txt.

    Each record draws its noise strength from ``U(0, level)`` unless fixed
    ``params`` are given, in which case only the per-record seed varies.
    """
    if params is not None:
        StripeNoiseSpec(kind, tuple(params))  # validate once, up front
    aug = set(aug)
    bad = aug - set(AUGMENTATIONS)
    if bad:
        raise ConfigError(f"unknown augmentation(s): {', '.join(sorted(bad))}")
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    usable = [(name, img) for name, img in sources if min(img.shape) >= patch]
    if not usable:
        raise ConfigError(f"no clean image is at least {patch}x{patch}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    with open(out_dir / "data.bin", "wb") as data:
        for idx in range(count):
            rs = record_seed(seed, idx)
            rng = np.random.default_rng(rs)
            name, img = usable[int(rng.integers(len(usable)))]
            scale = float(rng.choice(SCALES)) if "scale" in aug else 1.0
            if min(img.shape) * scale < patch:
                scale = 1.0
            if scale != 1.0:
                img = np.clip(ndimage.zoom(img, scale, order=1), 0.0, 1.0)
            y = int(rng.integers(0, img.shape[0] - patch + 1))
            x = int(rng.integers(0, img.shape[1] - patch + 1))
            rot = int(rng.integers(4)) if "rot90" in aug else 0
            flip = int(rng.integers(2)) if "flip" in aug else 0
            clean = augment(img[y:y + patch, x:x + patch], rot, flip).astype(np.float32)
            if params is None:
                spec = sample_spec(kind, level, rng, seed=rs)
            else:
                spec = StripeNoiseSpec(kind, tuple(params), rs)
            degraded, _ = synth_stripe(clean, spec)
            write_tensor(data, clean)
            write_tensor(data, degraded)
            records.append(PatchRecord(idx, name, y, x, patch, scale, rot, flip, spec))
    write_manifest(out_dir / "manifest.txt", records)
    return records


def write_manifest(path: Path, records: Sequence[PatchRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            p = list(r.spec.params) + [""] * (3 - len(r.spec.params))
            w.writerow([r.id, r.source, r.y, r.x, r.patch, repr(r.scale), r.rot, r.flip, r.spec.kind.value,
                        *[repr(v) if v != "" else "" for v in p], r.spec.seed])


def read_manifest(path: str | os.PathLike) -> list[PatchRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            params = tuple(float(row[k]) for k in ("p1", "p2", "p3") if row[k] != "")
            spec = StripeNoiseSpec(row["kind"], params, int(row["seed"]))
            out.append(PatchRecord(int(row["id"]), row["source"], int(row["y"]), int(row["x"]), int(row["patch"]),
                                   float(row["scale"]), int(row["rot"]), int(row["flip"]), spec))
    return out


def load_corpus(corpus_dir: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, list[PatchRecord]]:
    """Return (clean, degraded) arrays of shape (N, H, W) plus the records."""
    corpus_dir = Path(corpus_dir)
    records = read_manifest(corpus_dir / "manifest.txt")
    cleans, degs = [], []
    with open(corpus_dir / "data.bin", "rb") as f:
        for r in records:
            cleans.append(read_tensor(f, what=f"record {r.id} clean"))
            degs.append(read_tensor(f, what=f"record {r.id} degraded"))
    if not records:
        raise ConfigError(f"corpus {corpus_dir} is empty")
    return np.stack(cleans), np.stack(degs), records
