"""Grayscale image files <-> float arrays in [0, 1]."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".pgm", ".tif", ".tiff")


def read_gray(path: str | os.PathLike) -> np.ndarray:
    """Read an 8- or 16-bit grayscale image as float64 in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "F":
            arr = np.asarray(im, dtype=np.float64)
        else:
            if im.mode != "L":
                log.warning("%s: converting mode %s to grayscale", path, im.mode)
                im = im.convert("L")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    return np.clip(arr, 0.0, 1.0)


def write_gray16(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a [0, 1] image as a 16-bit grayscale PNG."""
    q = np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")


def list_images(path: str | os.PathLike) -> list[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    return sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_dir(path: str | os.PathLike) -> list[tuple[str, np.ndarray]]:
    """Read every image under ``path``; unreadable files are skipped with a warning."""
    out = []
    for p in list_images(path):
        try:
            out.append((p.name, read_gray(p)))
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
    return out
