"""Training-free destriping references: midway histogram equalisation and
two-phase 1-D guided filtering."""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ConfigError, DimensionError


def mhe_destripe(image: np.ndarray, k: int = 8) -> np.ndarray:
    """Map every column onto the midway distribution of its 2k+1 column neighbourhood.

    The midway quantile function is the average of the neighbours' sorted
    columns (inverse CDFs); each pixel takes the midway value at its rank
    inside its own column.  Ties are ranked by a stable sort.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    if w < 2:
        raise DimensionError(f"mhe needs at least 2 columns, got {w}")
    if k < 0:
        raise ConfigError(f"k must be >= 0, got {k}")
    order = np.argsort(img, axis=0, kind="stable")
    sorted_cols = np.take_along_axis(img, order, axis=0)
    # windowed mean of sorted columns via cumulative sums (truncated at borders)
    csum = np.concatenate([np.zeros((h, 1)), np.cumsum(sorted_cols, axis=1)], axis=1)
    lo = np.clip(np.arange(w) - k, 0, w)
    hi = np.clip(np.arange(w) + k + 1, 0, w)
    midway = (csum[:, hi] - csum[:, lo]) / (hi - lo)
    out = np.empty_like(img)
    np.put_along_axis(out, order, midway, axis=0)
    return np.clip(out, 0.0, 1.0)


@dataclasses.dataclass(frozen=True)
class GuidedFilterParams:
    """Row phase uses ``radius``/``eps``; the column phase uses ``col_radius``/``col_eps``."""

    radius: int = 64
    eps: float = 1e-1
    col_radius: int = 64
    col_eps: float = 1e-1

    def __post_init__(self):
        if self.radius < 1 or self.col_radius < 1:
            raise ConfigError(f"guided filter radius must be >= 1, got {self.radius}/{self.col_radius}")
        if not self.eps > 0 or not self.col_eps > 0:
            raise ConfigError(f"guided filter eps must be > 0, got {self.eps}/{self.col_eps}")


def box_mean_1d(a: np.ndarray, r: int, axis: int) -> np.ndarray:
    """Mean over a 2r+1 window along ``axis``, window truncated at the borders."""
    a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, -1)
    n = a.shape[-1]
    csum = np.concatenate([np.zeros(a.shape[:-1] + (1,)), np.cumsum(a, axis=-1)], axis=-1)
    lo = np.clip(np.arange(n) - r, 0, n)
    hi = np.clip(np.arange(n) + r + 1, 0, n)
    out = (csum[..., hi] - csum[..., lo]) / (hi - lo)
    return np.moveaxis(out, -1, axis)


def guided_filter_1d(guide: np.ndarray, src: np.ndarray, r: int, eps: float, axis: int) -> np.ndarray:
    """Guided filter (He et al.) restricted to 1-D windows along ``axis``."""
    mean_i = box_mean_1d(guide, r, axis)
    mean_p = box_mean_1d(src, r, axis)
    cov_ip = box_mean_1d(guide * src, r, axis) - mean_i * mean_p
    var_i = box_mean_1d(guide * guide, r, axis) - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    return box_mean_1d(a, r, axis) * guide + box_mean_1d(b, r, axis)


def gf_destripe(image: np.ndarray, params: GuidedFilterParams = GuidedFilterParams()) -> np.ndarray:
    """Two-phase destriping.

    1. A horizontal (row) guided filter, self-guided, gives a stripe-free base.
    2. A vertical (column) guided filter on ``image - base`` keeps only its
       column-coherent part, which is taken as the stripe estimate.
    """
    if not isinstance(params, GuidedFilterParams):
        raise ConfigError("params must be a GuidedFilterParams")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {img.shape}")
    base = guided_filter_1d(img, img, params.radius, params.eps, axis=1)
    residual = img - base
    stripe = guided_filter_1d(residual, residual, params.col_radius, params.col_eps, axis=0)
    return np.clip(img - stripe, 0.0, 1.0)
