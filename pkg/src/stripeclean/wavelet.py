"""Haar wavelet analysis/synthesis and the encoder/decoder samplers.

The forward transform uses the unnormalised 2x2 Haar filters

    LL = [[ 1,  1], [ 1, 1]]      LH = [[-1, -1], [ 1, 1]]
    HL = [[-1,  1], [-1, 1]]      HH = [[ 1, -1], [-1, 1]]

applied at stride 2, so every 2x2 block map has singular values 2 and the
inverse carries a factor 1/4.
"""

from __future__ import annotations

import enum

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .nn import Conv2d, ConvTranspose2d, Module
from .tensor import Tensor, make_node

HAAR_FILTERS: dict[str, np.ndarray] = {
    "ll": np.array([[1.0, 1.0], [1.0, 1.0]]),
    "lh": np.array([[-1.0, -1.0], [1.0, 1.0]]),
    "hl": np.array([[-1.0, 1.0], [-1.0, 1.0]]),
    "hh": np.array([[1.0, -1.0], [-1.0, 1.0]]),
}
SUBBANDS = ("ll", "lh", "hl", "hh")


def _analysis(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise DimensionError(f"hdwt needs even extents, got H={h}, W={w}")
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    # grouping keeps LH and HH bitwise zero when rows repeat (a == c, b == d)
    ll = (a + b) + (c + d)
    lh = (c + d) - (a + b)
    hl = (b + d) - (a + c)
    hh = (a + d) - (b + c)
    return np.concatenate([ll, lh, hl, hh], axis=1)


def _synthesis(x: np.ndarray) -> np.ndarray:
    n, c4, h, w = x.shape
    if c4 % 4:
        raise DimensionError(f"ihdwt needs a channel count divisible by 4, got {c4}")
    c = c4 // 4
    ll, lh, hl, hh = (x[:, i * c:(i + 1) * c] for i in range(4))
    out = np.empty((n, c, 2 * h, 2 * w), dtype=x.dtype)
    out[:, :, 0::2, 0::2] = (ll - lh - hl + hh) * 0.25
    out[:, :, 0::2, 1::2] = (ll - lh + hl - hh) * 0.25
    out[:, :, 1::2, 0::2] = (ll + lh - hl - hh) * 0.25
    out[:, :, 1::2, 1::2] = (ll + lh + hl + hh) * 0.25
    return out


def hdwt(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, 4C, H/2, W/2), channel blocks [LL | LH | HL | HH]."""
    if x.ndim != 4:
        raise DimensionError(f"hdwt expects a 4-D tensor, got shape {x.shape}")
    # adjoint of the analysis map is 4 * synthesis
    return make_node(_analysis(x.data), (x,), lambda g: (4.0 * _synthesis(g),))


def ihdwt(x: Tensor) -> Tensor:
    """Exact inverse of :func:`hdwt`: (N, 4C, H, W) -> (N, C, 2H, 2W)."""
    if x.ndim != 4:
        raise DimensionError(f"ihdwt expects a 4-D tensor, got shape {x.shape}")
    return make_node(_synthesis(x.data), (x,), lambda g: (0.25 * _analysis(g),))


# -- samplers ---------------------------------------------------------------------

class DownKind(str, enum.Enum):
    HDWT = "hdwt"              # plain wavelet squeeze (no residual branch)
    RHDWT = "rhdwt"            # residual Haar DWT, wiring chosen by RHDWTVariant
    RESIDUAL_POOL = "respool"  # maxpool model branch + strided-conv residual
    MAXPOOL = "maxpool"
    STRIDED_CONV = "sconv"


class UpKind(str, enum.Enum):
    TCONV = "tconv"
    IHDWT = "ihdwt"


class RHDWTVariant(str, enum.Enum):
    V1 = "V1"  # model branch only
    V2 = "V2"  # residual added to the subband concat, squeeze after the sum
    V3 = "V3"  # residual added after channel compression


class HDWTDown(Module):
    """Haar squeeze: LeakyReLU(conv1x1 4C->2C (hdwt(x)))."""

    def __init__(self, c: int):
        super().__init__()
        self.squeeze = Conv2d(4 * c, 2 * c, 1)

    def forward(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(self.squeeze(hdwt(x)))


class RHDWTDown(Module):
    """Model-driven Haar branch plus data-driven stride-2 conv branch."""

    def __init__(self, c: int, variant: RHDWTVariant | str = RHDWTVariant.V3):
        super().__init__()
        self.variant = RHDWTVariant(variant)
        self.squeeze = Conv2d(4 * c, 2 * c, 1)
        if self.variant is RHDWTVariant.V2:
            self.residual = Conv2d(c, 4 * c, 2, stride=2, padding=0)
        elif self.variant is RHDWTVariant.V3:
            self.residual = Conv2d(c, 2 * c, 2, stride=2, padding=0)

    def forward(self, x: Tensor) -> Tensor:
        bands = hdwt(x)
        if self.variant is RHDWTVariant.V1:
            return ops.leaky_relu(self.squeeze(bands))
        if self.variant is RHDWTVariant.V2:
            return ops.leaky_relu(self.squeeze(bands + self.residual(x)))
        return ops.leaky_relu(self.squeeze(bands)) + self.residual(x)


class ResidualPoolDown(Module):
    """LeakyReLU(conv1x1 C->2C (maxpool(x))) + conv(k=2, s=2, C->2C)(x)."""

    def __init__(self, c: int):
        super().__init__()
        self.squeeze = Conv2d(c, 2 * c, 1)
        self.residual = Conv2d(c, 2 * c, 2, stride=2, padding=0)

    def forward(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(self.squeeze(ops.maxpool2d(x))) + self.residual(x)


class MaxpoolDown(Module):
    def __init__(self, c: int):
        super().__init__()
        self.squeeze = Conv2d(c, 2 * c, 1)

    def forward(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(self.squeeze(ops.maxpool2d(x)))


class StridedConvDown(Module):
    def __init__(self, c: int):
        super().__init__()
        self.conv = Conv2d(c, 2 * c, 2, stride=2, padding=0)

    def forward(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(self.conv(x))


class TConvUp(Module):
    """Transposed conv, kernel 2 stride 2, halving channels."""

    def __init__(self, c: int):
        super().__init__()
        self.tconv = ConvTranspose2d(c, c // 2, 2, stride=2)

    def forward(self, x: Tensor) -> Tensor:
        return self.tconv(x)


class IHDWTUp(Module):
    """conv1x1 C->2C, then inverse Haar: (N, C, H, W) -> (N, C/2, 2H, 2W)."""

    def __init__(self, c: int):
        super().__init__()
        self.expand = Conv2d(c, 2 * c, 1)

    def forward(self, x: Tensor) -> Tensor:
        return ihdwt(self.expand(x))


def make_down(kind: DownKind | str, c: int, variant: RHDWTVariant | str = RHDWTVariant.V3) -> Module:
    """Downsampler mapping (N, C, H, W) -> (N, 2C, H/2, W/2)."""
    kind = DownKind(kind)
    if kind is DownKind.HDWT:
        return HDWTDown(c)
    if kind is DownKind.RHDWT:
        return RHDWTDown(c, variant)
    if kind is DownKind.RESIDUAL_POOL:
        return ResidualPoolDown(c)
    if kind is DownKind.MAXPOOL:
        return MaxpoolDown(c)
    if kind is DownKind.STRIDED_CONV:
        return StridedConvDown(c)
    raise ConfigError(f"unknown downsampler {kind!r}")


def make_up(kind: UpKind | str, c: int) -> Module:
    """Upsampler mapping (N, C, H, W) -> (N, C/2, 2H, 2W)."""
    kind = UpKind(kind)
    if c % 2:
        raise ConfigError(f"upsampler needs an even channel count, got {c}")
    if kind is UpKind.TCONV:
        return TConvUp(c)
    return IHDWTUp(c)

