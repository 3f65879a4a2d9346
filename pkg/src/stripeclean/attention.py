"""Column / spatial / self-calibrated attention blocks and their containers.

``CSSC``  : conv1x1([SAB(x); CAB(x)]) * SCB(x) + x
``RCSSC`` : x + LeakyReLU(conv3x3(CSSC(x)))
``CNCM``  : dense stack of RCSSC blocks with 1x1 fusion and a module residual
"""

from __future__ import annotations

import dataclasses
import enum

from . import ops
from .errors import ConfigError
from .nn import BatchNorm2d, Conv2d, Module
from .tensor import Tensor


class ColumnVariant(str, enum.Enum):
    CCM = "CCM"  # average pooling only, expanded before excitation
    V1 = "V1"    # dual pooling, expanded before excitation
    V2 = "V2"    # dual pooling, fused, excitation on the (1 x W) column maps
    CAB = "CAB"  # dual pooling, shared CBL, split, one excitation per pooling path


@dataclasses.dataclass(frozen=True)
class BranchToggles:
    use_sab: bool = True
    use_scb: bool = True
    cab_variant: ColumnVariant | None = ColumnVariant.CAB
    reduction: int = 4

    def __post_init__(self):
        if self.cab_variant is not None:
            object.__setattr__(self, "cab_variant", ColumnVariant(self.cab_variant))
        if not self.use_sab and self.cab_variant is None:
            raise ConfigError("at least one of the spatial / column branches must be enabled")
        if self.reduction < 1:
            raise ConfigError(f"reduction must be >= 1, got {self.reduction}")

    def validate(self, channels: int) -> None:
        if self.cab_variant is not None and channels % self.reduction:
            raise ConfigError(f"reduction {self.reduction} does not divide channel count {channels}")


# Branch combinations K1..K6 of the CSSC ablation.
BRANCH_PRESETS: dict[str, BranchToggles] = {
    "K1": BranchToggles(use_sab=False, use_scb=True, cab_variant=ColumnVariant.CAB),
    "K2": BranchToggles(use_sab=True, use_scb=False, cab_variant=ColumnVariant.CAB),
    "K3": BranchToggles(use_sab=True, use_scb=True, cab_variant=ColumnVariant.CCM),
    "K4": BranchToggles(use_sab=True, use_scb=True, cab_variant=ColumnVariant.V1),
    "K5": BranchToggles(use_sab=True, use_scb=True, cab_variant=ColumnVariant.V2),
    "K6": BranchToggles(use_sab=True, use_scb=True, cab_variant=ColumnVariant.CAB),
}


class SpatialAttention(Module):
    """sigmoid(conv3x3 2->1 (channel_pool(x))) * x."""

    def __init__(self):
        super().__init__()
        self.conv = Conv2d(2, 1, 3)

    def forward(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.conv(ops.channel_pool(x))) * x


class Excitation(Module):
    """conv1x1 C->C/r, LeakyReLU, conv1x1 C/r->C, sigmoid."""

    def __init__(self, c: int, reduction: int):
        super().__init__()
        self.reduce = Conv2d(c, c // reduction, 1)
        self.expand = Conv2d(c // reduction, c, 1)

    def forward(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.expand(ops.leaky_relu(self.reduce(x))))


class CBL(Module):
    """conv1x1 + batchnorm + LeakyReLU."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = Conv2d(cin, cout, 1)
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(self.bn(self.conv(x)))


class ColumnAttention(Module):
    """Column attention branch; ``variant`` picks one of the four designs."""

    def __init__(self, c: int, reduction: int = 4, variant: ColumnVariant | str = ColumnVariant.CAB):
        super().__init__()
        if c % reduction:
            raise ConfigError(f"reduction {reduction} does not divide channel count {c}")
        self.c = c
        self.variant = ColumnVariant(variant)
        if self.variant is ColumnVariant.CAB:
            self.cbl = CBL(2 * c, 2 * c)
            self.exc_avg = Excitation(c, reduction)
            self.exc_max = Excitation(c, reduction)
        elif self.variant is ColumnVariant.CCM:
            self.cbl = CBL(c, c)
            self.exc = Excitation(c, reduction)
        else:
            self.cbl = CBL(2 * c, c)
            self.exc = Excitation(c, reduction)

    def forward(self, x: Tensor) -> Tensor:
        h = x.shape[2]
        v = self.variant
        if v is ColumnVariant.CCM:
            pooled = ops.expand_rows(ops.column_avg(x), h)
            return x * self.exc(self.cbl(pooled))
        avg, mx = ops.column_pool(x)
        if v is ColumnVariant.V1:
            pooled = ops.concat([ops.expand_rows(avg, h), ops.expand_rows(mx, h)], axis=1)
            return x * self.exc(self.cbl(pooled))
        fused = ops.concat([avg, mx], axis=1)
        if v is ColumnVariant.V2:
            return x * self.exc(self.cbl(fused))
        xa, xm = ops.split(self.cbl(fused), [self.c, self.c], axis=1)
        return x * self.exc_avg(xa) * self.exc_max(xm)


class SelfCalibration(Module):
    """sigmoid(x + upsample2x(conv3x3(avgpool2x2(x)))), a gate map in (0, 1)."""

    def __init__(self, c: int):
        super().__init__()
        self.conv = Conv2d(c, c, 3)

    def forward(self, x: Tensor) -> Tensor:
        return ops.sigmoid(x + ops.bilinear_upsample2x(self.conv(ops.avgpool2d(x))))


class CSSC(Module):
    def __init__(self, c: int, toggles: BranchToggles = BranchToggles()):
        super().__init__()
        toggles.validate(c)
        self.toggles = toggles
        self.sab = SpatialAttention() if toggles.use_sab else None
        self.cab = ColumnAttention(c, toggles.reduction, toggles.cab_variant) if toggles.cab_variant else None
        self.scb = SelfCalibration(c) if toggles.use_scb else None
        nbranch = int(self.sab is not None) + int(self.cab is not None)
        self.fuse = Conv2d(nbranch * c, c, 1)

    def forward(self, x: Tensor) -> Tensor:
        branches = []
        if self.sab is not None:
            branches.append(self.sab(x))
        if self.cab is not None:
            branches.append(self.cab(x))
        y = self.fuse(ops.concat(branches, axis=1))
        if self.scb is not None:
            y = y * self.scb(x)
        return y + x


class RCSSC(Module):
    def __init__(self, c: int, toggles: BranchToggles = BranchToggles()):
        super().__init__()
        self.cssc = CSSC(c, toggles)
        self.conv = Conv2d(c, c, 3, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        return x + ops.leaky_relu(self.conv(self.cssc(x)))


class CNCM(Module):
    """Densely connected RCSSC stack.

    Block k sees conv1x1(concat(x, y_1 .. y_{k-1})) reduced to C channels;
    the output is x + conv1x1(concat(x, y_1 .. y_K)).
    """

    def __init__(self, c: int, num_rcssc: int = 2, toggles: BranchToggles = BranchToggles()):
        super().__init__()
        if num_rcssc < 1:
            raise ConfigError(f"num_rcssc must be >= 1, got {num_rcssc}")
        self.blocks = [RCSSC(c, toggles) for _ in range(num_rcssc)]
        self.entries = [Conv2d((k + 1) * c, c, 1) for k in range(num_rcssc)]
        self.fuse = Conv2d((num_rcssc + 1) * c, c, 1, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        feats = [x]
        for entry, block in zip(self.entries, self.blocks):
            feats.append(block(entry(ops.concat(feats, axis=1))))
        return x + self.fuse(ops.concat(feats, axis=1))

