"""ARCNet assembly, sampling layouts, parameter init and checkpoints."""

from __future__ import annotations

import dataclasses
import io
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np

from . import ops
from .attention import BRANCH_PRESETS, CNCM, BranchToggles, ColumnVariant
from .errors import CheckpointError, ConfigError, DimensionError
from .nn import Conv2d, Module, init_parameters
from .tensor import Tensor, read_tensor, write_tensor
from .wavelet import DownKind, RHDWTVariant, UpKind, make_down, make_up

LEVELS = 3
CHECKPOINT_MAGIC = b"ARCN v1\n"

# Sampling layouts: three downsamplers (shallow -> deep) and three
# upsamplers in decoder order (deep -> shallow), so up[j] mirrors down[2 - j].
SAMPLING_LAYOUTS: dict[str, tuple[tuple[str, str, str], tuple[str, str, str]]] = {
    "S0": (("Maxpool", "Maxpool", "Maxpool"), ("Tconv", "Tconv", "Tconv")),
    "S1": (("HDWT", "Maxpool", "Maxpool"), ("Tconv", "Tconv", "IHDWT")),
    "S2": (("HDWT", "HDWT", "Maxpool"), ("Tconv", "IHDWT", "IHDWT")),
    "S3": (("HDWT", "HDWT", "HDWT"), ("IHDWT", "IHDWT", "IHDWT")),
    "A1": (("HDWT", "Maxpool", "Maxpool"), ("Tconv", "Tconv", "Tconv")),
    "A2": (("HDWT", "HDWT", "Maxpool"), ("Tconv", "Tconv", "Tconv")),
    "A3": (("HDWT", "HDWT", "HDWT"), ("Tconv", "Tconv", "Tconv")),
}

_WAVELET_DOWNS = {DownKind.HDWT, DownKind.RHDWT}


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Declarative description of one network instance."""

    base_channels: int = 8
    down: tuple[DownKind, DownKind, DownKind] = (DownKind.RHDWT, DownKind.RHDWT, DownKind.RESIDUAL_POOL)
    up: tuple[UpKind, UpKind, UpKind] = (UpKind.TCONV, UpKind.TCONV, UpKind.TCONV)
    rhdwt_variant: RHDWTVariant = RHDWTVariant.V3
    toggles: BranchToggles = BranchToggles()
    num_rcssc: int = 2
    cncm_encoder: tuple[bool, bool, bool] = (True, True, True)
    cncm_decoder: tuple[bool, bool, bool] = (True, True, True)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("down", tuple(DownKind(d) for d in self.down))
        set_("up", tuple(UpKind(u) for u in self.up))
        set_("rhdwt_variant", RHDWTVariant(self.rhdwt_variant))
        set_("cncm_encoder", tuple(bool(b) for b in self.cncm_encoder))
        set_("cncm_decoder", tuple(bool(b) for b in self.cncm_decoder))
        self.validate()

    def validate(self) -> None:
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        for name in ("down", "up", "cncm_encoder", "cncm_decoder"):
            if len(getattr(self, name)) != LEVELS:
                raise ConfigError(f"{name} needs exactly {LEVELS} entries")
        for j, kind in enumerate(self.up):
            if kind is UpKind.IHDWT and self.down[LEVELS - 1 - j] not in _WAVELET_DOWNS:
                raise ConfigError(f"up[{j}] is IHDWT but the mirrored down[{LEVELS - 1 - j}] "
                                  f"is {self.down[LEVELS - 1 - j].value}, not a wavelet sampler")
        if self.num_rcssc < 1:
            raise ConfigError(f"num_rcssc must be >= 1, got {self.num_rcssc}")
        if any(self.cncm_encoder) or any(self.cncm_decoder):
            self.toggles.validate(self.base_channels)

    @property
    def multiple(self) -> int:
        """Input extents must be divisible by this.

        Three 2x samplings need 8; a bottleneck CNCM with the self-calibration
        branch pools once more, so it needs 16.
        """
        return 16 if self.cncm_encoder[-1] and self.toggles.use_scb else 8

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)

    # -- text form (key=value lines) ----------------------------------------
    def to_text(self) -> str:
        t = self.toggles
        lines = {
            "base_channels": self.base_channels,
            "down": ",".join(d.value for d in self.down),
            "up": ",".join(u.value for u in self.up),
            "rhdwt_variant": self.rhdwt_variant.value,
            "use_sab": int(t.use_sab),
            "use_scb": int(t.use_scb),
            "cab_variant": t.cab_variant.value if t.cab_variant else "none",
            "reduction": t.reduction,
            "num_rcssc": self.num_rcssc,
            "cncm_encoder": ",".join(str(int(b)) for b in self.cncm_encoder),
            "cncm_decoder": ",".join(str(int(b)) for b in self.cncm_decoder),
        }
        return "".join(f"{k}={v}\n" for k, v in lines.items())

    @classmethod
    def from_mapping(cls, kv: dict[str, Any]) -> "ModelConfig":
        """Build from string-valued keys; unknown keys raise ConfigError."""
        known = {"base_channels", "down", "up", "rhdwt_variant", "use_sab", "use_scb", "cab_variant",
                 "reduction", "num_rcssc", "cncm_encoder", "cncm_decoder"}
        unknown = set(kv) - known
        if unknown:
            raise ConfigError(f"unknown model config field(s): {', '.join(sorted(unknown))}")
        base = cls()
        field = ""
        try:
            field = "base_channels"
            c = int(kv.get(field, base.base_channels))
            field = "down"
            down = _split(kv[field]) if field in kv else base.down
            field = "up"
            up = _split(kv[field]) if field in kv else base.up
            field = "rhdwt_variant"
            variant = RHDWTVariant(kv.get(field, base.rhdwt_variant))
            field = "cab_variant"
            cab = kv.get(field, base.toggles.cab_variant)
            cab = None if cab in (None, "none", "") else ColumnVariant(cab)
            field = "toggles"
            toggles = BranchToggles(
                use_sab=_bool(kv.get("use_sab", base.toggles.use_sab)),
                use_scb=_bool(kv.get("use_scb", base.toggles.use_scb)),
                cab_variant=cab,
                reduction=int(kv.get("reduction", base.toggles.reduction)),
            )
            field = "num_rcssc"
            k = int(kv.get(field, base.num_rcssc))
            field = "cncm_encoder"
            enc = tuple(_bool(b) for b in _split(kv[field])) if field in kv else base.cncm_encoder
            field = "cncm_decoder"
            dec = tuple(_bool(b) for b in _split(kv[field])) if field in kv else base.cncm_decoder
            field = "config"
            return cls(c, down, up, variant, toggles, k, enc, dec)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid model config field {field!r}: {exc}") from None

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls.from_mapping(parse_kv(text))


def _split(v) -> tuple:
    if isinstance(v, str):
        return tuple(s.strip() for s in v.split(",") if s.strip())
    return tuple(v)


def _bool(v) -> bool:
    if isinstance(v, str):
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {v!r}")
    return bool(v)


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"malformed config line {line!r} (expected key=value)")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def layout_config(name: str, base: ModelConfig | None = None, *, hdwt_kind: DownKind | str = DownKind.RHDWT,
                  pool_kind: DownKind | str = DownKind.RESIDUAL_POOL) -> ModelConfig:
    """Config for one named sampling layout (S0..S3, A1..A3).

    "HDWT" slots take ``hdwt_kind`` and "Maxpool" slots take ``pool_kind``;
    with the defaults, A2 is the full network.
    """
    if name not in SAMPLING_LAYOUTS:
        raise ConfigError(f"unknown layout {name!r}; expected one of {', '.join(SAMPLING_LAYOUTS)}")
    base = base or ModelConfig()
    downs, ups = SAMPLING_LAYOUTS[name]
    kind = {"HDWT": DownKind(hdwt_kind), "Maxpool": DownKind(pool_kind)}
    upk = {"Tconv": UpKind.TCONV, "IHDWT": UpKind.IHDWT}
    return base.replace(down=tuple(kind[d] for d in downs), up=tuple(upk[u] for u in ups))


def branch_config(name: str, base: ModelConfig | None = None) -> ModelConfig:
    if name not in BRANCH_PRESETS:
        raise ConfigError(f"unknown branch combination {name!r}; expected one of {', '.join(BRANCH_PRESETS)}")
    return (base or ModelConfig()).replace(toggles=BRANCH_PRESETS[name])


PRESETS: dict[str, ModelConfig] = {
    "full": ModelConfig(base_channels=32, num_rcssc=2),
    "light": ModelConfig(base_channels=16, num_rcssc=2),
    "desk": ModelConfig(base_channels=8, num_rcssc=1),
    "toy": ModelConfig(base_channels=4, num_rcssc=1),
}


class ARCNet(Module):
    """U-shaped residual destriper.

    forward(I_D) returns (I_N, I_B): the predicted stripe residual in (-1, 1)
    and the restored image I_B = I_D - I_N.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.base_channels
        cn = lambda ch: CNCM(ch, config.num_rcssc, config.toggles)  # noqa: E731
        self.head = Conv2d(1, c, 3)
        self.enter = [Conv2d(c, c, 3), Conv2d(c, c, 3)]
        self.downs = [make_down(k, c * 2 ** i, config.rhdwt_variant) for i, k in enumerate(config.down)]
        self.enc_cncm = [cn(c * 2 ** (i + 1)) if on else None for i, on in enumerate(config.cncm_encoder)]
        self.ups = [make_up(k, c * 2 ** (LEVELS - j)) for j, k in enumerate(config.up)]
        self.reduce = [Conv2d(c * 2 ** (LEVELS - j), c * 2 ** (LEVELS - 1 - j), 1) for j in range(LEVELS)]
        self.dec_cncm = [cn(c * 2 ** (LEVELS - 1 - j)) if on else None for j, on in enumerate(config.cncm_decoder)]
        self.exit = [Conv2d(c, c, 3), Conv2d(c, c, 3)]
        self.tail = Conv2d(c, 1, 3, zero_init=True)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.ndim != 4 or x.shape[1] != 1:
            raise DimensionError(f"expected input (N, 1, H, W), got shape {x.shape}")
        h, w = x.shape[2:]
        k = self.config.multiple
        if h % k:
            raise DimensionError(f"height axis {h} is not divisible by {k}")
        if w % k:
            raise DimensionError(f"width axis {w} is not divisible by {k}")

        f = self.head(x)
        for conv in self.enter:
            f = ops.leaky_relu(conv(f))
        skips = [f]
        for down, cncm in zip(self.downs, self.enc_cncm):
            f = down(f)
            if cncm is not None:
                f = cncm(f)
            skips.append(f)
        for j, (up, red, cncm) in enumerate(zip(self.ups, self.reduce, self.dec_cncm)):
            f = up(f)
            f = ops.leaky_relu(red(ops.concat([f, skips[LEVELS - 1 - j]], axis=1)))
            if cncm is not None:
                f = cncm(f)
        for conv in self.exit:
            f = ops.leaky_relu(conv(f))
        residual = ops.tanh(self.tail(f))
        return residual, x - residual


def build(config: ModelConfig, seed: int = 0, zero_branches: bool = True) -> ARCNet:
    """Construct and initialise a model.

    By default the tail conv and the last conv of every residual branch start
    at zero, so the untrained network is the identity restoration I_B = I_D.
    """
    model = ARCNet(config)
    init_parameters(model, seed, zero_branches)
    return model


def count_parameters(model: Module) -> int:
    return model.num_parameters()


# -- checkpoints ------------------------------------------------------------------

@dataclasses.dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    optim: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    meta: dict[str, str] = dataclasses.field(default_factory=dict)

    def build_model(self) -> ARCNet:
        model = ARCNet(self.config)
        load_state(model, self.params, self.buffers)
        return model


def state_of(model: Module) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    params = {n: p.data.copy() for n, p in model.named_parameters()}
    buffers = {n: b.copy() for n, b in model.named_buffers()}
    return params, buffers


def load_state(model: Module, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray] | None = None) -> None:
    own = dict(model.named_parameters())
    missing = sorted(set(own) - set(params))
    unexpected = sorted(set(params) - set(own))
    if missing or unexpected:
        parts = []
        if missing:
            parts.append("missing parameters: " + ", ".join(missing))
        if unexpected:
            parts.append("unexpected parameters: " + ", ".join(unexpected))
        raise CheckpointError("; ".join(parts))
    for name, p in own.items():
        if params[name].shape != p.shape:
            raise CheckpointError(f"parameter {name}: shape {params[name].shape} != model shape {p.shape}")
        p.data = params[name].astype(p.dtype, copy=True)
        p.grad = np.zeros_like(p.data)
    if buffers:
        owners = {}
        for m_name, m in _named_modules(model):
            for b in getattr(m, "_buffer_names", ()):
                owners[f"{m_name}{b}"] = (m, b)
        for name, arr in buffers.items():
            if name not in owners:
                raise CheckpointError(f"unexpected buffer {name}")
            mod, attr = owners[name]
            setattr(mod, attr, arr.astype(getattr(mod, attr).dtype, copy=True))


def _named_modules(model: Module, prefix: str = ""):
    yield prefix, model
    for name, child in model.children():
        yield from _named_modules(child, f"{prefix}{name}.")


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    """Write ``ARCN v1`` header, config block, then named TNSR records."""
    text = ckpt.config.to_text() + "".join(f"meta.{k}={v}\n" for k, v in ckpt.meta.items())
    records = [("param:" + n, a) for n, a in ckpt.params.items()]
    records += [("buffer:" + n, a) for n, a in ckpt.buffers.items()]
    records += [("optim:" + n, a) for n, a in ckpt.optim.items()]
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    blob = text.encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        write_tensor(buf, arr)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"{what}: truncated ({len(data)} of {n} bytes)")
    return data


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"magic: expected {CHECKPOINT_MAGIC!r}, found {magic!r}")
        (n,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        text = _read_exact(f, n, "config block").decode("utf-8")
        kv = parse_kv(text)
        meta = {k[5:]: v for k, v in kv.items() if k.startswith("meta.")}
        config = ModelConfig.from_mapping({k: v for k, v in kv.items() if not k.startswith("meta.")})
        (count,) = struct.unpack("<I", _read_exact(f, 4, "record count"))
        groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "buffer": {}, "optim": {}}
        for i in range(count):
            (ln,) = struct.unpack("<I", _read_exact(f, 4, f"record {i} name length"))
            name = _read_exact(f, ln, f"record {i} name").decode("utf-8")
            kind, _, key = name.partition(":")
            if kind not in groups:
                raise CheckpointError(f"record {name!r}: unknown record kind")
            groups[kind][key] = read_tensor(f, what=name)
    return Checkpoint(config, groups["param"], groups["buffer"], groups["optim"], meta)


def save_model(model: ARCNet, path: str | os.PathLike, meta: dict[str, str] | None = None) -> None:
    params, buffers = state_of(model)
    save_checkpoint(path, Checkpoint(model.config, params, buffers, meta=dict(meta or {})))


def load_model(path: str | os.PathLike) -> ARCNet:
    return load_checkpoint(path).build_model()
