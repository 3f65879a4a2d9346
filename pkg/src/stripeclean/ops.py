"""Differentiable operators over (N, C, H, W) tensors.

Only the operator set the destriping network needs is provided.  Each op
computes its forward value with numpy and registers a closed-form backward
rule through :func:`stripeclean.tensor.make_node`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .tensor import Tensor, as_tensor, make_node, unbroadcast

LEAKY_SLOPE = 0.01


def _check4(x: Tensor, name: str = "x") -> None:
    if x.ndim != 4:
        raise DimensionError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}")


# -- convolution ----------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Patches of a padded input as (N, C*kh*kw, Ho*Wo)."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return cols, ho, wo


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], kh: int, kw: int,
            stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches into a padded frame."""
    n, c, hp, wp = shape
    out = np.zeros(shape, dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + he:stride, j:j + we:stride] += cols[:, :, i, j]
    return out


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _unpad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return x[:, :, p:-p, p:-p]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is (N, Cin, H, W), ``w`` is (Cout, Cin, kH, kW), ``b`` is (Cout,).
    """
    _check4(x)
    if w.ndim != 4:
        raise DimensionError(f"weight must be 4-D (Cout, Cin, kH, kW), got shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"channel axis mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"invalid stride={stride} / padding={padding}")
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    if h + 2 * padding < kh:
        raise DimensionError(f"height axis too small: {h} + 2*{padding} < kernel {kh}")
    if wd + 2 * padding < kw:
        raise DimensionError(f"width axis too small: {wd} + 2*{padding} < kernel {kw}")

    xp = _pad(x.data, padding)
    w2 = w.data.reshape(cout, -1)
    if kh == 1 and kw == 1 and stride == 1:
        cols, ho, wo = xp.reshape(n, cin, -1), h + 2 * padding, wd + 2 * padding
    else:
        cols, ho, wo = _im2col(xp, kh, kw, stride)
    out = np.matmul(w2, cols)
    if b is not None:
        out += b.data.reshape(1, cout, 1)
    out = out.reshape(n, cout, ho, wo)

    parents = (x, w) if b is None else (x, w, b)
    xshape = xp.shape

    def backward(g):
        g2 = g.reshape(n, cout, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            if kh == 1 and kw == 1 and stride == 1:
                gx = _unpad(dcols.reshape(xshape), padding)
            else:
                gx = _unpad(_col2im(dcols, xshape, kh, kw, stride, ho, wo), padding)
        if w.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_node(out, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d` for the same ``w``.

    ``x`` is (N, Cin, H, W), ``w`` is (Cin, Cout, kH, kW); the output has
    spatial extents ``stride*(in-1) + k - 2*padding``.
    """
    _check4(x)
    if w.ndim != 4:
        raise DimensionError(f"weight must be 4-D (Cin, Cout, kH, kW), got shape {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"channel axis mismatch: input has {x.shape[1]}, weight expects {w.shape[0]}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"invalid stride={stride} / padding={padding}")
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    hf, wf = stride * (h - 1) + kh, stride * (wd - 1) + kw
    if hf - 2 * padding < 1 or wf - 2 * padding < 1:
        raise DimensionError(f"padding {padding} leaves an empty output")

    w2 = w.data.reshape(cin, cout * kh * kw)
    xd = x.data.reshape(n, cin, h * wd)
    cols = np.matmul(w2.T, xd)
    out = _unpad(_col2im(cols, (n, cout, hf, wf), kh, kw, stride, h, wd), padding)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gfull = _pad(g, padding)
        gcols, _, _ = _im2col(gfull, kh, kw, stride)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(w2, gcols).reshape(x.shape)
        if w.requires_grad:
            gw = np.tensordot(xd, gcols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_node(out, parents, backward)


# -- pooling --------------------------------------------------------------------

def _blocks(x: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = x.shape
    return x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)


def _unblocks(xb: np.ndarray, k: int) -> np.ndarray:
    n, c, ho, wo, _ = xb.shape
    return xb.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)


def _check_pool(x: Tensor, k: int, stride: int) -> None:
    _check4(x)
    if k != stride:
        raise DimensionError(f"only non-overlapping pooling is supported (k={k}, stride={stride})")
    if x.shape[2] % k:
        raise DimensionError(f"height axis {x.shape[2]} not divisible by pool size {k}")
    if x.shape[3] % k:
        raise DimensionError(f"width axis {x.shape[3]} not divisible by pool size {k}")


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Max pooling; the gradient goes to the first maximum in scan order."""
    _check_pool(x, k, stride)
    xb = _blocks(x.data, k)
    idx = xb.argmax(axis=-1)[..., None]
    out = np.take_along_axis(xb, idx, axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(xb.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        return (_unblocks(gb, k),)

    return make_node(out, (x,), backward)


def avgpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    _check_pool(x, k, stride)
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        gx = np.repeat(np.repeat(g / (k * k), k, axis=2), k, axis=3)
        return (gx.astype(x.dtype, copy=False),)

    return make_node(out, (x,), backward)


def channel_pool(x: Tensor) -> Tensor:
    """Per-pixel mean and max over channels, stacked as (N, 2, H, W)."""
    _check4(x)
    c = x.shape[1]
    idx = x.data.argmax(axis=1)[:, None]
    mx = np.take_along_axis(x.data, idx, axis=1)
    out = np.concatenate([x.data.mean(axis=1, keepdims=True), mx], axis=1)

    def backward(g):
        gx = np.broadcast_to(g[:, :1] / c, x.shape).copy()
        cur = np.take_along_axis(gx, idx, axis=1)
        np.put_along_axis(gx, idx, cur + g[:, 1:2], axis=1)
        return (gx,)

    return make_node(out, (x,), backward)


def column_avg(x: Tensor) -> Tensor:
    """Mean over rows: (N, C, H, W) -> (N, C, 1, W)."""
    _check4(x)
    h = x.shape[2]
    return make_node(x.data.mean(axis=2, keepdims=True), (x,),
                     lambda g: (np.broadcast_to(g / h, x.shape).copy(),))


def column_max(x: Tensor) -> Tensor:
    """Max over rows: (N, C, H, W) -> (N, C, 1, W)."""
    _check4(x)
    idx = x.data.argmax(axis=2)[:, :, None]
    out = np.take_along_axis(x.data, idx, axis=2)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.put_along_axis(gx, idx, g, axis=2)
        return (gx,)

    return make_node(out, (x,), backward)


def expand_rows(x: Tensor, h: int) -> Tensor:
    """Broadcast an (N, C, 1, W) column map to (N, C, h, W)."""
    _check4(x)
    if x.shape[2] != 1:
        raise DimensionError(f"expand_rows needs a single-row input, got height {x.shape[2]}")
    out = np.broadcast_to(x.data, (x.shape[0], x.shape[1], h, x.shape[3])).copy()
    return make_node(out, (x,), lambda g: (g.sum(axis=2, keepdims=True),))


def column_pool(x: Tensor) -> tuple[Tensor, Tensor]:
    """Column average and max pooling with an (H, 1) kernel."""
    return column_avg(x), column_max(x)


# -- resampling -----------------------------------------------------------------

def _bilinear_matrix(n: int, dtype) -> np.ndarray:
    """(2n, n) interpolation matrix, half-pixel centres, edge clamped."""
    m = np.zeros((2 * n, n), dtype=np.float64)
    for o in range(2 * n):
        src = max((o + 0.5) / 2.0 - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        t = src - i0
        m[o, i0] += 1.0 - t
        m[o, i1] += t
    return m.astype(dtype)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling (align_corners=False convention)."""
    _check4(x)
    h, w = x.shape[2:]
    uh, uw = _bilinear_matrix(h, x.dtype), _bilinear_matrix(w, x.dtype)
    out = np.matmul(uh, np.matmul(x.data, uw.T))
    return make_node(out, (x,), lambda g: (np.matmul(uh.T, np.matmul(g, uw)),))


# -- activations ----------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)
    return make_node(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make_node(t, (x,), lambda g: (g * (1.0 - t * t),))


# -- structural -----------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DimensionError(f"concat along axis {ax}: incompatible shapes {ref} and {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return make_node(out, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)))


def split(x: Tensor, sizes: Sequence[int], axis: int = 1) -> list[Tensor]:
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise DimensionError(f"split sizes {list(sizes)} do not sum to axis {ax} extent {x.shape[ax]}")
    outs = []
    start = 0
    for size in sizes:
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(start, start + size)
        sl = tuple(sl)

        def backward(g, sl=sl):
            gx = np.zeros(x.shape, dtype=g.dtype)
            gx[sl] = g
            return (gx,)

        outs.append(make_node(x.data[sl].copy(), (x,), backward))
        start += size
    return outs


# -- normalisation --------------------------------------------------------------

def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalisation.

    In training mode the batch statistics are used and the running buffers
    are updated in place (unbiased variance, as is customary).
    """
    _check4(x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm affine params must have shape ({c},)")
    shp = (1, c, 1, 1)
    gd = gamma.data.reshape(shp)
    if training:
        m = x.data.size // c
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        unbiased = var.reshape(c) * (m / max(m - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

        def backward(g):
            dxhat = g * gd
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = inv / m * (m * dxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(shp)
        xhat = (x.data - running_mean.astype(x.dtype).reshape(shp)) * inv

        def backward(g):
            return g * gd * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    out = (gd * xhat + beta.data.reshape(shp)).astype(x.dtype, copy=False)
    return make_node(out, (x, gamma, beta), backward)


# -- loss -----------------------------------------------------------------------

def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every element (and the batch)."""
    target = as_tensor(target, pred)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    d = pred.data - target.data
    n = d.size

    def backward(g):
        gp = (2.0 / n) * g * d
        return gp, -gp

    return make_node(np.asarray((d * d).mean()), (pred, target), backward)


__all__ = [
    "LEAKY_SLOPE", "conv2d", "conv_transpose2d", "maxpool2d", "avgpool2d", "channel_pool",
    "column_avg", "column_max", "column_pool", "expand_rows", "bilinear_upsample2x", "leaky_relu", "sigmoid",
    "tanh", "concat", "split", "batch_norm2d", "mse", "unbroadcast",
]
