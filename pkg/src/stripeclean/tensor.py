"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array.  Every differentiable operation that
consumes a tensor with ``requires_grad`` records its parents and a backward
rule on the output node; :meth:`Tensor.backward` walks that graph in reverse
topological order.  Gradients of intermediate nodes live only for the duration
of one backward call, so calling ``backward`` twice on the same graph
accumulates exactly twice into the leaves.
"""

from __future__ import annotations

import contextlib
import io
from typing import BinaryIO, Callable, Iterator, Sequence

import numpy as np

from .errors import CheckpointError, ContractError, DimensionError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if dtype is None and arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """N-dimensional float array that can take part in autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.array(g, dtype=node.data.dtype, copy=True)
                else:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not part of the operator set")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result; records the backward rule only when needed."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    """Wrap constants; plain numbers take the dtype of ``like``."""
    if isinstance(x, Tensor):
        return x
    if like is not None:
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    return as_tensor(a, b), b


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    for i, (m, n) in enumerate(zip(reversed(a.shape), reversed(b.shape))):
        if m != n and m != 1 and n != 1:
            axis = max(a.ndim, b.ndim) - 1 - i
            raise DimensionError(f"cannot broadcast axis {axis}: {a.shape} vs {b.shape}")


# -- elementwise / reduction ops ----------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Broadcasting Hadamard product."""
    a, b = _pair(a, b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(ad * bd, (a, b), backward)


def tensor_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return make_node(np.asarray(x.data.sum()), (x,),
                     lambda g: (np.broadcast_to(g, shape).astype(x.dtype, copy=True),))


def tensor_mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return make_node(np.asarray(x.data.mean()), (x,),
                     lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# -- dump / load --------------------------------------------------------------

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise CheckpointError(f"unsupported dtype {arr.dtype} for TNSR block")


def write_tensor(f: BinaryIO, arr) -> None:
    """Write one ``TNSR v1`` block (text header line + little-endian payload)."""
    if isinstance(arr, Tensor):
        arr = arr.data
    arr = np.asarray(arr)
    tag = _dtype_tag(arr)
    shape = ",".join(str(n) for n in arr.shape)
    f.write(f"TNSR v1 dtype={tag} shape={shape}\n".encode("ascii"))
    f.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())


def read_tensor(f: BinaryIO, what: str = "tensor") -> np.ndarray:
    """Read one ``TNSR v1`` block; ``what`` names the field in error messages."""
    header = f.readline()
    if not header:
        raise CheckpointError(f"{what}: unexpected end of file")
    try:
        magic, version, dt, sh = header.decode("ascii").split()
    except (UnicodeDecodeError, ValueError):
        raise CheckpointError(f"{what}: malformed TNSR header {header[:40]!r}") from None
    if magic != "TNSR" or version != "v1" or not dt.startswith("dtype=") or not sh.startswith("shape="):
        raise CheckpointError(f"{what}: bad TNSR header {header[:40]!r}")
    dtype = _DTYPES.get(dt[6:])
    if dtype is None:
        raise CheckpointError(f"{what}: unknown dtype {dt[6:]!r}")
    dims = sh[6:]
    shape = tuple(int(s) for s in dims.split(",")) if dims else ()
    count = int(np.prod(shape, dtype=np.int64))
    payload = f.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise CheckpointError(f"{what}: truncated payload ({len(payload)} of {count * dtype.itemsize} bytes)")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def dumps_tensor(arr) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def loads_tensor(blob: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(blob))
