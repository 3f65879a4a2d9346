"""Central finite-difference oracle for the autodiff engine."""

from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor


@dataclasses.dataclass
class GradReport:
    """Per-parameter relative errors and the overall verdict."""

    errors: dict[str, float]
    tol: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def __str__(self) -> str:
        lines = [f"{'PASS' if e <= self.tol else 'FAIL'} {name}: rel err {e:.3e}" for name, e in self.errors.items()]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max|a - n| scaled by the larger of the two gradients' max magnitudes.

    The scale never drops below ``floor``, so a gradient that is exactly zero
    (e.g. a bias feeding a batchnorm) is not judged on round-off noise alone.
    """
    scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def _probe(f: Callable[[], Tensor], flat: np.ndarray, i: int, h: float) -> float:
    old = flat[i]
    flat[i] = old + h
    fp = f().item()
    flat[i] = old - h
    fm = f().item()
    flat[i] = old
    return (fp - fm) / (2.0 * h)


def numeric_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5,
                 indices: np.ndarray | None = None) -> np.ndarray:
    """d f / d t by central differences, perturbing ``t.data`` in place.

    Returns the full gradient, or the flat entries at ``indices`` if given.
    """
    flat = t.data.reshape(-1)
    idx = np.arange(flat.size) if indices is None else indices
    out = np.array([_probe(f, flat, i, h) for i in idx])
    return out.reshape(t.shape) if indices is None else out


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor] | dict[str, Tensor],
                      h: float = 1e-5, tol: float = 1e-4, max_entries: int | None = None,
                      seed: int = 0) -> GradReport:
    """Compare analytic gradients of the scalar ``f()`` against central differences.

    ``f`` must rebuild its graph on every call from the current values of
    ``params``, which must be float64.  With ``max_entries`` set, only that
    many randomly chosen entries per parameter are probed.
    """
    named = dict(params) if isinstance(params, dict) else {f"p{i}": p for i, p in enumerate(params)}
    for name, p in named.items():
        if p.dtype != np.float64:
            raise ContractError(f"{name}: finite-difference checks need float64, got {p.dtype}")
        p.requires_grad = True
        p.grad = None
    out = f()
    out.backward()
    # central-difference round-off grows with |f|; scale the zero-gradient floor with it
    floor = 1e-6 * max(1.0, abs(float(out.data)))
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in named.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if max_entries is None or p.data.size <= max_entries:
            errors[name] = relative_error(analytic, numeric_grad(f, p, h), floor)
        else:
            idx = rng.choice(p.data.size, size=max_entries, replace=False)
            errors[name] = relative_error(analytic.reshape(-1)[idx], numeric_grad(f, p, h, idx), floor)
    return GradReport(errors, tol)
