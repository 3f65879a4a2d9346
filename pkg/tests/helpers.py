import numpy as np

from stripeclean.tensor import Tensor


def f64(rng, *shape, scale=1.0, requires_grad=True):
    """Random float64 tensor for gradient checks."""
    return Tensor(scale * rng.standard_normal(shape), requires_grad=requires_grad, dtype=np.float64)


def conv2d_loop(x, w, b=None, stride=1, padding=0):
    """Direct quadruple-loop cross-correlation."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for a in range(kh):
                            for c in range(kw):
                                acc += xp[bi, ci, i * stride + a, j * stride + c] * w[co, ci, a, c]
                    out[bi, co, i, j] = acc + (0.0 if b is None else b[co])
    return out
