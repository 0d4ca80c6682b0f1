"""Central finite-difference checks for autodiff gradients."""

import numpy as np

from .engine import Tensor, no_grad


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x: Tensor, h=1e-5, coords=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``x.data``.

    ``coords`` restricts the probe to a subset of flat indices; the returned
    array then holds only those entries.
    """
    if not x.data.flags.c_contiguous:
        x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)  # a view, so writes reach ``x``
    idx = range(flat.size) if coords is None else coords
    out = np.empty(len(idx))
    with no_grad():
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            out[n] = (fp - fm) / (2 * h)
    return out


def gradcheck(f, inputs, h=1e-5, max_coords=None, rng=None):
    """Compare autodiff and finite-difference gradients of scalar ``f()``.

    ``inputs`` are leaf tensors read by ``f``. When ``max_coords`` is set, at
    most that many randomly chosen entries per input are probed. Returns the
    worst relative error over all inputs.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = f()
    loss.backward()
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        coords = None
        if max_coords is not None and t.size > max_coords:
            coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        num = numeric_grad(f, t, h=h, coords=coords)
        ana = analytic.reshape(-1) if coords is None else analytic.reshape(-1)[coords]
        worst = max(worst, relative_error(ana, num))
    return worst
