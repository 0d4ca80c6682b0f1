"""Differentiable primitives.

Spatial tensors are channels-last: ``(H, W, C)`` or batched ``(B, H, W, C)``.
Convolution kernels are laid out ``(kh, kw, C_in // groups, C_out)``.
"""

import builtins

import numpy as np

from . import kernels
from .engine import Tensor, as_tensor, make_result


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b):
    # python scalars adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _pair(a, b)
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b):
    a, b = _pair(a, b)
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b):
    a, b = _pair(a, b)
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data
    return make_result(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        ),
        "div",
    )


def neg(a):
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    return make_result(
        a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "power"
    )


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def xlogx(a):
    """Elementwise ``x * log(x)`` with ``0 * log 0 = 0``."""
    a = as_tensor(a)
    x = a.data
    pos = x > 0
    safe = np.where(pos, x, 1.0)
    out = np.where(pos, x * np.log(safe), 0.0).astype(x.dtype, copy=False)

    def bwd(g):
        tiny = np.finfo(x.dtype).tiny
        return (g * (np.log(np.maximum(x, tiny)) + 1.0),)

    return make_result(out, (a,), bwd, "xlogx")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def abs(a):
    a = as_tensor(a)
    # d|x|/dx taken as 0 at x == 0
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0.0).astype(a.dtype, copy=False), (a,),
                       lambda g: (g * mask,), "relu")


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.asarray(out), (a,), bwd, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_result(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
        "transpose",
    )


def getitem(a, idx):
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data

    def bwd(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return make_result(np.array(a.data[idx]), (a,), bwd, "getitem")


def take_rows(a, idx):
    """Gather ``a[idx]`` along axis 0; the backward is a row scatter-add."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]
    return make_result(
        a.data[idx],
        (a,),
        lambda g: (kernels.scatter_add_rows(g, idx, n),),
        "take_rows",
    )


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        out = []
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                out.append(None)
                continue
            sl = [builtins.slice(None)] * g.ndim
            sl[ax] = builtins.slice(lo, hi)
            out.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(out)

    return make_result(np.concatenate([t.data for t in ts], axis=ax), ts, bwd, "concat")


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    ax = axis % (ts[0].ndim + 1)

    def bwd(g):
        return tuple(np.take(g, i, axis=ax) if t.requires_grad else None for i, t in enumerate(ts))

    return make_result(np.stack([t.data for t in ts], axis=ax), ts, bwd, "stack")


def pad_channels(a, extra):
    """Append ``extra`` zero channels on the last axis."""
    a = as_tensor(a)
    if extra == 0:
        return a
    C = a.shape[-1]
    widths = [(0, 0)] * (a.ndim - 1) + [(0, extra)]
    return make_result(np.pad(a.data, widths), (a,), lambda g: (np.ascontiguousarray(g[..., :C]),),
                       "pad_channels")


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), bwd, "matmul")


def linear_map_axis(a, M, axis):
    """Apply a constant matrix ``M`` (m x n) along ``axis`` of ``a`` (size n)."""
    a = as_tensor(a)
    M = np.asarray(M, dtype=a.dtype)
    ax = axis % a.ndim
    moved = np.moveaxis(a.data, ax, -1)
    out = np.moveaxis(moved @ M.T, -1, ax)

    def bwd(g):
        gm = np.moveaxis(g, ax, -1) @ M
        return (np.ascontiguousarray(np.moveaxis(gm, -1, ax)),)

    return make_result(np.ascontiguousarray(out), (a,), bwd, "linear_map_axis")


# ---------------------------------------------------------------------------
# normalization / activations over an axis
# ---------------------------------------------------------------------------


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), bwd, "softmax")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (a,), bwd, "log_softmax")


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Normalize over every axis but the last.

    In training mode the batch statistics are used and the running buffers
    (plain ndarrays) are updated in place: ``r = (1 - momentum) r + momentum s``
    with the unbiased variance, as is customary.
    """
    x = as_tensor(x)
    axes = tuple(range(x.ndim - 1))
    if training:
        n = x.size // x.shape[-1]
        mu = mean(x, axis=axes, keepdims=True)
        xc = x - mu
        var = mean(xc * xc, axis=axes, keepdims=True)
        if running_mean is not None:
            bm = mu.data.reshape(-1)
            bv = var.data.reshape(-1) * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * bm
            running_var *= 1.0 - momentum
            running_var += momentum * bv
        xhat = xc * power(var + eps, -0.5)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean.astype(x.dtype)) * inv.astype(x.dtype)
    return xhat * gamma + beta


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------


def _as_batched(t):
    if t.ndim == 3:
        return reshape(t, (1,) + t.shape), True
    if t.ndim != 4:
        raise ValueError(f"expected (H, W, C) or (B, H, W, C), got shape {t.shape}")
    return t, False


def _unbatch(t, squeeze):
    return reshape(t, t.shape[1:]) if squeeze else t


def conv2d(x, w, dilation=1, groups=1):
    """Zero-padded 'same' cross-correlation, channels-last.

    Tap ``(a, b)`` of a ``kh x kw`` kernel reads the input at offset
    ``((a - kh // 2) * dilation, (b - kw // 2) * dilation)``.
    """
    x = as_tensor(x)
    w = as_tensor(w)
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if w.ndim != 4:
        raise ValueError(f"kernel must be (kh, kw, C_in/groups, C_out), got shape {w.shape}")
    kh, kw, cg, cout = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
    xb, squeeze = _as_batched(x)
    B, H, W, cin = xb.shape
    if cin % groups or cout % groups:
        raise ValueError(f"channels in={cin} out={cout} not divisible by groups={groups}")
    if cin // groups != cg:
        raise ValueError(
            f"kernel expects {cg} input channels per group but input has {cin} channels / {groups} groups"
        )
    out = _conv2d_core(xb, w, dilation, groups)
    return _unbatch(out, squeeze)


def _conv2d_core(x, w, d, groups):
    kh, kw, cg, cout = w.shape
    B, H, W, cin = x.shape
    ph, pw = (kh // 2) * d, (kw // 2) * d
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    Hp, Wp = xp.shape[1], xp.shape[2]
    og = cout // groups

    if kh == 1 and kw == 1 and groups == 1:
        wm = w.data.reshape(cin, cout)
        out = x.data @ wm

        def bwd(g):
            gx = (g @ wm.T) if x.requires_grad else None
            gw = (x.data.reshape(-1, cin).T @ g.reshape(-1, cout)).reshape(w.shape) if w.requires_grad else None
            return gx, gw

        return make_result(out, (x, w), bwd, "conv2d_1x1")

    if groups == cin and cg == 1 and og == 1:
        k = w.data.reshape(kh, kw, cin)
        out = kernels.depthwise_fwd(xp, k, H, W, d)

        def bwd(g):
            dxp, dk = kernels.depthwise_bwd(xp, k, np.ascontiguousarray(g), d)
            gx = np.ascontiguousarray(dxp[:, ph:ph + H, pw:pw + W, :]) if x.requires_grad else None
            return gx, dk.reshape(w.shape) if w.requires_grad else None

        return make_result(out, (x, w), bwd, "conv2d_depthwise")

    cols = kernels.im2col(xp, H, W, kh, kw, d)  # (B, H, W, kh, kw, cin)
    M = B * H * W
    if groups == 1:
        colm = cols.reshape(M, kh * kw * cin)
        wm = w.data.reshape(kh * kw * cin, cout)
        out = (colm @ wm).reshape(B, H, W, cout)

        def bwd(g):
            gm = g.reshape(M, cout)
            gw = (colm.T @ gm).reshape(w.shape) if w.requires_grad else None
            gx = None
            if x.requires_grad:
                dcols = (gm @ wm.T).reshape(B, H, W, kh, kw, cin)
                gx = np.ascontiguousarray(kernels.col2im(dcols, Hp, Wp, d)[:, ph:ph + H, pw:pw + W, :])
            return gx, gw

        return make_result(out, (x, w), bwd, "conv2d")

    colg = cols.reshape(M, kh * kw, groups, cg)
    wg = w.data.reshape(kh * kw, cg, groups, og)
    out = np.einsum("mtgc,tcgo->mgo", colg, wg).reshape(B, H, W, cout)

    def bwd_grouped(g):
        gm = g.reshape(M, groups, og)
        gw = np.einsum("mtgc,mgo->tcgo", colg, gm).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = np.einsum("mgo,tcgo->mtgc", gm, wg).reshape(B, H, W, kh, kw, cin)
            gx = np.ascontiguousarray(kernels.col2im(dcols, Hp, Wp, d)[:, ph:ph + H, pw:pw + W, :])
        return gx, gw

    return make_result(out, (x, w), bwd_grouped, "conv2d_grouped")


def max_pool2x(x):
    """2x2 max pooling with stride 2. Odd extents are first padded on the
    right/bottom by replicating the edge row/column. Ties go to the first
    element in row-major window order."""
    x = as_tensor(x)
    xb, squeeze = _as_batched(x)
    B, H, W, C = xb.shape
    ph, pw = H % 2, W % 2
    xp = np.pad(xb.data, ((0, 0), (0, ph), (0, pw), (0, 0)), mode="edge")
    Ho, Wo = xp.shape[1] // 2, xp.shape[2] // 2
    win = xp.reshape(B, Ho, 2, Wo, 2, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, Ho, Wo, 4, C)
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def bwd(g):
        gw = np.zeros((B, Ho, Wo, 4, C), dtype=g.dtype)
        np.put_along_axis(gw, arg[:, :, :, None, :], g[:, :, :, None, :], axis=3)
        gp = gw.reshape(B, Ho, Wo, 2, 2, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, 2 * Ho, 2 * Wo, C)
        if ph:
            gp[:, H - 1] += gp[:, H]
        if pw:
            gp[:, :, W - 1] += gp[:, :, W]
        return (np.ascontiguousarray(gp[:, :H, :W]),)

    res = make_result(np.ascontiguousarray(out), (xb,), bwd, "max_pool2x")
    return _unbatch(res, squeeze)


def bilinear_matrix(n_in, n_out):
    """Interpolation weights (n_out x n_in), half-pixel centers, edge clamp."""
    M = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        M[o, i0] += 1.0 - lam
        M[o, i1] += lam
    return M


def bilinear_upsample2x(x):
    x = as_tensor(x)
    xb, squeeze = _as_batched(x)
    _, H, W, _ = xb.shape
    y = linear_map_axis(xb, bilinear_matrix(H, 2 * H), axis=1)
    y = linear_map_axis(y, bilinear_matrix(W, 2 * W), axis=2)
    return _unbatch(y, squeeze)


def forward_diff(x, axis):
    """Forward difference ``x[i+1] - x[i]`` along ``axis``; zero at the last index."""
    x = as_tensor(x)
    ax = axis % x.ndim
    n = x.shape[ax]
    out = np.zeros_like(x.data)
    lo = [builtins.slice(None)] * x.ndim
    hi = [builtins.slice(None)] * x.ndim
    lo[ax] = builtins.slice(0, n - 1)
    hi[ax] = builtins.slice(1, n)
    lo, hi = tuple(lo), tuple(hi)
    out[lo] = x.data[hi] - x.data[lo]

    def bwd(g):
        gx = np.zeros_like(g)
        gx[lo] -= g[lo]
        gx[hi] += g[lo]
        return (gx,)

    return make_result(out, (x,), bwd, "forward_diff")


# ---------------------------------------------------------------------------
# graph ops
# ---------------------------------------------------------------------------


def segment_max(x, seg, n_segments):
    """Per-segment elementwise max of rows of ``x`` (E, D). Empty segments give 0.
    Ties resolve to the lowest row index; the gradient flows to that row only."""
    x = as_tensor(x)
    seg = np.asarray(seg, dtype=np.int64)
    out, arg = kernels.segment_max(np.ascontiguousarray(x.data), seg, n_segments)
    E = x.shape[0]
    return make_result(out, (x,), lambda g: (kernels.segment_max_bwd(g, arg, E),), "segment_max")


def clamp_min(a, lo):
    """``max(a, lo)`` elementwise; gradient passes only where ``a > lo``."""
    a = as_tensor(a)
    mask = a.data > lo
    return make_result(np.where(mask, a.data, lo).astype(a.dtype, copy=False), (a,),
                       lambda g: (g * mask,), "clamp_min")
