"""Inner-loop kernels with a numba path and a pure-numpy fallback.

The active backend is picked once at import time. Set ``SGSEG_DISABLE_JIT=1``
to force the numpy path (also used automatically when numba is missing).
Both implementations stay importable as :data:`numpy_impl` and
:data:`numba_impl` so they can be compared against each other.
"""

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _flag(name):
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def _np_im2col(xp, H, W, kh, kw, d):
    B, Hp, Wp, C = xp.shape
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, H, W, kh, kw, C),
        strides=(s[0], s[1], s[2], d * s[1], d * s[2], s[3]),
        writeable=False,
    )
    return np.ascontiguousarray(view)


def _np_col2im(cols, Hp, Wp, d):
    B, H, W, kh, kw, C = cols.shape
    out = np.zeros((B, Hp, Wp, C), dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, a * d:a * d + H, b * d:b * d + W, :] += cols[:, :, :, a, b, :]
    return out


def _np_depthwise_fwd(xp, k, H, W, d):
    # k: (kh, kw, C)
    kh, kw, C = k.shape
    out = np.zeros((xp.shape[0], H, W, C), dtype=xp.dtype)
    for a in range(kh):
        for b in range(kw):
            out += xp[:, a * d:a * d + H, b * d:b * d + W, :] * k[a, b]
    return out


def _np_depthwise_bwd(xp, k, g, d):
    kh, kw, C = k.shape
    _, H, W, _ = g.shape
    dxp = np.zeros_like(xp)
    dk = np.zeros_like(k)
    for a in range(kh):
        for b in range(kw):
            win = xp[:, a * d:a * d + H, b * d:b * d + W, :]
            dk[a, b] = (win * g).sum(axis=(0, 1, 2))
            dxp[:, a * d:a * d + H, b * d:b * d + W, :] += g * k[a, b]
    return dxp, dk


def _np_scatter_add_rows(g, idx, n):
    out = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
    np.add.at(out, idx, g)
    return out


def _np_segment_max(x, seg, n):
    E, D = x.shape
    out = np.zeros((n, D), dtype=x.dtype)
    arg = np.full((n, D), -1, dtype=np.int64)
    if E == 0:
        return out, arg
    order = np.argsort(seg, kind="stable")
    xs = x[order]
    ss = seg[order]
    starts = np.flatnonzero(np.r_[True, ss[1:] != ss[:-1]])
    groups = ss[starts]
    mx = np.maximum.reduceat(xs, starts, axis=0)
    grp = np.cumsum(np.r_[False, ss[1:] != ss[:-1]])
    cand = np.where(xs == mx[grp], np.arange(E)[:, None], E)
    first = np.minimum.reduceat(cand, starts, axis=0)
    out[groups] = mx
    arg[groups] = order[first]
    return out, arg


def _np_segment_max_bwd(g, arg, E):
    n, D = g.shape
    out = np.zeros((E, D), dtype=g.dtype)
    rows, cols = np.nonzero(arg >= 0)
    np.add.at(out, (arg[rows, cols], cols), g[rows, cols])
    return out


def _np_pairwise_sqdist(X):
    N = X.shape[0]
    D = np.empty((N, N), dtype=np.float64)
    for i in range(N):
        diff = X - X[i]
        D[i] = (diff * diff).sum(axis=1)
    return D


def _np_knn(X, k):
    N = X.shape[0]
    D = _np_pairwise_sqdist(X)
    kk = min(k, N - 1)
    nbr = np.empty((N, kk), dtype=np.int64)
    dist = np.empty((N, kk), dtype=np.float64)
    for i in range(N):
        row = D[i].copy()
        row[i] = np.inf
        order = np.argsort(row, kind="stable")[:kk]
        nbr[i] = order
        dist[i] = np.sqrt(row[order])
    return nbr, dist


numpy_impl = SimpleNamespace(
    name="numpy",
    im2col=_np_im2col,
    col2im=_np_col2im,
    depthwise_fwd=_np_depthwise_fwd,
    depthwise_bwd=_np_depthwise_bwd,
    scatter_add_rows=_np_scatter_add_rows,
    segment_max=_np_segment_max,
    segment_max_bwd=_np_segment_max_bwd,
    pairwise_sqdist=_np_pairwise_sqdist,
    knn=_np_knn,
)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if numba is not None:

    @njit(cache=True)
    def _nb_im2col_impl(xp, out, d):
        B, H, W, kh, kw, C = out.shape
        for n in range(B):
            for i in range(H):
                for j in range(W):
                    for a in range(kh):
                        for b in range(kw):
                            for c in range(C):
                                out[n, i, j, a, b, c] = xp[n, i + a * d, j + b * d, c]

    def _nb_im2col(xp, H, W, kh, kw, d):
        out = np.empty((xp.shape[0], H, W, kh, kw, xp.shape[3]), dtype=xp.dtype)
        _nb_im2col_impl(np.ascontiguousarray(xp), out, d)
        return out

    @njit(cache=True)
    def _nb_col2im_impl(cols, out, d):
        B, H, W, kh, kw, C = cols.shape
        for n in range(B):
            for a in range(kh):
                for b in range(kw):
                    for i in range(H):
                        for j in range(W):
                            for c in range(C):
                                out[n, i + a * d, j + b * d, c] += cols[n, i, j, a, b, c]

    def _nb_col2im(cols, Hp, Wp, d):
        B, H, W, kh, kw, C = cols.shape
        out = np.zeros((B, Hp, Wp, C), dtype=cols.dtype)
        _nb_col2im_impl(np.ascontiguousarray(cols), out, d)
        return out

    @njit(cache=True)
    def _nb_depthwise_fwd_impl(xp, k, out, d):
        B, H, W, C = out.shape
        kh, kw, _ = k.shape
        for n in range(B):
            for a in range(kh):
                for b in range(kw):
                    for i in range(H):
                        for j in range(W):
                            for c in range(C):
                                out[n, i, j, c] += xp[n, i + a * d, j + b * d, c] * k[a, b, c]

    def _nb_depthwise_fwd(xp, k, H, W, d):
        out = np.zeros((xp.shape[0], H, W, xp.shape[3]), dtype=xp.dtype)
        _nb_depthwise_fwd_impl(np.ascontiguousarray(xp), np.ascontiguousarray(k), out, d)
        return out

    @njit(cache=True)
    def _nb_depthwise_bwd_impl(xp, k, g, dxp, dk, d):
        B, H, W, C = g.shape
        kh, kw, _ = k.shape
        for n in range(B):
            for a in range(kh):
                for b in range(kw):
                    for i in range(H):
                        for j in range(W):
                            for c in range(C):
                                gv = g[n, i, j, c]
                                dk[a, b, c] += xp[n, i + a * d, j + b * d, c] * gv
                                dxp[n, i + a * d, j + b * d, c] += k[a, b, c] * gv

    def _nb_depthwise_bwd(xp, k, g, d):
        dxp = np.zeros_like(xp)
        dk = np.zeros_like(k)
        _nb_depthwise_bwd_impl(
            np.ascontiguousarray(xp), np.ascontiguousarray(k), np.ascontiguousarray(g), dxp, dk, d
        )
        return dxp, dk

    @njit(cache=True)
    def _nb_scatter_add_rows_impl(g, idx, out):
        E, D = g.shape
        for e in range(E):
            r = idx[e]
            for c in range(D):
                out[r, c] += g[e, c]

    def _nb_scatter_add_rows(g, idx, n):
        g2 = np.ascontiguousarray(g.reshape(g.shape[0], -1))
        out = np.zeros((n, g2.shape[1]), dtype=g.dtype)
        _nb_scatter_add_rows_impl(g2, np.asarray(idx, dtype=np.int64), out)
        return out.reshape((n,) + g.shape[1:])

    @njit(cache=True)
    def _nb_segment_max_impl(x, seg, out, arg):
        E, D = x.shape
        for e in range(E):
            s = seg[e]
            for c in range(D):
                v = x[e, c]
                if arg[s, c] < 0 or v > out[s, c]:
                    out[s, c] = v
                    arg[s, c] = e

    def _nb_segment_max(x, seg, n):
        out = np.zeros((n, x.shape[1]), dtype=x.dtype)
        arg = np.full((n, x.shape[1]), -1, dtype=np.int64)
        _nb_segment_max_impl(np.ascontiguousarray(x), np.asarray(seg, dtype=np.int64), out, arg)
        return out, arg

    @njit(cache=True)
    def _nb_segment_max_bwd_impl(g, arg, out):
        n, D = g.shape
        for s in range(n):
            for c in range(D):
                e = arg[s, c]
                if e >= 0:
                    out[e, c] += g[s, c]

    def _nb_segment_max_bwd(g, arg, E):
        out = np.zeros((E, g.shape[1]), dtype=g.dtype)
        _nb_segment_max_bwd_impl(np.ascontiguousarray(g), arg, out)
        return out

    @njit(cache=True)
    def _nb_pairwise_sqdist(X):
        N, c = X.shape
        D = np.empty((N, N), dtype=np.float64)
        for i in range(N):
            for j in range(N):
                acc = 0.0
                for f in range(c):
                    t = X[j, f] - X[i, f]
                    acc += t * t
                D[i, j] = acc
        return D

    @njit(cache=True)
    def _nb_knn_impl(X, kk):
        N = X.shape[0]
        D = _nb_pairwise_sqdist(X)
        nbr = np.empty((N, kk), dtype=np.int64)
        dist = np.empty((N, kk), dtype=np.float64)
        for i in range(N):
            row = D[i].copy()
            row[i] = np.inf
            order = np.argsort(row, kind="mergesort")
            for t in range(kk):
                nbr[i, t] = order[t]
                dist[i, t] = np.sqrt(row[order[t]])
        return nbr, dist

    def _nb_knn(X, k):
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _nb_knn_impl(X, min(k, X.shape[0] - 1))

    numba_impl = SimpleNamespace(
        name="numba",
        im2col=_nb_im2col,
        col2im=_nb_col2im,
        depthwise_fwd=_nb_depthwise_fwd,
        depthwise_bwd=_nb_depthwise_bwd,
        scatter_add_rows=_nb_scatter_add_rows,
        segment_max=_nb_segment_max,
        segment_max_bwd=_nb_segment_max_bwd,
        pairwise_sqdist=lambda X: _nb_pairwise_sqdist(np.ascontiguousarray(X, dtype=np.float64)),
        knn=_nb_knn,
    )
else:  # pragma: no cover
    numba_impl = None


USE_JIT = numba_impl is not None and not _flag("SGSEG_DISABLE_JIT")
active = numba_impl if USE_JIT else numpy_impl

# im2col is nine strided slice copies in numpy and the loop version is no
# faster (0.8x-1.4x in benchmarks/bench_kernels.py), so it stays on numpy;
# every other kernel is 2x-30x faster jitted.
im2col = numpy_impl.im2col
col2im = active.col2im
depthwise_fwd = active.depthwise_fwd
depthwise_bwd = active.depthwise_bwd
scatter_add_rows = active.scatter_add_rows
segment_max = active.segment_max
segment_max_bwd = active.segment_max_bwd
pairwise_sqdist = active.pairwise_sqdist
knn = active.knn
