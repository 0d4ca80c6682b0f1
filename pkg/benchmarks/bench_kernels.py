"""Time every kernel on the numba and numpy paths.

    python benchmarks/bench_kernels.py [--repeat 20]

Sizes follow the desk-scale training run (batch 16, 32x32 images, 16
superpixels, k = 5) plus one larger size per kernel. The first numba call
(compilation) is excluded.
"""

import argparse
import time

import numpy as np

from sgseg.tensor import kernels


def _best(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    for B, H, C, d in [(16, 16, 16, 1), (16, 32, 32, 2), (4, 64, 64, 4)]:
        xp = np.pad(rng.normal(size=(B, H, H, C)).astype(np.float32), ((0, 0), (d, d), (d, d), (0, 0)))
        tag = f"B{B} {H}x{H}x{C} d{d}"
        yield "im2col", tag, lambda impl, xp=xp, H=H, d=d: impl.im2col(xp, H, H, 3, 3, d)
        cols = np.ascontiguousarray(kernels.numpy_impl.im2col(xp, H, H, 3, 3, d))
        yield "col2im", tag, lambda impl, c=cols, s=xp.shape, d=d: impl.col2im(c, s[1], s[2], d)
        k = rng.normal(size=(3, 3, C)).astype(np.float32)
        yield "depthwise_fwd", tag, lambda impl, xp=xp, k=k, H=H, d=d: impl.depthwise_fwd(xp, k, H, H, d)
        g = rng.normal(size=(B, H, H, C)).astype(np.float32)
        yield "depthwise_bwd", tag, lambda impl, xp=xp, k=k, g=g, d=d: impl.depthwise_bwd(xp, k, g, d)
    for N, k, D in [(16 * 16, 5, 8), (16 * 200, 20, 64)]:
        E = N * k
        idx = rng.integers(0, N, size=E)
        g = rng.normal(size=(E, D))
        tag = f"E{E} D{D}"
        yield "scatter_add_rows", tag, lambda impl, g=g, idx=idx, N=N: impl.scatter_add_rows(g, idx, N)
        seg = np.repeat(np.arange(N), k)
        yield "segment_max", tag, lambda impl, g=g, seg=seg, N=N: impl.segment_max(g, seg, N)
        _, arg = kernels.numpy_impl.segment_max(g, seg, N)
        gn = rng.normal(size=(N, D))
        yield "segment_max_bwd", tag, lambda impl, gn=gn, arg=arg, E=E: impl.segment_max_bwd(gn, arg, E)
    for N, c, k in [(16, 29, 5), (200, 581, 20)]:
        X = rng.normal(size=(N, c))
        yield "knn", f"N{N} c{c} k{k}", lambda impl, X=X, k=k: impl.knn(X, k)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if kernels.numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'size':<22} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, tag, fn in cases(rng):
        t_np = _best(lambda: fn(kernels.numpy_impl), args.repeat)
        t_nb = _best(lambda: fn(kernels.numba_impl), args.repeat)
        print(f"{name:<18} {tag:<22} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} {t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
