"""Direct-loop reference implementations shared by the unit and acceptance tests.

Each oracle walks pixels, superpixels and classes explicitly so it shares no
code path with the vectorized implementation it checks.
"""

import math

import numpy as np


def rand_probs(rng, shape, temp=1.0):
    z = rng.normal(size=shape) * temp
    e = np.exp(z - z.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def oracle_hard(img, P):
    H, W, N = P.shape
    lab = np.zeros((H, W), dtype=int)
    for i in range(H):
        for j in range(W):
            best = 0
            for s in range(1, N):
                if P[i, j, s] > P[i, j, best]:
                    best = s
            lab[i, j] = best
    out = np.zeros_like(img)
    for s in range(N):
        pix = [(i, j) for i in range(H) for j in range(W) if lab[i, j] == s]
        if pix:
            mean = sum(img[i, j] for i, j in pix) / len(pix)
            for i, j in pix:
                out[i, j] = mean
    return out


def oracle_soft(img, P):
    H, W, N = P.shape
    means = []
    for s in range(N):
        num = np.zeros(img.shape[-1])
        den = 0.0
        for i in range(H):
            for j in range(W):
                num += P[i, j, s] * img[i, j]
                den += P[i, j, s]
        means.append(num / max(den, 1e-8))
    out = np.zeros_like(img)
    for i in range(H):
        for j in range(W):
            for s in range(N):
                out[i, j] += P[i, j, s] * means[s]
    return out


def oracle_pool(F, P):
    H, W, N = P.shape
    out = np.zeros((N, F.shape[-1]))
    for s in range(N):
        w = 0.0
        for i in range(H):
            for j in range(W):
                out[s] += P[i, j, s] * F[i, j]
                w += P[i, j, s]
        out[s] /= max(w, 1e-8)
    return out


def oracle_clustering(P, lam):
    H, W, N = P.shape
    ent = 0.0
    mean = np.zeros(N)
    for i in range(H):
        for j in range(W):
            for s in range(N):
                p = P[i, j, s]
                if p > 0:
                    ent -= p * math.log(p)
                mean[s] += p / (H * W)
    neg_marg = sum(m * math.log(m) for m in mean if m > 0)
    return ent / (H * W) + lam * neg_marg


def oracle_smoothness(P, img, sigma):
    H, W, _ = P.shape
    tot = 0.0
    for i in range(H):
        for j in range(W):
            if j + 1 < W:
                dp = np.abs(P[i, j + 1] - P[i, j]).sum()
                di = ((img[i, j + 1] - img[i, j]) ** 2).sum()
                tot += dp * math.exp(-di / sigma)
            if i + 1 < H:
                dp = np.abs(P[i + 1, j] - P[i, j]).sum()
                di = ((img[i + 1, j] - img[i, j]) ** 2).sum()
                tot += dp * math.exp(-di / sigma)
    return tot / (H * W)


def oracle_edge(img, recon, soft):
    H, W, C = img.shape

    def edge_dist(x):
        out = np.zeros((H, W, C))
        for c in range(C):
            lap = np.zeros((H, W))
            for i in range(H):
                for j in range(W):
                    v = -4 * x[i, j, c]
                    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                        ii, jj = i + di, j + dj
                        if 0 <= ii < H and 0 <= jj < W:
                            v += x[ii, jj, c]
                    lap[i, j] = v
            e = np.exp(lap - lap.max())
            out[..., c] = e / e.sum()
        return out

    def kl(p, q):
        tot = 0.0
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    tot += p[i, j, c] * (math.log(p[i, j, c]) - math.log(q[i, j, c]))
        return tot / C

    pI = edge_dist(img)
    return kl(pI, edge_dist(recon)) + kl(pI, edge_dist(soft))


def oracle_mi(m1, m2):
    k = m1.shape[-1]
    a, b = m1.reshape(-1, k), m2.reshape(-1, k)
    n = a.shape[0]
    J = np.zeros((k, k))
    for p in range(n):
        for i in range(k):
            for j in range(k):
                J[i, j] += a[p, i] * b[p, j] / n
    Js = np.array([[(J[i, j] + J[j, i]) / 2 for j in range(k)] for i in range(k)])
    row = [sum(Js[i, j] for j in range(k)) for i in range(k)]
    col = [sum(Js[i, j] for i in range(k)) for j in range(k)]
    h_row = -sum(r * math.log(r) for r in row if r > 0)
    h_cond = -sum(Js[i, j] * math.log(Js[i, j] / col[j]) for i in range(k) for j in range(k) if Js[i, j] > 0)
    return h_row - h_cond, h_row, -sum(c * math.log(c) for c in col if c > 0)



def oracle_project(P, F):
    H, W, N = P.shape
    out = np.zeros((H, W, F.shape[-1]))
    for i in range(H):
        for j in range(W):
            for s in range(N):
                out[i, j] += P[i, j, s] * F[s]
    return out


