"""Superpixel k-nn graphs, point-cloud GNN backbones, projection and TV loss."""

from dataclasses import dataclass

import numpy as np

from .tensor import as_tensor, kernels, ops
from .tensor.nn import Dense, DenseBNReLU, Module, scaled

EPS = 1e-8
BACKBONES = ("pointnet", "dgcnn", "diffgcn")


@dataclass
class SpGraph:
    """Directed edges ``source -> target``; each target lists its k nearest sources."""

    n_nodes: int
    target: np.ndarray
    source: np.ndarray
    k: int
    distance: np.ndarray = None

    @property
    def edges(self):
        return list(zip(self.target.tolist(), self.source.tolist()))

    @property
    def n_edges(self):
        return int(self.target.size)

    def permuted(self, perm):
        """Graph under node relabelling ``new = inv[old]`` where ``perm[new] = old``."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return SpGraph(self.n_nodes, inv[self.target], inv[self.source], self.k, self.distance)


def build_knn_graph(feats, k=20, coords_only=False) -> SpGraph:
    """Connect every node to its ``k`` nearest other nodes (Euclidean, unscaled).

    ``feats`` is an ``(N, c)`` array or a cloud. Equidistant candidates are
    taken in index order; ``k >= N - 1`` gives the complete graph.
    """
    X = feats.feats if hasattr(feats, "feats") else feats
    X = np.asarray(as_tensor(X).data, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected (N, c) features, got shape {X.shape}")
    if coords_only:
        X = X[:, :2]
    N = X.shape[0]
    if N < 2:
        raise ValueError(f"need at least 2 nodes to build a graph, got {N}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    nbr, dist = kernels.knn(X, k)
    kk = nbr.shape[1]
    return SpGraph(N, np.repeat(np.arange(N), kk), nbr.reshape(-1), kk, dist.reshape(-1))


def batch_graphs(graphs):
    """Merge per-image graphs into one disjoint graph over stacked nodes."""
    off = 0
    tgt, src, dist = [], [], []
    for g in graphs:
        tgt.append(g.target + off)
        src.append(g.source + off)
        dist.append(g.distance if g.distance is not None else np.zeros(g.n_edges))
        off += g.n_nodes
    return SpGraph(off, np.concatenate(tgt), np.concatenate(src), graphs[0].k, np.concatenate(dist))


# ---------------------------------------------------------------------------
# backbones
# ---------------------------------------------------------------------------


def edge_derivatives(feats, coords, graph: SpGraph):
    """Directional differences ``(F_i - F_j) (x_i - x_j) / |p_i - p_j|`` and the
    y analogue for every edge ``(i, j)``; returns two ``(E, d)`` tensors."""
    feats = as_tensor(feats)
    coords = as_tensor(coords)
    dF = ops.take_rows(feats, graph.target) - ops.take_rows(feats, graph.source)
    dp = ops.take_rows(coords, graph.target) - ops.take_rows(coords, graph.source)
    dx = dp[:, 0:1]
    dy = dp[:, 1:2]
    # smooth guard: coincident centroids give a zero term rather than 0/0
    dist = ops.sqrt(dx * dx + dy * dy + EPS * EPS)
    return dF * (dx / dist), dF * (dy / dist)


class PointNetBlock(Module):
    def __init__(self, cin, cout, rng, dtype=np.float64):
        self.mlp = DenseBNReLU(cin, cout, rng, dtype=dtype)

    def forward(self, feats, coords=None, graph=None):
        return self.mlp(feats)


class DGCNNBlock(Module):
    def __init__(self, cin, cout, rng, dtype=np.float64):
        self.mlp = DenseBNReLU(2 * cin, cout, rng, dtype=dtype)

    def messages(self, feats, coords, graph):
        Fi = ops.take_rows(feats, graph.target)
        Fj = ops.take_rows(feats, graph.source)
        return ops.concat([Fi, Fi - Fj], axis=-1)

    def forward(self, feats, coords, graph):
        h = self.mlp(self.messages(as_tensor(feats), coords, graph))
        return ops.segment_max(h, graph.target, graph.n_nodes)


class DiffGCNBlock(DGCNNBlock):
    def __init__(self, cin, cout, rng, dtype=np.float64):
        self.mlp = DenseBNReLU(3 * cin, cout, rng, dtype=dtype)

    def messages(self, feats, coords, graph):
        ddx, ddy = edge_derivatives(feats, coords, graph)
        return ops.concat([ops.take_rows(feats, graph.target), ddx, ddy], axis=-1)


_BLOCKS = {"pointnet": PointNetBlock, "dgcnn": DGCNNBlock, "diffgcn": DiffGCNBlock}


def pointnet_block(feats, block: PointNetBlock):
    return block(feats)


def dgcnn_block(feats, graph, block: DGCNNBlock):
    return block(feats, None, graph)


def diffgcn_block(feats, coords, graph, block: DiffGCNBlock):
    return block(feats, coords, graph)


class SuperpixelGNN(Module):
    """Lift to 64 channels, run ``depth`` backbone blocks, concatenate their
    outputs and reduce through 1x1 layers 256 -> 128 -> 64 (times ``width``)."""

    def __init__(self, cin, backbone="diffgcn", rng=None, depth=4, width=1.0, dtype=np.float64):
        if backbone not in _BLOCKS:
            raise ValueError(f"unknown backbone {backbone!r}; choose from {BACKBONES}")
        rng = np.random.default_rng(0) if rng is None else rng
        c64, c128, c256 = scaled(64, width), scaled(128, width), scaled(256, width)
        self.backbone = backbone
        self.out_dim = c64
        self.lift = DenseBNReLU(cin, c64, rng, dtype=dtype)
        self.blocks = [_BLOCKS[backbone](c64, c64, rng, dtype=dtype) for _ in range(depth)]
        self.reduce = [
            DenseBNReLU(depth * c64, c256, rng, dtype=dtype),
            DenseBNReLU(c256, c128, rng, dtype=dtype),
        ]
        self.out = Dense(c128, c64, rng, dtype=dtype)

    def forward(self, feats, graph=None):
        """``feats``: (N, c) with x, y in the first two columns; ``graph`` over
        the N rows (may be a merged batch graph)."""
        feats = as_tensor(feats)
        if self.backbone != "pointnet" and graph is None:
            raise ValueError(f"{self.backbone} backbone needs a graph")
        coords = feats[:, 0:2]
        x = self.lift(feats)
        outs = []
        for block in self.blocks:
            x = block(x, coords, graph)
            outs.append(x)
        x = ops.concat(outs, axis=-1)
        for layer in self.reduce:
            x = layer(x)
        return self.out(x)


def gnn_forward(cloud, graph, gnn: SuperpixelGNN):
    feats = cloud.feats if hasattr(cloud, "feats") else cloud
    return gnn(feats, graph)


# ---------------------------------------------------------------------------
# projection and TV
# ---------------------------------------------------------------------------


def project_to_image(P, feats):
    """Per-pixel assignment-weighted sum of superpixel features."""
    P = as_tensor(P)
    feats = as_tensor(feats)
    if P.shape[-1] != feats.shape[-2]:
        raise ValueError(f"assignment has {P.shape[-1]} superpixels, features have {feats.shape[-2]}")
    if P.ndim == 3:
        H, W, N = P.shape
        return ops.reshape(ops.matmul(ops.reshape(P, (H * W, N)), feats), (H, W, feats.shape[-1]))
    B, H, W, N = P.shape
    out = ops.matmul(ops.reshape(P, (B, H * W, N)), feats)
    return ops.reshape(out, (B, H, W, feats.shape[-1]))


def tv_loss(M):
    """Anisotropic TV: mean over pixels of the L1 norms of forward differences."""
    M = as_tensor(M)
    wa, ha = M.ndim - 2, M.ndim - 3
    n_pix = M.size // M.shape[-1]
    return (ops.sum(ops.abs(ops.forward_diff(M, wa))) + ops.sum(ops.abs(ops.forward_diff(M, ha)))) / n_pix


def export_graph(graph: SpGraph, path):
    """Write ``# nodes=N k=K`` then one ``i j distance`` line per edge."""
    dist = graph.distance if graph.distance is not None else np.full(graph.n_edges, np.nan)
    with open(path, "w") as fh:
        fh.write(f"# nodes={graph.n_nodes} k={graph.k}\n")
        for i, j, d in zip(graph.target, graph.source, dist):
            fh.write(f"{i} {j} {d:.9g}\n")


def read_graph(path) -> SpGraph:
    with open(path) as fh:
        header = fh.readline().split()
        meta = dict(tok.split("=") for tok in header[1:])
        rows = [line.split() for line in fh if line.strip()]
    tgt = np.array([int(r[0]) for r in rows], dtype=np.int64)
    src = np.array([int(r[1]) for r in rows], dtype=np.int64)
    dist = np.array([float(r[2]) for r in rows])
    return SpGraph(int(meta["nodes"]), tgt, src, int(meta["k"]), dist)
