"""Finite-difference gradient checks for every loss and network block.

Each check builds a tiny float64 instance, differentiates a scalar function
of it with the autodiff engine and compares against central differences.
Inputs are at most 6x6 spatially, except the superpixel network, whose
three stride-free dilated branches need at least 8x8.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import graph as G
from . import seghead as S
from . import superpixel as SP
from .tensor import Tensor, gradcheck, ops
from .tensor.nn import Conv2d

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def ok(self):
        return self.error < TOLERANCE


def _t(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


def _weights(x, rng):
    """Fixed random projection so that vector outputs become a scalar."""
    w = Tensor(rng.normal(size=x.shape))
    return ops.sum(x * w)


def _params(module):
    return [p for _, p in module.named_parameters()]


def check_clustering(rng):
    logits = _t(rng.normal(size=(2, 4, 4, 3)))
    return lambda: SP.clustering_loss(ops.softmax(logits, -1)), [logits]


def check_smoothness(rng):
    logits = _t(rng.normal(size=(2, 5, 5, 3)))
    img = Tensor(rng.random((2, 5, 5, 3)))
    return lambda: SP.smoothness_loss(ops.softmax(logits, -1), img), [logits]


def check_spnn_recon(rng):
    img = Tensor(rng.random((1, 5, 5, 3)))
    recon = _t(rng.random((1, 5, 5, 3)))
    logits = _t(rng.normal(size=(1, 5, 5, 3)))

    def f():
        soft = SP.soft_superpixelate(img, ops.softmax(logits, -1))
        return SP.recon_loss(img, recon, soft)

    return f, [recon, logits]


def check_edge(rng):
    img = Tensor(rng.random((1, 5, 5, 3)))
    recon = _t(rng.random((1, 5, 5, 3)))
    logits = _t(rng.normal(size=(1, 5, 5, 3)))

    def f():
        soft = SP.soft_superpixelate(img, ops.softmax(logits, -1))
        return SP.edge_loss(img, recon, soft)

    return f, [recon, logits]


def check_tv(rng):
    M = _t(rng.normal(size=(2, 5, 4, 3)))
    return lambda: G.tv_loss(M), [M]


def check_mi(rng):
    a = _t(rng.normal(size=(2, 4, 4, 3)))
    b = _t(rng.normal(size=(2, 4, 4, 3)))
    return lambda: S.mi_loss(ops.softmax(a, -1), ops.softmax(b, -1)), [a, b]


def check_cnn_recon(rng):
    img = Tensor(rng.random((1, 4, 4, 3)))
    r1 = _t(rng.random((1, 4, 4, 3)))
    r2 = _t(rng.random((1, 4, 4, 3)))
    return lambda: S.cnn_recon_loss(img, r1, r2), [r1, r2]


def check_soft_superpixelate(rng):
    img = _t(rng.random((4, 4, 3)))
    logits = _t(rng.normal(size=(4, 4, 3)))
    w = rng.normal(size=(4, 4, 3))
    return lambda: ops.sum(SP.soft_superpixelate(img, ops.softmax(logits, -1)) * Tensor(w)), [img, logits]


def check_pooling_projection(rng):
    F = _t(rng.normal(size=(4, 4, 5)))
    logits = _t(rng.normal(size=(4, 4, 3)))
    w = rng.normal(size=(4, 4, 5))

    def f():
        P = ops.softmax(logits, -1)
        cloud = SP.pool_superpixel_features(F, P)
        return ops.sum(G.project_to_image(P, cloud.feats) * Tensor(w))

    return f, [F, logits]


def check_spnn(rng):
    net = SP.SuperpixelNet(3, 3, rng, width=1 / 32)
    img = _t(rng.random((1, 8, 8, 3)))
    wa = Tensor(rng.normal(size=(1, 8, 8, 3)))
    wr = Tensor(rng.normal(size=(1, 8, 8, 3)))

    def f():
        out = net(img)
        return ops.sum(out.assignment * wa) + ops.sum(out.recon * wr)

    return f, [img] + _params(net)[:4]


def _cloud(rng, n=6, c=4):
    feats = rng.normal(size=(n, c))
    feats[:, :2] = rng.random((n, 2))
    return feats


def check_pointnet(rng):
    block = G.PointNetBlock(4, 5, rng)
    x = _t(_cloud(rng))
    return lambda: _weights(block(x), np.random.default_rng(1)), [x] + _params(block)


def check_dgcnn(rng):
    block = G.DGCNNBlock(4, 5, rng)
    feats = _cloud(rng)
    graph = G.build_knn_graph(feats, 3)
    x = _t(feats)
    return lambda: _weights(block(x, None, graph), np.random.default_rng(1)), [x] + _params(block)


def check_diffgcn(rng):
    block = G.DiffGCNBlock(4, 5, rng)
    feats = _cloud(rng)
    graph = G.build_knn_graph(feats, 3)
    x = _t(feats)
    coords = _t(feats[:, :2])
    return lambda: _weights(block(x, coords, graph), np.random.default_rng(1)), [x, coords] + _params(block)


def check_gnn(rng):
    gnn = G.SuperpixelGNN(4, "diffgcn", rng, depth=2, width=1 / 16)
    feats = _cloud(rng)
    graph = G.build_knn_graph(feats, 3)
    x = _t(feats)
    return lambda: _weights(gnn(x, graph), np.random.default_rng(1)), [x] + _params(gnn)[:4]


def check_rasterized_conv(rng):
    x = _t(rng.normal(size=(1, 5, 5, 2)))
    conv = Conv2d(2, 3, 3, rng, bias=False)
    return lambda: _weights(S.rasterized_conv(x, conv.weight, "r2"), np.random.default_rng(1)), [x, conv.weight]


def check_residual_block(rng):
    block = S.ResidualBlock(2, 4, rng)
    x = _t(rng.normal(size=(1, 4, 4, 2)))
    return lambda: _weights(block(x, "r1"), np.random.default_rng(1)), [x] + _params(block)[:3]


def check_segmentation_cnn(rng):
    cnn = S.SegmentationCNN(5, 3, 3, rng, width=1 / 32)
    x = _t(rng.normal(size=(1, 6, 6, 5)))
    wp = Tensor(rng.normal(size=(1, 6, 6, 3)))
    wr = Tensor(rng.normal(size=(1, 6, 6, 3)))

    def f():
        out = cnn(x, "r1")
        return ops.sum(out.probs * wp) + ops.sum(out.recon * wr)

    return f, [x] + _params(cnn)[-4:]


CHECKS = {
    "clustering_loss": check_clustering,
    "smoothness_loss": check_smoothness,
    "spnn_recon_loss": check_spnn_recon,
    "edge_loss": check_edge,
    "tv_loss": check_tv,
    "mi_loss": check_mi,
    "cnn_recon_loss": check_cnn_recon,
    "soft_superpixelate": check_soft_superpixelate,
    "pool_and_project": check_pooling_projection,
    "spnn": check_spnn,
    "pointnet_block": check_pointnet,
    "dgcnn_block": check_dgcnn,
    "diffgcn_block": check_diffgcn,
    "gnn": check_gnn,
    "rasterized_conv": check_rasterized_conv,
    "residual_block": check_residual_block,
    "segmentation_cnn": check_segmentation_cnn,
}


def run_check(name, seed=0, max_coords=24):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    f, inputs = CHECKS[name](rng)
    err = gradcheck(f, inputs, h=1e-6, max_coords=max_coords, rng=np.random.default_rng(seed + 1))
    return CheckResult(name, err, time.perf_counter() - t0)


def run_suite(names=None, seed=0, max_coords=24):
    return [run_check(n, seed, max_coords) for n in (names or CHECKS)]
