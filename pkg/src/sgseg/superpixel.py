"""Superpixel extraction network, superpixel pooling and the SPNN losses.

Images and assignment maps are channels-last, either a single ``(H, W, .)``
raster or a batch ``(B, H, W, .)``. Batched losses are the mean of the
per-image losses.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, ops
from .tensor.nn import Conv2d, ConvBNReLU, Module, scaled

EPS = 1e-8
LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass
class SpnnOutput:
    assignment: Tensor  # (.., H, W, N), rows sum to 1
    recon: Tensor  # (.., H, W, C) in (0, 1)
    deep_features: Tensor  # (.., H, W, D) post-ReLU penultimate layer

    @property
    def n_superpixels(self):
        return self.assignment.shape[-1]


@dataclass
class SuperpixelCloud:
    feats: Tensor  # (.., N, 2 + C + D): x, y, mean colour, deep features
    mass: Tensor  # (.., N) summed assignment probability

    @property
    def coords(self):
        return self.feats[..., :2]


def _batched(t):
    t = as_tensor(t)
    if t.ndim == 3:
        return ops.reshape(t, (1,) + t.shape), True
    return t, False


def _unbatch(t, squeeze):
    return ops.reshape(t, t.shape[1:]) if squeeze else t


class SuperpixelNet(Module):
    """Fully convolutional per-pixel superpixel classifier.

    Layer widths are those of the reference architecture times ``width``:
    5x5 conv 64, 3x3 convs 128/256/512, depthwise atrous 3x3 at dilations
    1, 2, 4 concatenated, 3x3 conv 512 (the deep features) and a 1x1 head
    producing ``n_superpixels`` assignment logits plus ``in_channels``
    reconstruction channels.
    """

    def __init__(self, n_superpixels, in_channels=3, rng=None, width=1.0, dtype=np.float64):
        rng = np.random.default_rng(0) if rng is None else rng
        c64, c128, c256, c512 = (scaled(c, width) for c in (64, 128, 256, 512))
        self.n_superpixels = n_superpixels
        self.in_channels = in_channels
        self.deep_dim = c512
        self.stem = [
            ConvBNReLU(in_channels, c64, 5, rng, dtype=dtype),
            ConvBNReLU(c64, c128, 3, rng, dtype=dtype),
            ConvBNReLU(c128, c256, 3, rng, dtype=dtype),
            ConvBNReLU(c256, c512, 3, rng, dtype=dtype),
        ]
        self.atrous = [
            Conv2d(c512, c512, 3, rng, dilation=d, groups=c512, dtype=dtype) for d in (1, 2, 4)
        ]
        self.fuse = ConvBNReLU(3 * c512, c512, 3, rng, dtype=dtype)
        self.head = Conv2d(c512, n_superpixels + in_channels, 1, rng, dtype=dtype)

    def forward(self, image) -> SpnnOutput:
        x, squeeze = _batched(image)
        if x.shape[1] < 8 or x.shape[2] < 8:
            raise ValueError(f"image must be at least 8x8, got {x.shape[1]}x{x.shape[2]}")
        if x.shape[3] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[3]}")
        for layer in self.stem:
            x = layer(x)
        x = ops.concat([conv(x) for conv in self.atrous], axis=-1)
        deep = self.fuse(x)
        logits = self.head(deep)
        N = self.n_superpixels
        P = ops.softmax(logits[..., :N], axis=-1)
        recon = ops.sigmoid(logits[..., N:])
        return SpnnOutput(_unbatch(P, squeeze), _unbatch(recon, squeeze), _unbatch(deep, squeeze))


def spnn_forward(image, net: SuperpixelNet) -> SpnnOutput:
    return net(image)


# ---------------------------------------------------------------------------
# superpixelation
# ---------------------------------------------------------------------------


def _segment_means(I, P):
    """Per-superpixel weighted means ``(B, N, C)`` and masses ``(B, N, 1)``."""
    B, H, W, N = P.shape
    Pf = ops.reshape(P, (B, H * W, N))
    If = ops.reshape(I, (B, H * W, I.shape[-1]))
    num = ops.matmul(ops.transpose(Pf, (0, 2, 1)), If)
    den = ops.sum(Pf, axis=1)
    den = ops.reshape(den, den.shape + (1,))
    return num / ops.clamp_min(den, EPS), den, Pf


def soft_superpixelate(image, P):
    """Each pixel becomes the P-weighted blend of the superpixel mean colours."""
    I, squeeze = _batched(image)
    Pb, _ = _batched(P)
    if I.shape[:3] != Pb.shape[:3]:
        raise ValueError(f"image {I.shape} and assignment {Pb.shape} disagree spatially")
    means, _, Pf = _segment_means(I, Pb)
    out = ops.matmul(Pf, means)
    return _unbatch(ops.reshape(out, I.shape), squeeze)


def hard_assignment(P):
    """Argmax superpixel per pixel; ties go to the lower index."""
    return np.argmax(as_tensor(P).data, axis=-1)


def one_hot(labels, n, dtype=np.float64):
    return (np.asarray(labels)[..., None] == np.arange(n)).astype(dtype)


def hard_superpixelate(image, P):
    """Replace every pixel with the mean colour of its argmax superpixel.

    Computed as the soft blend under the one-hot argmax map, which reduces
    exactly to the per-segment mean. Not differentiable; returns an ndarray.
    """
    P = as_tensor(P).data
    image = as_tensor(image).data
    H1 = one_hot(hard_assignment(P), P.shape[-1], dtype=image.dtype)
    return soft_superpixelate(Tensor(image), Tensor(H1)).data


def coordinate_planes(H, W, dtype=np.float64):
    """Normalized (x, y) planes in [0, 1], shape (H, W, 2)."""
    ys = np.linspace(0.0, 1.0, H) if H > 1 else np.zeros(1)
    xs = np.linspace(0.0, 1.0, W) if W > 1 else np.zeros(1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx, yy], axis=-1).astype(dtype)


def feature_map(image, deep_features):
    """Stack coordinates, colours and deep features into the pooled feature map."""
    I, squeeze = _batched(image)
    D, _ = _batched(deep_features)
    B, H, W, _ = I.shape
    xy = Tensor(np.broadcast_to(coordinate_planes(H, W, I.dtype), (B, H, W, 2)).copy())
    return _unbatch(ops.concat([xy, I, D], axis=-1), squeeze)


def pool_superpixel_features(F, P) -> SuperpixelCloud:
    """Assignment-weighted mean of the feature map per superpixel."""
    Fb, squeeze = _batched(F)
    Pb, _ = _batched(P)
    means, den, _ = _segment_means(Fb, Pb)
    mass = ops.reshape(den, den.shape[:-1])
    return SuperpixelCloud(_unbatch(means, squeeze), ops.reshape(mass, mass.shape[1:]) if squeeze else mass)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def clustering_loss(P, lam=2.0):
    """Mean pixel entropy minus ``lam`` times the entropy of the mean assignment."""
    Pb, _ = _batched(P)
    B, H, W, N = Pb.shape
    pixel_entropy = -ops.sum(ops.xlogx(Pb)) / (B * H * W)
    Phat = ops.mean(Pb, axis=(1, 2))  # (B, N)
    weight_negentropy = ops.sum(ops.xlogx(Phat)) / B
    return pixel_entropy + lam * weight_negentropy


def smoothness_loss(P, image, sigma=10.0):
    """Edge-aware L1 smoothness of the assignment map."""
    Pb, _ = _batched(P)
    I = _batched(image)[0]
    total = None
    for axis in (2, 1):  # x then y
        dP = ops.sum(ops.abs(ops.forward_diff(Pb, axis)), axis=-1)
        dI = ops.forward_diff(I, axis)
        w = ops.exp(ops.sum(dI * dI, axis=-1) * (-1.0 / sigma))
        term = dP * w
        total = term if total is None else total + term
    return ops.mean(total)


def recon_loss(image, recon, softsp):
    I = as_tensor(image)
    C = I.shape[-1]
    n_pix = I.size // C
    a = I - recon
    b = I - softsp
    return (ops.sum(a * a) + ops.sum(b * b)) / (C * n_pix)


def edge_log_probs(x):
    """Per-channel Laplacian response, log-softmaxed over spatial positions."""
    xb, _ = _batched(x)
    B, H, W, C = xb.shape
    k = np.repeat(LAPLACIAN[:, :, None, None], C, axis=3).astype(xb.dtype)
    resp = ops.conv2d(xb, Tensor(k), groups=C)
    return ops.log_softmax(ops.reshape(resp, (B, H * W, C)), axis=1)


def kl_divergence_spatial(logp, logq):
    """Mean over (batch, channel) of KL(p || q) summed over spatial positions."""
    p = ops.exp(logp)
    kl = ops.sum(p * (logp - logq), axis=1)  # (B, C)
    return ops.mean(kl)


def edge_loss(image, recon, softsp):
    ref = edge_log_probs(as_tensor(image).detach())
    return kl_divergence_spatial(ref, edge_log_probs(recon)) + kl_divergence_spatial(ref, edge_log_probs(softsp))


@dataclass
class SpnnLoss:
    total: Tensor
    clustering: Tensor
    smoothness: Tensor
    recon: Tensor
    edge: Tensor

    def parts(self):
        return {
            "clustering": float(self.clustering.data),
            "smoothness": float(self.smoothness.data),
            "recon": float(self.recon.data),
            "edge": float(self.edge.data),
        }


def spnn_loss(clustering, smoothness, recon, edge, alpha=2.0, beta=5.0, eta=1.0) -> SpnnLoss:
    for name, v in (("alpha", alpha), ("beta", beta), ("eta", eta)):
        if v < 0:
            raise ValueError(f"{name} must be non-negative, got {v}")
    parts = [as_tensor(t) for t in (clustering, smoothness, recon, edge)]
    total = parts[0] + alpha * parts[1] + beta * parts[2] + eta * parts[3]
    return SpnnLoss(total, *parts)


def spnn_objective(image, out: SpnnOutput, alpha=2.0, beta=5.0, eta=1.0, lam=2.0, sigma=10.0):
    """All four SPNN losses for a forward pass. Returns (SpnnLoss, soft-superpixelated image)."""
    I = as_tensor(image)
    softsp = soft_superpixelate(I, out.assignment)
    loss = spnn_loss(
        clustering_loss(out.assignment, lam),
        smoothness_loss(out.assignment, I, sigma),
        recon_loss(I, out.recon, softsp),
        edge_loss(I, out.recon, softsp),
        alpha,
        beta,
        eta,
    )
    return loss, softsp
