"""Segmentation CNN with rasterized (autoregressive) convolutions, the
mutual-information loss between two rasterizations and the CNN reconstruction loss."""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, ops
from .tensor.nn import BatchNorm, Conv2d, ConvBNReLU, Module, scaled

RESIDUAL_CHANNELS = (128, 128, 256, 512)


def causal_mask(k=3):
    """Taps strictly before the centre in top-left to bottom-right raster order."""
    m = np.zeros((k, k))
    c = k // 2
    m[:c, :] = 1.0
    m[c, :c] = 1.0
    return m


RASTERIZATIONS = {
    "r1": causal_mask(3),
    "r2": np.rot90(causal_mask(3), 2).copy(),
}


@dataclass(frozen=True)
class Rasterization:
    id: str

    def __post_init__(self):
        if self.id not in RASTERIZATIONS:
            raise ValueError(f"unknown rasterization {self.id!r}; expected one of {sorted(RASTERIZATIONS)}")

    @property
    def mask(self):
        return RASTERIZATIONS[self.id]


def _raster(r):
    return r if isinstance(r, Rasterization) else Rasterization(r)


def rasterized_conv(x, weight, r, dilation=1):
    """conv2d with the kernel multiplied tap-wise by the rasterization mask."""
    r = _raster(r)
    weight = as_tensor(weight)
    if weight.shape[:2] != (3, 3):
        raise ValueError(f"rasterized convolution needs a 3x3 kernel, got {weight.shape[:2]}")
    mask = Tensor(r.mask[:, :, None, None].astype(weight.dtype))
    return ops.conv2d(x, weight * mask, dilation=dilation)


@dataclass
class SegOutput:
    probs: Tensor
    recon: Tensor


class ResidualBlock(Module):
    def __init__(self, cin, cout, rng, dtype=np.float64):
        self.cin, self.cout = cin, cout
        self.ac = Conv2d(cin, cout, 3, rng, bias=False, dtype=dtype)
        self.ac_bn = BatchNorm(cout, dtype=dtype)
        self.pw = ConvBNReLU(cout, cout, 1, rng, dtype=dtype)
        self.sub = [
            (ConvBNReLU(cout, cout, 1, rng, dtype=dtype), Conv2d(cout, cout, 1, rng, dtype=dtype))
            for _ in range(2)
        ]
        # flatten for parameter discovery
        self.sub_layers = [layer for pair in self.sub for layer in pair]

    def forward(self, x, r):
        h = ops.relu(self.ac_bn(rasterized_conv(x, self.ac.weight, r)))
        h = self.pw(h)
        skip = ops.pad_channels(x, self.cout - self.cin) if self.cout > self.cin else x
        out = h + skip
        for first, second in self.sub:
            out = out + second(first(out))
        return out


class SegmentationCNN(Module):
    """3x3 conv 64, 2x2 max-pool, four residual blocks, two 1x1 convs,
    bilinear x2 upsampling, then a softmax over the first ``n_classes``
    channels and, in parallel, a 3x3 conv reconstructing the image.

    The reconstruction passes through a sigmoid so it lives in the image's
    [0, 1] range, as the superpixel network's does. Left linear, it inherits
    the scale of the unnormalized residual stream; its squared error then
    starts orders of magnitude above the mutual information and drowns it."""

    def __init__(self, in_channels, n_classes, image_channels=3, rng=None, width=1.0, dtype=np.float64):
        if n_classes < 2:
            raise ValueError("need at least 2 classes")
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_classes = n_classes
        self.image_channels = image_channels
        c_out = n_classes + image_channels
        c = scaled(64, width)
        self.stem = ConvBNReLU(in_channels, c, 3, rng, dtype=dtype)
        self.blocks = []
        for co in RESIDUAL_CHANNELS:
            co = scaled(co, width)
            self.blocks.append(ResidualBlock(c, co, rng, dtype=dtype))
            c = co
        self.head1 = Conv2d(c, c_out, 1, rng, dtype=dtype)
        self.head2 = Conv2d(c_out, c_out, 1, rng, dtype=dtype)
        self.recon = Conv2d(c_out, image_channels, 3, rng, dtype=dtype)

    def forward(self, x, r) -> SegOutput:
        x = as_tensor(x)
        H, W = x.shape[-3], x.shape[-2]
        if H % 2 or W % 2:
            raise ValueError(f"spatial extent must be even, got {H}x{W}")
        r = _raster(r)
        h = ops.max_pool2x(self.stem(x))
        for block in self.blocks:
            h = block(h, r)
        h = ops.bilinear_upsample2x(self.head2(self.head1(h)))
        probs = ops.softmax(h[..., : self.n_classes], axis=-1)
        return SegOutput(probs, ops.sigmoid(self.recon(h)))


def seg_cnn_forward(x, r, cnn: SegmentationCNN) -> SegOutput:
    return cnn(x, r)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def joint_distribution(m1, m2):
    """Symmetrized joint class distribution of two per-pixel predictions."""
    m1 = as_tensor(m1)
    m2 = as_tensor(m2)
    k = m1.shape[-1]
    if k < 2:
        raise ValueError("mutual information needs k >= 2 classes")
    if m1.shape != m2.shape:
        raise ValueError(f"prediction shapes differ: {m1.shape} vs {m2.shape}")
    a = ops.reshape(m1, (-1, k))
    b = ops.reshape(m2, (-1, k))
    J = ops.matmul(ops.transpose(a), b) / a.shape[0]
    return (J + ops.transpose(J)) * 0.5


def mutual_information(m1, m2):
    """H(row marginal) - H(row | column) of the symmetrized joint, natural log."""
    J = joint_distribution(m1, m2)
    pr = ops.sum(J, axis=1)
    pc = ops.sum(J, axis=0)
    h_row = -ops.sum(ops.xlogx(pr))
    h_cond = -ops.sum(ops.xlogx(J)) + ops.sum(ops.xlogx(pc))
    return h_row - h_cond


def mi_loss(m1, m2):
    """Negative mutual information (minimized during training)."""
    return -mutual_information(m1, m2)


def cnn_recon_loss(image, recon_r1, recon_r2):
    I = as_tensor(image)
    a = recon_r1 - I
    b = recon_r2 - I
    return (ops.sum(a * a) + ops.sum(b * b)) / I.size


@dataclass
class CnnLoss:
    total: Tensor
    mi: Tensor
    recon: Tensor

    def parts(self):
        return {"mi": float(self.mi.data), "cnn_recon": float(self.recon.data)}


def cnn_loss(mi, recon) -> CnnLoss:
    mi, recon = as_tensor(mi), as_tensor(recon)
    return CnnLoss(mi + recon, mi, recon)
