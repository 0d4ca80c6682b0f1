"""Full pipeline: superpixels -> pooled cloud -> GNN -> projection -> segmentation CNN."""

from dataclasses import dataclass, field

import numpy as np

from . import graph as G
from . import seghead as S
from . import superpixel as SP
from .tensor import Tensor, as_tensor, no_grad, ops
from .tensor.nn import Module

COMPONENTS = ("full", "spnn", "cnn")


@dataclass
class PipelineOutput:
    image: Tensor
    spnn: SP.SpnnOutput = None
    cloud: SP.SuperpixelCloud = None
    graph: G.SpGraph = None
    refined: Tensor = None  # (B, N, d) node features fed to the projection
    projected: Tensor = None  # (B, H, W, d)
    seg: dict = field(default_factory=dict)  # rasterization id -> SegOutput

    def probs(self):
        """Class probabilities averaged over the evaluated rasterizations."""
        outs = [o.probs.data for o in self.seg.values()]
        return sum(outs) / len(outs)


class SegmentationPipeline(Module):
    """``components`` selects the ablation: ``full`` (SPNN + GNN + CNN),
    ``spnn`` (superpixel features projected without the GNN) or ``cnn``
    (segmentation CNN on the raw image)."""

    def __init__(
        self,
        n_superpixels=200,
        n_classes=3,
        in_channels=3,
        backbone="diffgcn",
        knn_k=20,
        width=1.0,
        components="full",
        knn_coords_only=False,
        seed=0,
        dtype=np.float64,
    ):
        if components not in COMPONENTS:
            raise ValueError(f"components must be one of {COMPONENTS}, got {components!r}")
        rng = np.random.default_rng(seed)
        self.components = components
        self.knn_k = knn_k
        self.knn_coords_only = knn_coords_only
        self.in_channels = in_channels
        self.n_classes = n_classes
        self.spnn = None
        self.gnn = None
        cnn_in = in_channels
        if components != "cnn":
            self.spnn = SP.SuperpixelNet(n_superpixels, in_channels, rng, width=width, dtype=dtype)
            cloud_dim = 2 + in_channels + self.spnn.deep_dim
            if components == "full":
                self.gnn = G.SuperpixelGNN(cloud_dim, backbone, rng, width=width, dtype=dtype)
                cnn_in += self.gnn.out_dim
            else:
                cnn_in += cloud_dim
        self.cnn = S.SegmentationCNN(cnn_in, n_classes, in_channels, rng, width=width, dtype=dtype)

    def groups(self):
        """Parameter groups keyed by sub-network name."""
        out = {}
        for name in ("spnn", "gnn", "cnn"):
            net = getattr(self, name)
            if net is not None:
                out[name] = list(net.named_parameters(f"{name}."))
        return out

    def superpixels(self, images, frozen=False) -> SP.SpnnOutput:
        if frozen:
            was = self.spnn.training
            self.spnn.eval()
            with no_grad():
                out = self.spnn(images)
            self.spnn.train(was)
            return out
        return self.spnn(images)

    def forward(self, images, rasterizations=("r1", "r2"), spnn_frozen=False, spnn_out=None):
        I = as_tensor(images)
        if I.ndim == 3:
            I = ops.reshape(I, (1,) + I.shape)
        out = PipelineOutput(image=I)
        x = I
        if self.components != "cnn":
            sp = spnn_out if spnn_out is not None else self.superpixels(I, frozen=spnn_frozen)
            out.spnn = sp
            F = SP.feature_map(I, sp.deep_features)
            cloud = SP.pool_superpixel_features(F, sp.assignment)
            out.cloud = cloud
            B, N, c = cloud.feats.shape
            if self.gnn is not None:
                graphs = [
                    G.build_knn_graph(cloud.feats.data[b], self.knn_k, self.knn_coords_only) for b in range(B)
                ]
                out.graph = G.batch_graphs(graphs)
                flat = ops.reshape(cloud.feats, (B * N, c))
                refined = ops.reshape(self.gnn(flat, out.graph), (B, N, self.gnn.out_dim))
            else:
                refined = cloud.feats
            out.refined = refined
            out.projected = G.project_to_image(sp.assignment, refined)
            x = ops.concat([I, out.projected], axis=-1)
        for r in rasterizations:
            out.seg[r] = self.cnn(x, r)
        return out

    def predict(self, images):
        """Hard class map (B, H, W) from the rasterization-averaged probabilities."""
        was = self.training
        self.eval()
        with no_grad():
            out = self.forward(images)
        self.train(was)
        return out.probs().argmax(axis=-1), out
