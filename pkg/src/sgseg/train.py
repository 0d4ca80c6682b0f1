"""Training loop for the three schemes.

``disjoint``: SPNN alone for ``pretrain_epochs``, then GNN + CNN with the
SPNN frozen. ``end_to_end``: everything jointly from the start.
``pretrain_then_e2e``: SPNN alone for ``pretrain_epochs``, then jointly.
"""

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import graph as G
from . import seghead as S
from . import superpixel as SP
from .checkpoint import Checkpoint
from .config import TrainConfig
from .model import SegmentationPipeline
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, checkpoint):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class LossBreakdown:
    total: Tensor
    parts: dict = field(default_factory=dict)

    def logged_sum(self):
        return sum(v for k, v in self.parts.items() if k in ("spnn", "gnn", "cnn"))


def total_loss(parts: dict):
    """Unit-weight sum of the module losses present in ``parts``."""
    out = None
    for key in ("spnn", "gnn", "cnn"):
        if key in parts and parts[key] is not None:
            out = parts[key] if out is None else out + parts[key]
    if out is None:
        return Tensor(np.zeros(()))
    return out


def build_model(cfg: TrainConfig) -> SegmentationPipeline:
    dtype = np.dtype(cfg.dtype)
    model = SegmentationPipeline(
        n_superpixels=cfg.n_superpixels,
        n_classes=cfg.n_classes,
        in_channels=cfg.in_channels,
        backbone=cfg.backbone,
        knn_k=cfg.knn_k,
        width=cfg.width,
        components=cfg.components,
        knn_coords_only=cfg.knn_coords_only,
        seed=cfg.seed,
        dtype=dtype,
    )
    return model


def batch_losses(model, cfg: TrainConfig, images, phase) -> LossBreakdown:
    """Loss for one batch. ``phase`` is ``spnn`` (superpixel losses only),
    ``frozen`` (GNN + CNN on a fixed SPNN) or ``joint``."""
    I = Tensor(images)
    parts = {}
    logged = {}
    if phase == "spnn":
        sp = model.spnn(I)
        l_spnn, _ = SP.spnn_objective(I, sp, cfg.alpha, cfg.beta, cfg.eta, cfg.lam, cfg.sigma)
        parts["spnn"] = l_spnn.total
        logged.update(l_spnn.parts())
    else:
        out = model.forward(I, spnn_frozen=(phase == "frozen"))
        if out.spnn is not None and phase == "joint":
            l_spnn, _ = SP.spnn_objective(I, out.spnn, cfg.alpha, cfg.beta, cfg.eta, cfg.lam, cfg.sigma)
            parts["spnn"] = l_spnn.total
            logged.update(l_spnn.parts())
        if out.projected is not None and model.gnn is not None:
            parts["gnn"] = G.tv_loss(out.projected)
        r1, r2 = out.seg["r1"], out.seg["r2"]
        l_cnn = S.cnn_loss(S.mi_loss(r1.probs, r2.probs), S.cnn_recon_loss(I, r1.recon, r2.recon))
        parts["cnn"] = l_cnn.total
        logged.update(l_cnn.parts())
    total = total_loss(parts)
    logged.update({k: float(v.data) for k, v in parts.items()})
    logged["total"] = float(total.data)
    return LossBreakdown(total, logged)


def _phase(cfg: TrainConfig, epoch, model):
    if model.spnn is None:
        return "joint"
    if cfg.scheme == "end_to_end":
        return "joint"
    if epoch < cfg.pretrain_epochs:
        return "spnn"
    return "frozen" if cfg.scheme == "disjoint" else "joint"


def _active_groups(phase, model):
    if phase == "spnn":
        return ["spnn"]
    groups = [g for g in ("spnn", "gnn", "cnn") if getattr(model, g) is not None]
    if phase == "frozen":
        groups.remove("spnn")
    return groups


def make_checkpoint(cfg, model, opt, history) -> Checkpoint:
    ckpt = Checkpoint(copy.deepcopy(cfg))
    ckpt.weights = {k: np.array(v, copy=True) for k, v in model.state_dict().items()}
    ckpt.optimizer = {k: np.array(v, copy=True) for k, v in opt.state_dict().items()}
    if history:
        keys = sorted({k for rec in history for k in rec})
        ckpt.history = {
            f"history.{k}": np.array([rec.get(k, np.nan) for rec in history], dtype=np.float64) for k in keys
        }
    return ckpt


def restore(ckpt: Checkpoint):
    """Model (and optimizer) rebuilt from a checkpoint."""
    model = build_model(ckpt.config)
    model.load_state_dict(ckpt.weights)
    return model


def _augment(images, rng):
    flip = rng.random(images.shape[0]) < 0.5
    out = images.copy()
    out[flip] = out[flip, :, ::-1]
    return out


def train(cfg: TrainConfig, images, callback=None, timings=None):
    """Train on ``images`` (n, H, W, C) in [0, 1]. Returns ``(checkpoint, model)``.

    ``checkpoint.history`` holds one record per optimizer step (``history.total``
    etc.) plus ``history.epoch`` for the epoch index of each step.
    """
    cfg.validate()
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError(f"need a non-empty (n, H, W, C) image array, got shape {images.shape}")
    if images.shape[-1] != cfg.in_channels:
        raise ValueError(f"images have {images.shape[-1]} channels, config expects {cfg.in_channels}")
    dtype = np.dtype(cfg.dtype)
    images = images.astype(dtype)
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg)
    groups = model.groups()
    lrs = {"spnn": cfg.lr_spnn, "gnn": cfg.lr_gnn, "cnn": cfg.lr_cnn}
    opt = Adam({name: (params, lrs[name]) for name, params in groups.items()})
    history = []
    last_good = make_checkpoint(cfg, model, opt, history)
    n = images.shape[0]
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.total_epochs):
        phase = _phase(cfg, epoch, model)
        active = _active_groups(phase, model)
        model.train()
        perm = rng.permutation(n)
        t0 = time.perf_counter()
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            batch = images[idx]
            if cfg.augment:
                batch = _augment(batch, rng)
            opt.zero_grad()
            loss = batch_losses(model, cfg, batch, phase)
            if not np.isfinite(loss.parts["total"]):
                raise TrainingDiverged(f"loss became {loss.parts['total']} at epoch {epoch}", last_good)
            loss.total.backward()
            try:
                opt.step(active)
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), last_good) from exc
            rec = dict(loss.parts, epoch=epoch)
            history.append(rec)
        if timings is not None:
            timings.setdefault(phase, []).append(time.perf_counter() - t0)
        ep = [r["total"] for r in history if r["epoch"] == epoch]
        log.info("epoch %d (%s): loss %.5f", epoch, phase, float(np.mean(ep)))
        last_good = make_checkpoint(cfg, model, opt, history)
        if callback is not None:
            callback(epoch, phase, model, history)
    return last_good, model


def epoch_means(history, key="total"):
    """Mean of ``key`` per epoch from a checkpoint history dict or a record list."""
    if isinstance(history, dict):
        ep = history["history.epoch"].astype(int)
        vals = history[f"history.{key}"]
    else:
        ep = np.array([r["epoch"] for r in history])
        vals = np.array([r[key] for r in history])
    return np.array([vals[ep == e].mean() for e in np.unique(ep)])
