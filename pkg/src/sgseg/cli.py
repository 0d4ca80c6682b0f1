"""``sgseg`` command line.

Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import contextlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import graph as G
from . import io
from . import superpixel as SP
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import PRESETS, ConfigError, emit_config, parse_config, parse_config_text, preset
from .evaluate import evaluate
from .synth import generate_synthetic
from .train import TrainingDiverged, build_model, restore, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class StageTimer:
    """Wall-clock per named stage; printed to stderr when enabled."""

    def __init__(self, enabled):
        self.enabled = enabled
        self.stages = []

    @contextlib.contextmanager
    def __call__(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages.append((name, time.perf_counter() - t0))

    def report(self, stream=None):
        if not self.enabled:
            return
        stream = sys.stderr if stream is None else stream
        for name, secs in self.stages:
            print(f"[time] {name}: {secs:.3f}s", file=stream)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _config_from_args(args):
    if getattr(args, "config", None):
        cfg = parse_config(args.config)
    else:
        cfg = preset(args.preset)
    overrides = getattr(args, "set", None) or []
    if overrides:
        text = emit_config(cfg) + "\n".join(overrides) + "\n"
        cfg = parse_config_text(text)
    return cfg


def _model_from_args(args):
    """Trained model from ``--checkpoint``, else a freshly initialized one."""
    if getattr(args, "checkpoint", None):
        ckpt = load_checkpoint(args.checkpoint)
        return ckpt.config, restore(ckpt)
    cfg = _config_from_args(args)
    return cfg, build_model(cfg)


def _load_input(args, cfg):
    img = io.load_image(args.image, ir_path=getattr(args, "ir", None), size=getattr(args, "size", None))
    if img.shape[-1] != cfg.in_channels:
        raise ValueError(f"{args.image}: {img.shape[-1]} channels, model expects {cfg.in_channels}")
    return img.astype(cfg.dtype)


def _stem(path):
    return Path(path).stem


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, timer):
    with timer("generate"):
        data = generate_synthetic(args.n, args.size, args.classes, args.seed)
    with timer("write"):
        io.write_dataset(args.out, data.images, data.labels)
    print(f"wrote {len(data)} images and labels to {args.out}")


def cmd_train(args, timer):
    cfg = _config_from_args(args)
    with timer("load"):
        ds = io.load_dataset(args.data, size=cfg.image_size)
    timings = {}
    try:
        with timer("train"):
            ckpt, _ = train(cfg, ds.images, timings=timings)
    except TrainingDiverged as exc:
        save_checkpoint(exc.checkpoint, args.out)
        raise RuntimeError(f"{exc}; last good checkpoint written to {args.out}") from exc
    with timer("save"):
        save_checkpoint(ckpt, args.out)
    for phase, secs in timings.items():
        timer.stages.append((f"train/{phase} ({len(secs)} epochs)", float(sum(secs))))
    final = ckpt.history.get("history.total")
    msg = f"trained {cfg.total_epochs} epochs on {len(ds.images)} images"
    if final is not None and final.size:
        msg += f"; final batch loss {final[-1]:.5f}"
    print(msg + f"; checkpoint {args.out}")


def cmd_infer(args, timer):
    with timer("load"):
        cfg, model = _model_from_args(args)
        img = _load_input(args, cfg)
    with timer("forward"):
        pred, out = model.predict(img[None])
    labels = pred[0].astype(np.uint8)
    out_path = Path(args.out)
    with timer("write"):
        io.save_labels(out_path, labels)
        if args.overlay:
            io.save_image(args.overlay, io.color_overlay(img, labels))
        if args.probs:
            np.save(args.probs, out.probs()[0])
    print(f"wrote {labels.shape[0]}x{labels.shape[1]} segmentation to {out_path}")


def cmd_superpixels(args, timer):
    with timer("load"):
        cfg, model = _model_from_args(args)
        img = _load_input(args, cfg)
    if model.spnn is None:
        raise ValueError("model has no superpixel network (components = cnn)")
    with timer("forward"):
        sp = model.superpixels(img[None], frozen=True)
        P = sp.assignment.data[0]
        hard = SP.hard_superpixelate(img, P)
        seg = SP.hard_assignment(P)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = _stem(args.image)
    with timer("write"):
        io.save_image(out / f"{stem}_superpixels.png", hard[..., :3])
        io.save_image(out / f"{stem}_boundaries.png", io.boundary_overlay(img, seg))
        io.save_labels(out / f"{stem}_assignment.png", seg.astype(np.uint8))
    print(f"{len(np.unique(seg))} superpixels in use; wrote images to {out}")


def cmd_eval(args, timer):
    with timer("load"):
        ckpt = load_checkpoint(args.checkpoint)
        model = restore(ckpt)
        ds = io.load_dataset(args.data, size=ckpt.config.image_size, require_labels=True)
    with timer("evaluate"):
        report = evaluate(model, ds.images, ds.labels)
    print(report.table())
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report.as_dict(), fh, indent=2)


def cmd_export_graph(args, timer):
    with timer("load"):
        cfg, model = _model_from_args(args)
        img = _load_input(args, cfg)
    if model.spnn is None:
        raise ValueError("model has no superpixel network (components = cnn)")
    with timer("graph"):
        sp = model.superpixels(img[None], frozen=True)
        F = SP.feature_map(img[None], sp.deep_features)
        cloud = SP.pool_superpixel_features(F, sp.assignment)
        g = G.build_knn_graph(cloud.feats.data[0], cfg.knn_k, cfg.knn_coords_only)
    G.export_graph(g, args.out)
    print(f"wrote {g.n_edges} edges over {g.n_nodes} nodes to {args.out}")


def cmd_gradcheck(args, timer):
    from .gradcheck_suite import CHECKS, TOLERANCE, run_suite

    names = args.only or list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise UsageError(f"unknown check(s) {unknown}; available: {', '.join(CHECKS)}")
    with timer("gradcheck"):
        results = run_suite(names, seed=args.seed)
    failed = 0
    for r in results:
        status = "ok" if r.ok else "FAIL"
        failed += not r.ok
        print(f"{status:4} {r.name:<20} rel.err {r.error:.3e}  ({r.seconds:.2f}s)")
    print(f"{len(results) - failed}/{len(results)} checks below {TOLERANCE:g}")
    if failed:
        raise RuntimeError(f"{failed} gradient check(s) failed")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_model_args(p):
    p.add_argument("--checkpoint", help="trained checkpoint (default: freshly initialized weights)")
    p.add_argument("--preset", default="synthetic", choices=sorted(PRESETS),
                   help="preset used without a checkpoint (default: synthetic)")
    p.add_argument("--config", help="config file used without a checkpoint")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")


def _add_image_args(p):
    p.add_argument("image", help="input PNG/PPM image")
    p.add_argument("--ir", help="separate grayscale IR channel for RGBIR models")
    p.add_argument("--size", type=int, help="resize the input to SIZE x SIZE first")


def build_parser():
    parser = _Parser(prog="sgseg", description=__doc__.splitlines()[0])
    parser.add_argument("--time", action="store_true", help="print per-stage wall-clock times to stderr")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress (per-epoch losses)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic band dataset")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset root to create")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True, help="dataset root with images/")
    p.add_argument("--preset", default="synthetic", choices=sorted(PRESETS))
    p.add_argument("--config", help="config file (overrides --preset)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="segment one image")
    _add_image_args(p)
    _add_model_args(p)
    p.add_argument("--out", required=True, help="indexed PNG of class ids")
    p.add_argument("--overlay", help="color overlay PNG")
    p.add_argument("--probs", help="save the class-probability array (.npy)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("superpixels", help="hard superpixelation and boundary overlay of one image")
    _add_image_args(p)
    _add_model_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_superpixels)

    p = sub.add_parser("eval", help="Hungarian-matched pixel accuracy on a labelled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root with images/ and labels/")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-graph", help="write the superpixel k-nn graph of one image")
    _add_image_args(p)
    _add_model_args(p)
    p.add_argument("--out", required=True, help="edge-list text file")
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--only", action="append", metavar="NAME", help="run only this check (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip() + "\nsgseg: error: a subcommand is required")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    timer = StageTimer(args.time)
    try:
        args.func(args, timer)
    except UsageError as exc:
        print(f"sgseg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"sgseg {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, OSError, ValueError, RuntimeError) as exc:
        print(f"sgseg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        timer.report()
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
