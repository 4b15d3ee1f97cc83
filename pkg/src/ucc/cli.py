"""Command line entry point.

Exit codes: 0 success, 1 a theory check failed, 2 bad input or
configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as uio
from .bags import InstancePool
from .config import RunConfig, format_config, load_config
from .errors import ContractError, FormatError, NumericError, ShapeError
from .model import predicted_labels, train
from .oracle import UccOracle, check_prop1, check_prop3, check_propB1, check_propB3, cluster_by_ucc
from .cluster import clustering_accuracy
from .pipeline import (cluster_pool, eval_ucc, image_sets, model_from_config, pool_bags,
                       pool_from_config, thresholds, train_config)
from .segmentation import (build_reference, image_bags, mean_metrics, patchify, pixel_metrics,
                           segment)
from .synthetic import SyntheticSpec, TextureSpec, gen_synthetic, gen_texture_images

log = logging.getLogger("ucc")


def _kv(pairs) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _emit(out: Path, name: str, pairs) -> None:
    text = _kv(pairs)
    sys.stdout.write(text)
    uio.atomic_write(out / name, text)


def cmd_gen_data(cfg: RunConfig, out: Path, args) -> int:
    g = cfg.gen
    if g.kind == "blobs":
        spec = SyntheticSpec(g.classes, g.dim, g.per_class, g.scale, g.separation, cfg.seed)
        pool = gen_synthetic(spec)
        uio.write_pool(out / "pool.txt", pool)
        _emit(out, "gen.txt", [("kind", "blobs"), ("instances", pool.size), ("dim", pool.dim),
                               ("classes", pool.n_classes)])
        return 0
    tex = TextureSpec(size=g.image_size, channels=g.channels)
    rng = np.random.default_rng(cfg.seed)
    for name, n in (("train", g.train_images), ("val", g.val_images), ("test", g.images)):
        uio.write_image_set(out / name, gen_texture_images(n, tex, rng))
    _emit(out, "gen.txt", [("kind", "textures"), ("train", g.train_images),
                           ("val", g.val_images), ("test", g.images)])
    return 0


def _write_report(out: Path, report) -> None:
    rows = ["iteration\ttrain_loss\tval_loss\tval_accuracy"]
    for it, tl, vl, va in zip(report.iterations, report.train_loss, report.val_loss,
                              report.val_accuracy):
        rows.append(f"{it}\t{tl:.8g}\t{vl:.8g}\t{va:.6f}")
    uio.atomic_write(out / "train_report.tsv", "\n".join(rows) + "\n")


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    rng = np.random.default_rng(cfg.seed)
    train_images, val_images = image_sets(cfg)
    if train_images is not None:
        t = thresholds(cfg)
        if val_images is None:
            cut = max(1, len(train_images) // 4)
            val_images, train_images = train_images[:cut], train_images[cut:]
        train_bags = image_bags(train_images, cfg.seg.patch_size, t)
        val_bags = image_bags(val_images, cfg.seg.patch_size, t)
        if not train_bags or not val_bags:
            raise ContractError("no labelled images left after discarding the gap bands")
        input_dim = train_bags[0][0].shape[1]
    else:
        pool = pool_from_config(cfg, args.pool)
        train_bags, val_bags = pool_bags(cfg, pool, rng)
        input_dim = pool.dim
    model = model_from_config(cfg, input_dim)
    uio.atomic_write(out / "config.txt", format_config(cfg))
    best, report = train(model, train_bags, val_bags, train_config(cfg))
    uio.save_model(out / "model.uccm", best)
    _write_report(out, report)
    _emit(out, "train_summary.txt", [
        ("best_iteration", report.best_iteration), ("stopped_at", report.stopped_at),
        ("val_loss", _fmt(report.best_val_loss) if report.val_loss else "nan"),
        ("val_accuracy", _fmt(report.best_val_accuracy) if report.val_loss else "nan")])
    return 0


def _check_dims(model, dim: int) -> None:
    if model.input_dim != dim:
        raise ShapeError(f"checkpoint expects instances of dimension {model.input_dim}, "
                         f"pool has {dim}")


def cmd_cluster(cfg: RunConfig, out: Path, args) -> int:
    model = uio.load_model(args.checkpoint)
    pool = pool_from_config(cfg, args.pool)
    _check_dims(model, pool.dim)
    c = cfg.cluster
    res = cluster_pool(model, pool, args.method or c.method, args.k or c.k, c.restarts,
                       c.affinity_scale, rng=cfg.seed)
    uio.atomic_write(out / "assignments.txt",
                     "".join(f"{int(v)}\n" for v in res.assignment.labels))
    pairs = [("method", args.method or c.method), ("clusters", res.assignment.n_clusters),
             ("points", len(res.assignment))]
    if res.assignment.inertia is not None:
        pairs.append(("inertia", f"{res.assignment.inertia:.8g}"))
    if res.accuracy is not None:
        pairs.append(("clustering_accuracy", _fmt(res.accuracy)))
        pairs.append(("min_js_divergence", _fmt(res.js.min_offdiag)))
        rows = ["\t".join(["class"] + [str(k) for k in res.js.classes])]
        for k, row in zip(res.js.classes, res.js.values):
            rows.append("\t".join([str(k)] + [f"{v:.6f}" for v in row]))
        uio.atomic_write(out / "js_matrix.tsv", "\n".join(rows) + "\n")
    _emit(out, "cluster_metrics.txt", pairs)
    return 0


def cmd_eval_ucc(cfg: RunConfig, out: Path, args) -> int:
    model = uio.load_model(args.checkpoint)
    pool = pool_from_config(cfg, args.pool)
    _check_dims(model, pool.dim)
    trials = args.trials or cfg.eval.trials
    bag_size = cfg.eval.bag_size or cfg.data.bag_size
    ev = eval_ucc(model, pool, trials, bag_size, rng=cfg.seed)
    rows = ["true\\pred\t" + "\t".join(f"ucc{u}" for u in ev.labels)]
    for u, row in zip(ev.labels, ev.confusion):
        rows.append(f"ucc{u}\t" + "\t".join(str(int(v)) for v in row))
    uio.atomic_write(out / "confusion_matrix.tsv", "\n".join(rows) + "\n")
    _emit(out, "ucc_eval.txt", [("trials_per_label", trials), ("bag_size", bag_size),
                                ("ucc_accuracy", _fmt(ev.accuracy))])
    return 0


def cmd_eval_seg(cfg: RunConfig, out: Path, args) -> int:
    model = uio.load_model(args.checkpoint)
    test = uio.read_image_set(args.images)
    ref_dir = args.reference_images or cfg.seg.reference_images or cfg.data.images
    if not ref_dir:
        raise ContractError("no reference images: set seg.reference_images or data.images")
    refs = uio.read_image_set(ref_dir)
    p = cfg.seg.patch_size
    if test and patchify(test[0].pixels, p).shape[1] != model.input_dim:
        raise ShapeError("image patches do not match the checkpoint's input dimension")
    reference = build_reference(model, refs, p, thresholds(cfg))
    masks = segment(model, test, p, reference, cfg.seg.clusterer, cfg.seg.per_image, cfg.seed)
    metrics = [pixel_metrics(m, img.mask) for m, img in zip(masks, test)]
    rows = ["image\tTPR\tFPR\tTNR\tFNR\tPA"]
    for i, m in enumerate(metrics):
        rows.append(f"{i}\t" + "\t".join(f"{v:.6f}" for v in m.row()))
    mean = mean_metrics(metrics)
    rows.append("mean\t" + "\t".join(f"{mean[k]:.6f}" for k in ("TPR", "FPR", "TNR", "FNR", "PA")))
    uio.atomic_write(out / "seg_metrics.tsv", "\n".join(rows) + "\n")
    if args.write_masks:
        for i, m in enumerate(masks):
            uio.atomic_write(out / "masks" / f"pred_{i:04d}.ucck", uio.mask_bytes(m))
    _emit(out, "seg_summary.txt", [("images", len(test))] +
          [(k.lower(), _fmt(v)) for k, v in mean.items()])
    return 0


def cmd_verify_props(cfg: RunConfig, out: Path, args) -> int:
    pool = pool_from_config(cfg, args.pool)
    if not pool.labelled:
        raise ContractError("theory checks need a labelled pool")
    if args.checkpoint:
        model = uio.load_model(args.checkpoint)
        _check_dims(model, pool.dim)
        kde = model.kde

        def fmap(x):
            from .model import extract_features
            return extract_features(model, x)

        def predictor(bags):
            return predicted_labels(model, bags)
    else:
        model = None
        kde = model_from_config(cfg, pool.dim).kde
        fmap = lambda x: x  # noqa: E731
        predictor = None
    rng = np.random.default_rng(cfg.seed)
    lines = []

    m = min(args.universe, pool.size)
    universe = rng.choice(pool.size, size=m, replace=False)
    part = cluster_by_ucc(universe, UccOracle(pool), rng)
    acc = clustering_accuracy(part.labels_for(universe), pool.labels[universe])
    classes = np.unique(pool.labels[universe]).size
    ok2 = part.converged and len(part.blocks) == classes and acc == 1.0
    lines.append(f"prop2: {'PASS' if ok2 else 'FAIL'} universe={m} blocks={len(part.blocks)} "
                 f"classes={classes} accuracy={acc:.6f} oracle_calls={part.oracle_calls}")
    reports = [check_prop1(pool, kde, fmap, args.trials, rng),
               check_prop3(pool, kde, fmap),
               check_propB1(pool, args.trials, rng),
               check_propB3(pool, kde, min(args.trials, 200), rng, feature_map=fmap,
                            predictor=predictor)]
    lines.extend(r.summary() for r in reports)
    text = "".join(l + "\n" for l in lines)
    sys.stdout.write(text)
    uio.atomic_write(out / "props_report.txt", text)
    return 0 if ok2 and all(r.passed for r in reports) else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "cluster": cmd_cluster,
    "eval-ucc": cmd_eval_ucc,
    "eval-seg": cmd_eval_seg,
    "verify-props": cmd_verify_props,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--out", default="ucc-out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ucc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic pool or image set")
    p = sub.add_parser("train", parents=[common], help="train a model on ucc-labelled bags")
    p.add_argument("--pool")
    p = sub.add_parser("cluster", parents=[common], help="cluster instances on extracted features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pool")
    p.add_argument("--method", choices=("kmeans", "spectral"))
    p.add_argument("--k", type=int, default=0)
    p = sub.add_parser("eval-ucc", parents=[common], help="ucc accuracy on random bags")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pool")
    p.add_argument("--trials", type=int, default=0)
    p = sub.add_parser("eval-seg", parents=[common], help="segment images and score masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--reference-images")
    p.add_argument("--write-masks", action="store_true")
    p = sub.add_parser("verify-props", parents=[common], help="numerically check the clustering theory")
    p.add_argument("--checkpoint")
    p.add_argument("--pool")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--universe", type=int, default=200)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        cfg = load_config(args.config, args.set, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ContractError, FormatError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
