"""Command-line entry point: ``tilecluster <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

from tilecluster.errors import TileClusterError
from tilecluster.tiler import MAGNIFICATIONS

LEVELS = ", ".join(repr(float(m)) for m in sorted(MAGNIFICATIONS))


class UsageError(TileClusterError):
    """Bad command line; ``main`` reports it with exit status 2."""

    def __init__(self, message, usage=""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage())


def magnification(text) -> float:
    try:
        value = float(text)
    except ValueError:
        value = None
    if value not in MAGNIFICATIONS:
        raise argparse.ArgumentTypeError(f"invalid magnification {text!r}; choose from {LEVELS}")
    return value


def _fraction(text) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1]")
    return value


def _positive(text) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return value


def _learning_rate(text):
    if text == "auto":
        return text
    try:
        value = float(text)
    except ValueError:
        value = -1.0
    if not value > 0:
        raise argparse.ArgumentTypeError(f"{text!r} is neither 'auto' nor a positive number")
    return value


def _method_flags(p, required=True):
    group = p.add_mutually_exclusive_group(required=required)
    group.add_argument("--option", type=int, choices=(1, 2),
                       help="1: mean RGB + H&E features; 2: autoencoder codes")
    group.add_argument("--fds", action="store_true", help="raw-pixel PCA baseline")
    p.add_argument("--model-path", help="trained autoencoder for option 2 (default: bundled)")
    p.add_argument("--variance-threshold", type=_fraction,
                   help="preserved variance for PCA (default 0.98, fds 0.99)")


def _data_flags(p):
    p.add_argument("--datapath", required=True, help="tile directory or tiler output root")
    p.add_argument("--magnification", type=magnification, help=f"pyramid level: {LEVELS}")
    p.add_argument("--labels", help="labels file (relative/path,label per line)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tilecluster", description="Cluster histology-style image tiles.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth", help="generate synthetic data")
    synth_sub = synth.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    st = synth_sub.add_parser("tiles", help="labelled texture tiles")
    st.add_argument("--output", required=True)
    st.add_argument("--n-per-class", type=_positive, default=50)
    st.add_argument("--classes", nargs="+")
    st.add_argument("--tile-size", type=_positive, default=32)
    st.add_argument("--noise-level", type=float, default=None)
    st.add_argument("--seed", type=int, default=0)
    ss = synth_sub.add_parser("slide", help="composite slide of texture regions")
    ss.add_argument("--output", required=True, help="output .ppm path")
    ss.add_argument("--grid", default="solid-light,solid-dark;solid-pink,solid-purple",
                    help="rows separated by ';', regions by ','")
    ss.add_argument("--region-px", type=_positive, default=512)
    ss.add_argument("--seed", type=int, default=0)

    tile = sub.add_parser("tile", help="cut a slide into a magnification pyramid")
    source = tile.add_mutually_exclusive_group(required=True)
    source.add_argument("--slide")
    source.add_argument("--datapath", help="alias of --slide")
    tile.add_argument("--output", required=True)
    tile.add_argument("--tile-size", type=_positive, default=150)
    tile.add_argument("--magnification", type=magnification, nargs="+",
                      default=sorted(MAGNIFICATIONS))
    tile.add_argument("--background-threshold", type=float)

    tr = sub.add_parser("train-ae", help="train an autoencoder on tiles")
    _data_flags(tr)
    tr.add_argument("--model-path", required=True, help="where to write the model")
    tr.add_argument("--preset", default="cae-mse")
    tr.add_argument("--epochs", type=_positive, default=100)
    tr.add_argument("--batch-size", type=_positive, default=16)
    tr.add_argument("--lr", type=float, default=5e-3)
    tr.add_argument("--patience", type=_positive, default=10)
    tr.add_argument("--validation-fraction", type=float, default=0.0)
    tr.add_argument("--augment-rotations", action="store_true")
    tr.add_argument("--n-classes", type=_positive, help="head size (default: from labels)")

    cl = sub.add_parser("cluster", help="cluster tiles into cluster_<i> directories")
    _data_flags(cl)
    _method_flags(cl)
    cl.add_argument("--n-clusters", type=int, default=8)
    cl.add_argument("--output", help="output root (default: --datapath)")
    cl.add_argument("--covariance-type", choices=("spherical", "diag", "full"))
    cl.add_argument("--background-threshold", type=float, help=argparse.SUPPRESS)
    cl.add_argument("--tile-size", type=int, help=argparse.SUPPRESS)

    ev = sub.add_parser("evaluate", help="score emitted cluster directories against labels")
    ev.add_argument("--datapath", required=True, help="run output root")
    ev.add_argument("--magnification", type=magnification)
    ev.add_argument("--labels", required=True)

    ts = sub.add_parser("tsne-plot", help="2-D t-SNE scatter of tile features")
    _data_flags(ts)
    _method_flags(ts)
    ts.add_argument("--output", required=True, help="output .ppm path")
    ts.add_argument("--perplexity", type=float, default=30.0)
    ts.add_argument("--n-iter", type=int, default=1000)
    ts.add_argument("--learning-rate", type=_learning_rate, default="auto",
                    help="positive number or 'auto' (default)")
    return parser


def parse_cli(argv=None) -> argparse.Namespace:
    """Parse ``argv``; raises :class:`UsageError` on bad input."""
    ns = build_parser().parse_args(argv)
    if ns.command == "cluster" and ns.n_clusters < 2:
        raise UsageError("--n-clusters must be >= 2", build_parser().format_usage())
    return ns


def build_run_config(ns):
    from tilecluster.pipeline import RunConfig

    return RunConfig(
        datapath=ns.datapath,
        option=ns.option or 1,
        fds=bool(ns.fds),
        n_clusters=getattr(ns, "n_clusters", 8),
        magnification=ns.magnification,
        seed=ns.seed,
        variance_threshold=ns.variance_threshold,
        model_path=ns.model_path,
        output=getattr(ns, "output", None) if ns.command == "cluster" else None,
        labels=ns.labels,
        covariance_type=getattr(ns, "covariance_type", None),
    )


def _parse_grid(text):
    return [[cell.strip() for cell in row.split(",")] for row in text.split(";") if row.strip()]


def cmd_synth(ns):
    from tilecluster import synthdata
    from tilecluster.raster import save_raster

    if ns.kind == "tiles":
        classes = ns.classes or list(synthdata.TEXTURE_CLASSES)
        unknown = set(classes) - set(synthdata.TEXTURE_CLASSES) - set(synthdata.SOLID_COLORS)
        if unknown:
            raise UsageError(f"unknown classes: {', '.join(sorted(unknown))}")
        kw = {} if ns.noise_level is None else {"noise_level": ns.noise_level}
        tiles, labels = synthdata.make_texture_tiles(ns.n_per_class, classes, tile=ns.tile_size,
                                                     seed=ns.seed, **kw)
        path = synthdata.write_tile_set(tiles, labels, ns.output, classes)
        print(f"wrote {len(tiles)} tiles and {path}")
    else:
        grid = _parse_grid(ns.grid)
        slide = synthdata.make_synthetic_slide(grid, ns.region_px, seed=ns.seed)
        parent = os.path.dirname(os.path.abspath(ns.output))
        os.makedirs(parent, exist_ok=True)
        save_raster(slide, ns.output)
        print(f"wrote {slide.width}x{slide.height} slide to {ns.output}")
    return 0


def cmd_tile(ns):
    from tilecluster.raster import load_raster
    from tilecluster.tiler import PyramidSpec, tile_pyramid

    spec = PyramidSpec.for_magnifications(ns.magnification, tile_size=ns.tile_size,
                                          background_threshold=ns.background_threshold)
    manifest = tile_pyramid(load_raster(ns.slide or ns.datapath), spec, ns.output)
    for mag in sorted(spec.levels, reverse=True):
        records = manifest.for_level(mag)
        kept = sum(not r.skipped for r in records)
        print(f"{mag!r}: {kept} tiles ({len(records) - kept} background)")
    return 0


def cmd_train(ns):
    import numpy as np

    from tilecluster.neural.presets import PRESETS, build_preset, preset_loss
    from tilecluster.neural.train import TrainConfig, train
    from tilecluster.persist import save_model
    from tilecluster.pipeline import find_labels, labels_for, list_tiles, load_tiles, tile_directory

    if ns.preset not in PRESETS:
        raise UsageError(f"unknown preset {ns.preset!r}; choose from {', '.join(sorted(PRESETS))}")
    tile_dir = tile_directory(ns.datapath, ns.magnification)
    paths = list_tiles(tile_dir)
    if not paths:
        raise TileClusterError(f"no tiles in {tile_dir}")
    tiles = load_tiles(paths)
    shape = tiles[0].data.shape
    labels = None
    if PRESETS[ns.preset][1] is not None:
        from tilecluster.pipeline import RunConfig
        lf = find_labels(RunConfig(ns.datapath, labels=ns.labels), tile_dir)
        if lf is None:
            from tilecluster.errors import MissingLabels
            raise MissingLabels(f"preset {ns.preset} needs a labels file")
        labels = labels_for(paths, lf)
    n_classes = ns.n_classes or (int(np.max(labels)) + 1 if labels is not None else None)
    model = build_preset(ns.preset, input_shape=(shape[2], shape[0], shape[1]),
                         n_classes=n_classes, seed=ns.seed)
    cfg = TrainConfig(loss=preset_loss(ns.preset), lr=ns.lr, batch_size=ns.batch_size,
                      max_epochs=ns.epochs, early_stopping_patience=ns.patience,
                      augment_rotations=ns.augment_rotations,
                      validation_fraction=ns.validation_fraction, seed=ns.seed)
    result = train(model, tiles, labels, cfg)
    save_model(model, ns.model_path)
    log_path = ns.model_path + ".log"
    result.write_log(log_path)
    print(f"{len(result.history)} epochs ({result.stop_reason}), final loss "
          f"{result.history[-1].train_loss:.6g}; model {ns.model_path}, log {log_path}")
    return 0


def cmd_cluster(ns):
    from tilecluster.pipeline import run

    result = run(build_run_config(ns))
    with open(result.report_path, encoding="utf-8") as fh:
        print(fh.read(), end="")
    return 0


def cmd_evaluate(ns):
    from tilecluster.pipeline import evaluate
    from tilecluster.tiler import level_name

    root = ns.datapath if ns.magnification is None else os.path.join(
        ns.datapath, level_name(ns.magnification))
    out = evaluate(root, ns.labels)
    for key in ("n_tiles", "n_clusters", "completeness", "macro_f1"):
        print(f"{key}: {out[key]!r}" if isinstance(out[key], float) else f"{key}: {out[key]}")
    for i, f in enumerate(out["per_class_f1"]):
        print(f"f1 class {i}: {float(f)!r}")
    return 0


def cmd_tsne(ns):
    import numpy as np

    from tilecluster.pipeline import embedding_features, scatter_plot
    from tilecluster.raster import save_raster
    from tilecluster.tsne import TsneConfig, fit_tsne

    paths, feats, y = embedding_features(build_run_config(ns))
    cfg = TsneConfig(perplexity=min(ns.perplexity, (len(paths) - 1) / 3), n_iter=ns.n_iter,
                     learning_rate=ns.learning_rate, seed=ns.seed)
    res = fit_tsne(feats, cfg)
    save_raster(scatter_plot(res.embedding, y), ns.output)
    table = os.path.splitext(ns.output)[0] + ".tsv"
    with open(table, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("tile\tx\ty\tlabel\n")
        for i, (p, row) in enumerate(zip(paths, res.embedding)):
            label = "-" if y is None else str(int(y[i]))
            fh.write(f"{os.path.basename(p)}\t{row[0]!r}\t{row[1]!r}\t{label}\n")
    print(f"KL {res.kl:.6g}; wrote {ns.output} and {table}")
    return int(not np.isfinite(res.kl))


COMMANDS = {"synth": cmd_synth, "tile": cmd_tile, "train-ae": cmd_train, "cluster": cmd_cluster,
            "evaluate": cmd_evaluate, "tsne-plot": cmd_tsne}


def main(argv=None) -> int:
    try:
        ns = parse_cli(argv)
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f"tilecluster: error: {exc}\n")
        return 2
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return COMMANDS[ns.command](ns)
    except UsageError as exc:
        sys.stderr.write(f"tilecluster: error: {exc}\n")
        return 2
    except (TileClusterError, OSError, KeyError, ValueError) as exc:
        sys.stderr.write(f"tilecluster: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
