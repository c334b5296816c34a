"""End-to-end clustering runs over a directory of tiles.

Three feature routes feed the same output contract:

* option 1: mean RGB and mean H&E per tile, standardised, PCA to 2-D, then a
  spherical Gaussian mixture;
* option 2: autoencoder bottleneck codes, PCA at a preserved-variance
  threshold, then a Gaussian mixture;
* fds: raw pixels, PCA at a preserved-variance threshold, then the best
  K-Means / Gaussian mixture setting from a small grid.

Each run writes ``<output>/<magnification>/cluster_<i>/`` link directories,
``report.txt``, ``cluster_plot.ppm`` and the fitted models under
``<output>/models``.
"""

from __future__ import annotations

import os
import re
import shutil
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from tilecluster.cluster import (
    GridSpec,
    fit_gmm,
    fit_kmeans,
    grid_search,
)
from tilecluster.errors import (
    ModelMissing,
    NoSuchMagnification,
    ShapeMismatch,
    SingleClusterDegenerate,
    TooFewTiles,
)
from tilecluster.linalg import components_for_ratios, fit_pca
from tilecluster.metrics import completeness, f1_score
from tilecluster.persist import load_model, save_model
from tilecluster.raster import Raster, load_raster, mean_hed, mean_rgb, montage, save_raster
from tilecluster.synthdata import read_labels_file
from tilecluster.tiler import MAGNIFICATIONS, level_name

TILE_EXTENSIONS = (".ppm", ".pgm", ".png")
LABELS_NAME = "labels.txt"
REPORT_NAME = "report.txt"
PLOT_NAME = "cluster_plot.ppm"
PLOT_COLUMNS = 9
BUNDLED_MODEL = "cae-mse-32.model"
METHODS = ("option1", "option2", "fds")
_CLUSTER_DIR = re.compile(r"^cluster_\d+$")


@dataclass(frozen=True)
class RunConfig:
    datapath: str
    option: int = 1
    n_clusters: int = 8
    magnification: float | None = None
    seed: int = 0
    variance_threshold: float | None = None
    model_path: str | None = None
    output: str | None = None
    labels: str | None = None
    fds: bool = False
    covariance_type: str | None = None
    n_init: int = 5

    def __post_init__(self):
        if self.option not in (1, 2):
            raise ValueError(f"option must be 1 or 2, got {self.option}")
        if self.n_clusters < 2:
            raise ValueError("n_clusters must be >= 2")
        if self.magnification is not None and float(self.magnification) not in MAGNIFICATIONS:
            raise NoSuchMagnification(
                f"{self.magnification} is not one of {sorted(MAGNIFICATIONS)}")
        if self.variance_threshold is not None and not 0 < self.variance_threshold <= 1:
            raise ValueError("variance_threshold must lie in (0, 1]")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")

    @property
    def method(self) -> str:
        return "fds" if self.fds else f"option{self.option}"

    @property
    def threshold(self) -> float:
        if self.variance_threshold is not None:
            return self.variance_threshold
        return 0.99 if self.fds else 0.98

    @property
    def output_root(self) -> str:
        return self.output if self.output is not None else self.datapath

    @property
    def cluster_root(self) -> str:
        if self.magnification is None:
            return self.output_root
        return os.path.join(self.output_root, level_name(self.magnification))


@dataclass(frozen=True)
class LinkRecord:
    source: str
    link: str
    cluster: int


@dataclass
class ClusterLayout:
    """Cluster membership of every tile plus, once emitted, its link records."""

    root: str
    n_clusters: int
    tiles: list
    assignments: np.ndarray
    links: list = field(default_factory=list)
    mode: str = "symlink"

    def members(self, i) -> list:
        return [t for t, a in zip(self.tiles, self.assignments) if a == i]

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.n_clusters)

    @staticmethod
    def dir_name(i) -> str:
        return f"cluster_{i}"

    def audit(self) -> None:
        """Raise AssertionError unless every tile is linked exactly once and resolves."""
        linked = sorted(r.source for r in self.links)
        if linked != sorted(self.tiles):
            raise AssertionError("link records do not cover every tile exactly once")
        for r in self.links:
            if not os.path.isfile(r.link):
                raise AssertionError(f"{r.link} does not resolve to a file")


@dataclass
class RunResult:
    layout: ClusterLayout
    report: dict
    report_path: str
    plot_path: str
    features: np.ndarray


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------

def tile_directory(datapath, magnification=None) -> str:
    """Directory holding the tiles for a run.

    With a magnification the tiler's ``<datapath>/<level>/`` layout is
    required; without one ``datapath`` itself must hold the tiles.
    """
    if not os.path.isdir(datapath):
        raise FileNotFoundError(f"no such directory: {datapath}")
    if magnification is not None:
        path = os.path.join(datapath, level_name(magnification))
        if not os.path.isdir(path):
            have = sorted(d for d in os.listdir(datapath)
                          if os.path.isdir(os.path.join(datapath, d)))
            raise NoSuchMagnification(
                f"{datapath} has no {level_name(magnification)} level (found: {', '.join(have) or 'none'})")
        return path
    if not list_tiles(datapath):
        levels = [m for m in MAGNIFICATIONS if os.path.isdir(os.path.join(datapath, level_name(m)))]
        if levels:
            raise NoSuchMagnification(
                f"{datapath} holds pyramid levels {[level_name(m) for m in levels]}; "
                "pass --magnification")
    return datapath


def list_tiles(directory) -> list:
    # a flat run writes its plot next to the tiles; never treat it as one
    return sorted(os.path.join(os.path.abspath(directory), f) for f in os.listdir(directory)
                  if f.lower().endswith(TILE_EXTENSIONS) and f != PLOT_NAME
                  and os.path.isfile(os.path.join(directory, f)))


def find_labels(cfg: RunConfig, tile_dir) -> str | None:
    if cfg.labels:
        if not os.path.isfile(cfg.labels):
            raise FileNotFoundError(f"no labels file at {cfg.labels}")
        return cfg.labels
    for d in (tile_dir, cfg.datapath):
        path = os.path.join(d, LABELS_NAME)
        if os.path.isfile(path):
            return path
    return None


def labels_for(paths, labels_file):
    """Labels aligned with ``paths``; tiles missing from the file raise KeyError."""
    table = {os.path.realpath(k): v for k, v in read_labels_file(labels_file).items()}
    missing = [p for p in paths if os.path.realpath(p) not in table]
    if missing:
        raise KeyError(f"{len(missing)} tiles have no label in {labels_file}, e.g. {missing[0]}")
    return np.array([table[os.path.realpath(p)] for p in paths], dtype=np.int64)


def load_tiles(paths) -> list:
    return [load_raster(p) for p in paths]


def _same_shape(tiles):
    shapes = {t.data.shape for t in tiles}
    if len(shapes) != 1:
        raise ShapeMismatch(f"tiles have mixed shapes {sorted(shapes)}")
    return shapes.pop()


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def color_features(tiles) -> np.ndarray:
    """(n, 5): mean R, G, B and mean hematoxylin, eosin concentration."""
    return np.array([np.concatenate([mean_rgb(t), mean_hed(t)[:2]]) for t in tiles])


def standardize(x) -> np.ndarray:
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def pixel_features(tiles) -> np.ndarray:
    _same_shape(tiles)
    return np.stack([t.data.reshape(-1) for t in tiles]).astype(np.float64) / 255.0


def _pca_at(x, threshold):
    full = fit_pca(x, min(x.shape))
    d = components_for_ratios(full.explained_variance_ratio, threshold)
    m = fit_pca(x, d)
    return m, m.transform(x)


def _degenerate(x) -> bool:
    return bool(np.all(np.ptp(x, axis=0) == 0))


def _fit_mixture(z, cfg, covariance_type):
    return fit_gmm(z, cfg.n_clusters, covariance_type=covariance_type, seed=cfg.seed,
                   n_init=cfg.n_init)


def bundled_model_path() -> str:
    return str(resources.files("tilecluster") / "data" / BUNDLED_MODEL)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

def _prepare(cfg):
    tile_dir = tile_directory(cfg.datapath, cfg.magnification)
    paths = list_tiles(tile_dir)
    if len(paths) < cfg.n_clusters:
        raise TooFewTiles(f"{len(paths)} tiles in {tile_dir}, need at least {cfg.n_clusters}")
    labels_file = find_labels(cfg, tile_dir)
    y = labels_for(paths, labels_file) if labels_file else None
    return paths, load_tiles(paths), labels_file, y


def _cluster_or_degenerate(z, fit):
    if _degenerate(z):
        warnings.warn("all feature vectors are identical; every tile goes to cluster_0",
                      SingleClusterDegenerate, stacklevel=3)
        return np.zeros(len(z), dtype=np.int64), None
    model = fit(z)
    return model.predict(z).hard_labels, model


def run_option1(cfg: RunConfig) -> RunResult:
    paths, tiles, labels_file, y = _prepare(cfg)
    feats = standardize(color_features(tiles))
    info = {"features": feats.shape[1]}
    models = {}
    if _degenerate(feats):
        assignments, _ = _cluster_or_degenerate(feats, None)
        info.update(pca_dims=0)
    else:
        pca = fit_pca(feats, min(2, *feats.shape))
        z = pca.transform(feats)
        info.update(pca_dims=pca.n_components,
                    preserved_variance=float(pca.explained_variance_ratio.sum()))
        cov = cfg.covariance_type or "spherical"
        assignments, gmm = _cluster_or_degenerate(z, lambda a: _fit_mixture(a, cfg, cov))
        info["covariance_type"] = cov
        models = {"pca": pca, "gmm": gmm}
    return _finish(cfg, paths, assignments, labels_file, y, info, models, feats)


def load_autoencoder(model_path=None):
    path = model_path or bundled_model_path()
    if not os.path.isfile(path):
        raise ModelMissing(f"no trained autoencoder at {path}; run `tilecluster train-ae` first")
    return load_model(path, kind="autoencoder"), path


def run_option2(cfg: RunConfig) -> RunResult:
    from tilecluster.neural.train import encode, tiles_to_tensor

    model, model_file = load_autoencoder(cfg.model_path)
    paths, tiles, labels_file, y = _prepare(cfg)
    shape = _same_shape(tiles)
    data = tiles_to_tensor(tiles)
    if data.shape[1:] != model.input_shape:
        raise ShapeMismatch(f"tiles are {shape[1]}x{shape[0]}x{shape[2]} but the model expects "
                            f"input {model.input_shape} (C, H, W)")
    codes = encode(model, data)
    info = {"autoencoder": model.name, "model_file": os.path.basename(model_file),
            "bottleneck": model.bottleneck_size}
    models = {}
    if _degenerate(codes):
        assignments, _ = _cluster_or_degenerate(codes, None)
    else:
        pca, z = _pca_at(codes, cfg.threshold)
        cov = cfg.covariance_type or "diag"
        info.update(variance_threshold=cfg.threshold, pca_dims=pca.n_components,
                    preserved_variance=float(pca.explained_variance_ratio.sum()),
                    covariance_type=cov)
        assignments, gmm = _cluster_or_degenerate(z, lambda a: _fit_mixture(a, cfg, cov))
        models = {"pca": pca, "gmm": gmm}
    return _finish(cfg, paths, assignments, labels_file, y, info, models, codes)


def fds_grids(cfg: RunConfig):
    seeds = [cfg.seed, cfg.seed + 1, cfg.seed + 2]
    k = [cfg.n_clusters]
    return {
        "kmeans": GridSpec({"k": k, "init": ["kmeanspp", "random"], "seed": seeds}, seed=cfg.seed),
        "gmm": GridSpec({"k": k, "covariance_type": ["spherical", "diag"], "seed": seeds},
                        seed=cfg.seed),
    }


def _fit_setting(algorithm, params, z):
    if algorithm == "kmeans":
        return fit_kmeans(z, params["k"], init=params["init"], seed=params["seed"])
    return fit_gmm(z, params["k"], covariance_type=params["covariance_type"], seed=params["seed"])


def run_fds(cfg: RunConfig) -> RunResult:
    """Pixel-space baseline.

    With labels, the setting with the best mean validation completeness
    wins (K-Means first on ties); without labels, the K-Means setting with
    the lowest inertia.
    """
    paths, tiles, labels_file, y = _prepare(cfg)
    feats = pixel_features(tiles)
    info = {"features": feats.shape[1], "variance_threshold": cfg.threshold}
    models = {}
    if _degenerate(feats):
        assignments, _ = _cluster_or_degenerate(feats, None)
    else:
        pca, z = _pca_at(feats, cfg.threshold)
        info.update(pca_dims=pca.n_components,
                    preserved_variance=float(pca.explained_variance_ratio.sum()))
        grids = fds_grids(cfg)
        if y is not None:
            best = None
            for algorithm in ("kmeans", "gmm"):
                res = grid_search(z, y, grids[algorithm], algorithm)
                for params, score in res.table:
                    info[f"grid {algorithm} {_fmt_params(params)}"] = score
                if best is None or res.best_score > best[2]:
                    best = (algorithm, res.best_params, res.best_score)
            algorithm, params, score = best
            info["selection"] = "validation completeness"
            info["validation_completeness"] = score
        else:
            algorithm, params, score = "kmeans", None, np.inf
            for p in grids["kmeans"].settings():
                m = _fit_setting("kmeans", p, z)
                if m.inertia < score:
                    params, score = p, m.inertia
            info["selection"] = "kmeans inertia"
        model = _fit_setting(algorithm, params, z)
        assignments = model.predict(z).hard_labels
        info["algorithm"] = algorithm
        info["params"] = _fmt_params(params)
        models = {"pca": pca, algorithm: model}
    return _finish(cfg, paths, assignments, labels_file, y, info, models, feats)


def run(cfg: RunConfig) -> RunResult:
    if cfg.fds:
        return run_fds(cfg)
    return run_option1(cfg) if cfg.option == 1 else run_option2(cfg)


def _fmt_params(params) -> str:
    return ",".join(f"{k}={v}" for k, v in params.items() if k != "k")


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

def _clear_clusters(root):
    if not os.path.isdir(root):
        return
    for name in os.listdir(root):
        path = os.path.join(root, name)
        if _CLUSTER_DIR.match(name) and os.path.isdir(path) and not os.path.islink(path):
            shutil.rmtree(path)


def _symlinks_supported(directory) -> bool:
    probe = os.path.join(directory, ".symlink-probe")
    try:
        os.symlink(".", probe)
    except (OSError, NotImplementedError):
        return False
    os.unlink(probe)
    return True


def assign_to_directories(layout: ClusterLayout, out=None) -> ClusterLayout:
    """Replace any ``cluster_<i>`` directories under ``out`` with fresh ones.

    Members are relative symbolic links; where the filesystem refuses
    symlinks the tiles are copied instead and ``layout.mode`` is ``copy``.
    """
    root = out or layout.root
    os.makedirs(root, exist_ok=True)
    _clear_clusters(root)
    layout.root = root
    layout.mode = "symlink" if _symlinks_supported(root) else "copy"
    layout.links = []
    for i in range(layout.n_clusters):
        os.makedirs(os.path.join(root, ClusterLayout.dir_name(i)))
    for src, c in zip(layout.tiles, layout.assignments):
        cdir = os.path.join(root, ClusterLayout.dir_name(int(c)))
        link = os.path.join(cdir, os.path.basename(src))
        if layout.mode == "symlink":
            os.symlink(os.path.relpath(os.path.realpath(src), os.path.realpath(cdir)), link)
        else:
            shutil.copyfile(src, link)
        layout.links.append(LinkRecord(src, link, int(c)))
    return layout


def cluster_plot(layout: ClusterLayout, seed: int = 0) -> Raster:
    """One montage row per cluster of up to 9 randomly chosen member tiles."""
    rng = np.random.default_rng(seed)
    rows, size = [], None
    for i in range(layout.n_clusters):
        members = layout.members(i)
        pick = rng.choice(len(members), size=min(PLOT_COLUMNS, len(members)), replace=False) \
            if members else []
        row = [load_raster(members[j]) for j in pick]
        row = [t if t.channels == 3 else Raster(np.repeat(t.data, 3, axis=2)) for t in row]
        if row and size is None:
            size = (row[0].width, row[0].height)
        rows.append(row)
    if size is None:
        raise ValueError("cannot plot a layout without tiles")
    return montage(rows, *size)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_report(report: dict, counts) -> str:
    lines = [f"{k}: {_fmt(v)}" for k, v in report.items()]
    lines.append("")
    lines.append("cluster\tcount")
    lines += [f"{ClusterLayout.dir_name(i)}\t{int(c)}" for i, c in enumerate(counts)]
    return "\n".join(lines) + "\n"


def _finish(cfg, paths, assignments, labels_file, y, info, models, feats) -> RunResult:
    layout = ClusterLayout(cfg.cluster_root, cfg.n_clusters, list(paths),
                           np.asarray(assignments, dtype=np.int64))
    assign_to_directories(layout)
    layout.audit()
    report = {
        "method": cfg.method,
        "magnification": "-" if cfg.magnification is None else level_name(cfg.magnification),
        "n_tiles": len(paths),
        "n_clusters": cfg.n_clusters,
        "seed": cfg.seed,
    }
    report.update(info)
    report["link_mode"] = layout.mode
    if y is not None:
        report["labels_file"] = os.path.basename(labels_file)
        report["completeness"] = completeness(y, layout.assignments)
    os.makedirs(cfg.output_root, exist_ok=True)
    plot_path = os.path.join(cfg.output_root, PLOT_NAME)
    save_raster(cluster_plot(layout, cfg.seed), plot_path)
    model_dir = os.path.join(cfg.output_root, "models")
    if models:
        os.makedirs(model_dir, exist_ok=True)
        for name, m in models.items():
            if m is not None:
                save_model(m, os.path.join(model_dir, f"{cfg.method}.{name}.model"))
    report_path = os.path.join(cfg.output_root, REPORT_NAME)
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report(report, layout.counts()))
    return RunResult(layout, report, report_path, plot_path, feats)


# ---------------------------------------------------------------------------
# offline evaluation
# ---------------------------------------------------------------------------

def read_layout(root) -> ClusterLayout:
    """Rebuild a layout from ``cluster_<i>`` directories (links or copies)."""
    dirs = sorted((int(d.split("_")[1]), d) for d in os.listdir(root)
                  if _CLUSTER_DIR.match(d) and os.path.isdir(os.path.join(root, d)))
    if not dirs:
        raise FileNotFoundError(f"no cluster_<i> directories under {root}")
    tiles, assignments, links = [], [], []
    mode = "symlink"
    for i, d in dirs:
        for name in sorted(os.listdir(os.path.join(root, d))):
            link = os.path.join(root, d, name)
            if os.path.islink(link):
                src = os.path.realpath(link)
            else:
                src, mode = link, "copy"
            tiles.append(src)
            assignments.append(i)
            links.append(LinkRecord(src, link, i))
    return ClusterLayout(root, dirs[-1][0] + 1, tiles, np.array(assignments, dtype=np.int64),
                         links, mode)


def _labels_by_name(tiles, labels_file):
    table = {}
    for path, label in read_labels_file(labels_file).items():
        table.setdefault(os.path.basename(path), label)
    return np.array([table[os.path.basename(t)] for t in tiles], dtype=np.int64)


def majority_mapping(y_true, clusters) -> dict:
    """Map each cluster to its most frequent true label (lowest label on ties)."""
    out = {}
    for c in np.unique(clusters):
        out[int(c)] = int(np.argmax(np.bincount(y_true[clusters == c])))
    return out


def evaluate(root, labels_file) -> dict:
    """Completeness and majority-vote f1 of an emitted layout against a labels file."""
    layout = read_layout(root)
    if layout.mode == "copy":
        y = _labels_by_name(layout.tiles, labels_file)
    else:
        y = labels_for(layout.tiles, labels_file)
    mapping = majority_mapping(y, layout.assignments)
    pred = np.array([mapping[int(c)] for c in layout.assignments])
    n_classes = int(max(y.max(), pred.max())) + 1
    rep = f1_score(y, pred, n_classes)
    return {
        "n_tiles": len(y),
        "n_clusters": layout.n_clusters,
        "completeness": completeness(y, layout.assignments),
        "macro_f1": rep.macro,
        "per_class_f1": rep.per_class,
    }


__all__ = [
    "RunConfig", "ClusterLayout", "LinkRecord", "RunResult", "run", "run_option1",
    "run_option2", "run_fds", "assign_to_directories", "cluster_plot", "evaluate",
    "read_layout", "color_features", "pixel_features", "standardize", "tile_directory",
    "list_tiles", "labels_for", "bundled_model_path", "load_autoencoder", "fds_grids",
    "format_report", "majority_mapping", "embedding_features", "scatter_plot",
]


# ---------------------------------------------------------------------------
# t-SNE scatter
# ---------------------------------------------------------------------------

PALETTE = np.array([
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
    (140, 86, 75), (227, 119, 194), (127, 127, 127), (188, 189, 34), (23, 190, 207),
], dtype=np.uint8)


def embedding_features(cfg: RunConfig):
    """The feature matrix a run would cluster, plus tile paths and optional labels."""
    tile_dir = tile_directory(cfg.datapath, cfg.magnification)
    paths = list_tiles(tile_dir)
    if len(paths) < 2:
        raise TooFewTiles(f"{len(paths)} tiles in {tile_dir}")
    labels_file = find_labels(cfg, tile_dir)
    y = labels_for(paths, labels_file) if labels_file else None
    tiles = load_tiles(paths)
    if cfg.fds:
        feats = pixel_features(tiles)
    elif cfg.option == 1:
        feats = standardize(color_features(tiles))
    else:
        from tilecluster.neural.train import encode
        model, _ = load_autoencoder(cfg.model_path)
        feats = encode(model, tiles)
    if not _degenerate(feats) and feats.shape[1] > 2:
        feats = _pca_at(feats, cfg.threshold)[1]
    return paths, feats, y


def scatter_plot(points, groups=None, size: int = 512, margin: int = 12, dot: int = 2) -> Raster:
    """Render 2-D points on a white canvas, coloured by integer group."""
    pts = np.asarray(points, dtype=np.float64)
    groups = np.zeros(len(pts), dtype=np.int64) if groups is None else np.asarray(groups)
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = (pts - lo) / span * (size - 1 - 2 * margin) + margin
    cols = np.rint(scaled[:, 0]).astype(int)
    rows = np.rint((size - 1) - scaled[:, 1]).astype(int)
    for r, c, g in zip(rows, cols, groups):
        img[max(r - dot, 0):r + dot + 1, max(c - dot, 0):c + dot + 1] = PALETTE[int(g) % len(PALETTE)]
    return Raster(img)
