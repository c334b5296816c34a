import os
import warnings

import numpy as np
import pytest

from tilecluster import pipeline
from tilecluster.errors import (
    ModelMissing,
    NoSuchMagnification,
    ShapeMismatch,
    SingleClusterDegenerate,
    TooFewTiles,
)
from tilecluster.metrics import completeness
from tilecluster.pipeline import (
    ClusterLayout,
    RunConfig,
    assign_to_directories,
    cluster_plot,
    embedding_features,
    evaluate,
    majority_mapping,
    read_layout,
    run,
    scatter_plot,
    tile_directory,
)
from tilecluster.raster import Raster, load_raster, save_raster
from tilecluster.synthdata import make_texture_tiles, write_tile_set

SOLIDS = ("solid-light", "solid-dark", "solid-pink", "solid-purple")


def tile_set(root, n=25, classes=SOLIDS, tile=16, seed=0, noise=20.0):
    tiles, labels = make_texture_tiles(n, classes, tile=tile, noise_level=noise, seed=seed)
    write_tile_set(tiles, labels, root, classes)
    return str(root), labels


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_option1_on_solid_colours(tmp_path):
    data, labels = tile_set(tmp_path / "tiles")
    res = run(RunConfig(data, option=1, n_clusters=4, output=str(tmp_path / "out")))
    assert res.report["completeness"] >= 0.99
    assert res.report["method"] == "option1"
    assert res.report["pca_dims"] == 2
    assert sum(res.layout.counts()) == len(labels)
    res.layout.audit()
    # offline recomputation from the emitted directories
    offline = evaluate(str(tmp_path / "out"), os.path.join(data, "labels.txt"))
    assert offline["completeness"] == pytest.approx(res.report["completeness"], abs=1e-12)
    assert offline["macro_f1"] == pytest.approx(1.0)


def test_report_and_outputs(tmp_path):
    data, _ = tile_set(tmp_path / "tiles", n=6)
    out = tmp_path / "out"
    res = run(RunConfig(data, option=1, n_clusters=2, output=str(out)))
    text = (out / "report.txt").read_text()
    assert text.startswith("method: option1\n")
    assert "cluster\tcount\n" in text
    assert str(tmp_path) not in text
    assert (out / "models" / "option1.pca.model").exists()
    assert (out / "models" / "option1.gmm.model").exists()
    plot = load_raster(out / "cluster_plot.ppm")
    assert (plot.width, plot.height) == (9 * 16, 2 * 16)
    assert res.plot_path == str(out / "cluster_plot.ppm")


def test_links_resolve_to_source_bytes(tmp_path):
    data, _ = tile_set(tmp_path / "tiles", n=5)
    res = run(RunConfig(data, option=1, n_clusters=2, output=str(tmp_path / "out")))
    assert res.layout.mode == "symlink"
    assert len(res.layout.links) == 20
    for rec in res.layout.links:
        assert os.path.islink(rec.link)
        assert read_bytes(rec.link) == read_bytes(rec.source)
    dirs = sorted(d for d in os.listdir(tmp_path / "out") if d.startswith("cluster_") and os.path.isdir(tmp_path / "out" / d))
    assert dirs == ["cluster_0", "cluster_1"]


def test_rerun_is_byte_identical_and_clears_stale_dirs(tmp_path):
    data, _ = tile_set(tmp_path / "tiles", n=8)
    out = tmp_path / "out"
    cfg = RunConfig(data, option=1, n_clusters=4, output=str(out), seed=3)
    run(cfg)
    first = {name: read_bytes(out / name) for name in ("report.txt", "cluster_plot.ppm")}
    layout_a = sorted((r.cluster, os.path.basename(r.link)) for r in read_layout(str(out)).links)
    (out / "cluster_7").mkdir()
    (out / "cluster_7" / "stale.ppm").write_bytes(b"x")
    run(cfg)
    assert not (out / "cluster_7").exists()
    for name, blob in first.items():
        assert read_bytes(out / name) == blob
    layout_b = sorted((r.cluster, os.path.basename(r.link)) for r in read_layout(str(out)).links)
    assert layout_a == layout_b


def test_flat_rerun_ignores_its_own_plot(tmp_path):
    data, labels = tile_set(tmp_path / "tiles", n=4)
    first = run(RunConfig(data, option=1, n_clusters=4))
    assert os.path.isfile(os.path.join(data, "cluster_plot.ppm"))
    second = run(RunConfig(data, option=1, n_clusters=4))
    assert len(second.layout.links) == len(labels)
    assert np.array_equal(first.layout.assignments, second.layout.assignments)


def test_identical_tiles_collapse_to_one_cluster(tmp_path):
    tiles = [Raster(np.full((8, 8, 3), 120, dtype=np.uint8)) for _ in range(6)]
    write_tile_set(tiles, [0] * 6, tmp_path / "same")
    with pytest.warns(SingleClusterDegenerate):
        res = run(RunConfig(str(tmp_path / "same"), option=1, n_clusters=3))
    assert res.layout.counts().tolist() == [6, 0, 0]
    assert res.report["completeness"] == 1.0
    # the empty clusters still get rows (all black) in the plot
    plot = load_raster(res.plot_path)
    assert plot.height == 3 * 8
    assert not plot.data[8:].any()


def test_copy_fallback(tmp_path, monkeypatch):
    monkeypatch.setattr(pipeline, "_symlinks_supported", lambda d: False)
    data, _ = tile_set(tmp_path / "tiles", n=4)
    out = tmp_path / "out"
    res = run(RunConfig(data, option=1, n_clusters=4, output=str(out)))
    assert res.report["link_mode"] == "copy"
    for rec in res.layout.links:
        assert not os.path.islink(rec.link)
        assert read_bytes(rec.link) == read_bytes(rec.source)
    offline = evaluate(str(out), os.path.join(data, "labels.txt"))
    assert offline["completeness"] == pytest.approx(res.report["completeness"], abs=1e-12)


def test_assign_ten_tiles_to_two_dirs(tmp_path):
    tiles, _ = make_texture_tiles(5, ("solid-light", "solid-dark"), tile=4)
    paths = []
    for i, t in enumerate(tiles):
        p = tmp_path / f"t{i}.ppm"
        save_raster(t, p)
        paths.append(str(p))
    layout = ClusterLayout(str(tmp_path / "o"), 2, paths, np.array([0, 1] * 5))
    assign_to_directories(layout)
    layout.audit()
    assert len(os.listdir(tmp_path / "o" / "cluster_0")) == 5
    assert len(os.listdir(tmp_path / "o" / "cluster_1")) == 5
    layout.links.pop()
    with pytest.raises(AssertionError):
        layout.audit()


def test_plot_pads_small_clusters(tmp_path):
    tiles = [Raster(np.full((4, 4, 3), 200, dtype=np.uint8)) for _ in range(5)]
    paths = []
    for i, t in enumerate(tiles):
        p = tmp_path / f"t{i}.ppm"
        save_raster(t, p)
        paths.append(str(p))
    layout = ClusterLayout(str(tmp_path), 2, paths, np.array([0, 0, 0, 1, 1]))
    plot = cluster_plot(layout, seed=1)
    assert (plot.width, plot.height) == (36, 8)
    row0 = plot.data[:4]
    assert np.all(row0[:, :12] == 200)
    assert not row0[:, 12:].any()
    assert np.array_equal(cluster_plot(layout, seed=1).data, plot.data)


def test_plot_dimensions_for_eight_clusters(tmp_path):
    tile = Raster(np.zeros((150, 150, 3), dtype=np.uint8))
    p = tmp_path / "t.ppm"
    save_raster(tile, p)
    layout = ClusterLayout(str(tmp_path), 8, [str(p)] * 8, np.arange(8))
    plot = cluster_plot(layout)
    assert (plot.width, plot.height) == (1350, 1200)


def test_option2_with_bundled_model(tmp_path):
    data, labels = tile_set(tmp_path / "tiles", n=10, tile=32)
    cfg = RunConfig(data, option=2, n_clusters=4, output=str(tmp_path / "out"))
    res = run(cfg)
    assert res.report["autoencoder"] == "cae-mse"
    assert res.report["variance_threshold"] == 0.98
    assert res.report["preserved_variance"] >= 0.98
    assert res.features.shape == (40, 512)
    assert res.report["completeness"] >= 0.99
    again = run(cfg)
    assert np.array_equal(again.layout.assignments, res.layout.assignments)


def test_option2_shape_and_missing_model(tmp_path):
    data, _ = tile_set(tmp_path / "tiles", n=3, tile=16)
    with pytest.raises(ShapeMismatch):
        run(RunConfig(data, option=2, n_clusters=2))
    with pytest.raises(ModelMissing):
        run(RunConfig(data, option=2, n_clusters=2, model_path=str(tmp_path / "none.model")))


def test_fds_report_and_selection(tmp_path):
    data, _ = tile_set(tmp_path / "tiles", n=10, classes=SOLIDS[:3])
    res = run(RunConfig(data, fds=True, n_clusters=3, output=str(tmp_path / "out")))
    rep = res.report
    assert rep["method"] == "fds"
    assert rep["variance_threshold"] == 0.99
    assert rep["preserved_variance"] >= 0.99
    assert rep["pca_dims"] >= 1
    assert rep["selection"] == "validation completeness"
    assert rep["algorithm"] in ("kmeans", "gmm")
    assert sum(1 for k in rep if k.startswith("grid ")) == 12
    assert rep["completeness"] >= 0.9


def test_fds_full_rank_and_unlabelled(tmp_path):
    tiles, _ = make_texture_tiles(4, ("checker", "noise-fine"), tile=8, seed=2)
    root = tmp_path / "bare"
    root.mkdir()
    for i, t in enumerate(tiles):
        save_raster(t, root / f"t{i}.ppm")
    res = run(RunConfig(str(root), fds=True, n_clusters=2, variance_threshold=1.0))
    assert res.report["selection"] == "kmeans inertia"
    assert res.report["pca_dims"] == len(tiles) - 1
    assert "completeness" not in res.report


def test_magnification_layout(tmp_path):
    data, _ = tile_set(tmp_path / "slide" / "20.0", n=3)
    root = str(tmp_path / "slide")
    assert tile_directory(root, 20.0) == os.path.join(root, "20.0")
    with pytest.raises(NoSuchMagnification):
        tile_directory(root, 10.0)
    with pytest.raises(NoSuchMagnification):
        tile_directory(root)
    res = run(RunConfig(root, option=1, n_clusters=2, magnification=20.0))
    assert os.path.isdir(os.path.join(root, "20.0", "cluster_0"))
    assert os.path.isfile(os.path.join(root, "report.txt"))
    assert res.report["magnification"] == "20.0"


def test_run_config_validation(tmp_path):
    with pytest.raises(ValueError):
        RunConfig("d", option=3)
    with pytest.raises(ValueError):
        RunConfig("d", n_clusters=1)
    with pytest.raises(NoSuchMagnification):
        RunConfig("d", magnification=7.5)
    with pytest.raises(ValueError):
        RunConfig("d", variance_threshold=0.0)
    data, _ = tile_set(tmp_path / "tiles", n=1)
    with pytest.raises(TooFewTiles):
        run(RunConfig(data, n_clusters=5))


def test_unlabelled_tile_is_reported(tmp_path):
    data, _ = tile_set(tmp_path / "tiles", n=2)
    save_raster(Raster(np.zeros((16, 16, 3), dtype=np.uint8)), os.path.join(data, "extra.ppm"))
    with pytest.raises(KeyError):
        run(RunConfig(data, n_clusters=2))


def test_explicit_labels_file(tmp_path):
    data, _ = tile_set(tmp_path / "tiles", n=4)
    moved = tmp_path / "elsewhere.txt"
    os.rename(os.path.join(data, "labels.txt"), moved)
    with open(moved, "w") as fh:
        fh.writelines(f"tiles/tile_{i:04d}.ppm,{i // 4}\n" for i in range(16))
    res = run(RunConfig(data, n_clusters=4, labels=str(moved)))
    assert res.report["labels_file"] == "elsewhere.txt"
    assert res.report["completeness"] >= 0.99
    with pytest.raises(FileNotFoundError):
        run(RunConfig(data, n_clusters=4, labels=str(tmp_path / "missing.txt")))


def test_majority_mapping_ties_to_lowest():
    y = np.array([0, 1, 1, 2, 2, 0])
    c = np.array([5, 5, 5, 7, 7, 7])
    assert majority_mapping(y, c) == {5: 1, 7: 2}
    assert majority_mapping(np.array([3, 1]), np.array([0, 0])) == {0: 1}


def test_embedding_features_and_scatter(tmp_path):
    data, labels = tile_set(tmp_path / "tiles", n=5)
    paths, feats, y = embedding_features(RunConfig(data, option=1, n_clusters=2))
    assert feats.shape == (20, 2)
    assert np.array_equal(y, labels)
    img = scatter_plot(feats, y, size=64, margin=4, dot=1)
    assert (img.width, img.height) == (64, 64)
    assert (img.data != 255).any()
    assert completeness(labels, labels) == 1.0
