"""Plain-text model files.

Layout::

    MODEL <kind> v1
    <key> <value...>            (header lines, keys may repeat)
    ARRAY <name> <d1> <d2> ...  (zero dims for a scalar)
    <row-major values, one innermost row per line, %.17g>
    END

Seventeen significant digits make float64 values round-trip exactly.
"""

from __future__ import annotations

import os

import numpy as np

from tilecluster.cluster import GmmModel, KMeansModel
from tilecluster.errors import CorruptModel, ModelMissing
from tilecluster.linalg import PcaModel

FORMAT_VERSION = "v1"
KINDS = ("pca", "kmeans", "gmm", "autoencoder")


class ModelFile:
    """Parsed contents: ``kind``, ordered ``header`` pairs and named ``arrays``."""

    def __init__(self, kind, header=None, arrays=None):
        self.kind = kind
        self.header = list(header or [])
        self.arrays = dict(arrays or {})

    def get(self, key, default=None):
        for k, v in self.header:
            if k == key:
                return v
        if default is not None:
            return default
        raise CorruptModel(f"model file lacks header key {key!r}")

    def get_all(self, key):
        return [v for k, v in self.header if k == key]

    def array(self, name):
        try:
            return self.arrays[name]
        except KeyError:
            raise CorruptModel(f"model file lacks array {name!r}") from None

    def dumps(self) -> str:
        out = [f"MODEL {self.kind} {FORMAT_VERSION}"]
        out += [f"{k} {v}" for k, v in self.header]
        for name, arr in self.arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            out.append(" ".join(["ARRAY", name] + [str(d) for d in arr.shape]))
            rows = arr.reshape(-1, arr.shape[-1]) if arr.ndim else arr.reshape(1, 1)
            if arr.size:
                out += [" ".join(f"{v:.17g}" for v in row) for row in rows]
        out.append("END")
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ModelFile":
        lines = text.splitlines()
        if not lines:
            raise CorruptModel("empty model file")
        first = lines[0].split()
        if len(first) != 3 or first[0] != "MODEL":
            raise CorruptModel(f"bad model signature {lines[0]!r}")
        if first[2] != FORMAT_VERSION:
            raise CorruptModel(f"unsupported model format version {first[2]!r}")
        mf = cls(first[1])
        i = 1
        while i < len(lines) and not lines[i].startswith(("ARRAY ", "END")):
            key, _, value = lines[i].partition(" ")
            mf.header.append((key, value))
            i += 1
        while i < len(lines) and lines[i] != "END":
            parts = lines[i].split()
            if parts[0] != "ARRAY" or len(parts) < 2:
                raise CorruptModel(f"line {i + 1}: expected ARRAY, got {lines[i]!r}")
            name, dims = parts[1], tuple(int(d) for d in parts[2:])
            size = int(np.prod(dims)) if dims else 1
            i += 1
            values = []
            while len(values) < size:
                if i >= len(lines) or lines[i] == "END" or lines[i].startswith("ARRAY "):
                    raise CorruptModel(f"array {name!r} is truncated")
                values.extend(float(v) for v in lines[i].split())
                i += 1
            if len(values) != size:
                raise CorruptModel(f"array {name!r} has {len(values)} values, expected {size}")
            mf.arrays[name] = np.array(values, dtype=np.float64).reshape(dims)
        if i >= len(lines):
            raise CorruptModel("missing END marker")
        return mf


def _ints(text):
    return tuple(int(t) for t in text.split())


def _pca_file(m: PcaModel):
    return ModelFile("pca", [("n_samples", m.n_samples)], {
        "mean": m.mean, "components": m.components,
        "explained_variance": m.explained_variance,
        "explained_variance_ratio": m.explained_variance_ratio})


def _pca_from(mf):
    return PcaModel(mf.array("mean"), mf.array("components"), mf.array("explained_variance"),
                    mf.array("explained_variance_ratio"), int(mf.get("n_samples")))


def _kmeans_file(m: KMeansModel):
    return ModelFile("kmeans", [("k", m.k), ("n_iter", m.n_iter), ("seed", m.seed),
                                ("init", m.init), ("inertia", f"{m.inertia:.17g}")],
                     {"centroids": m.centroids,
                      "inertia_history": np.asarray(m.inertia_history, dtype=np.float64)})


def _kmeans_from(mf):
    return KMeansModel(int(mf.get("k")), mf.array("centroids"), float(mf.get("inertia")),
                       int(mf.get("n_iter")), int(mf.get("seed")), mf.get("init"),
                       tuple(mf.array("inertia_history").tolist()))


def _gmm_file(m: GmmModel):
    return ModelFile("gmm", [
        ("k", m.k), ("covariance_type", m.covariance_type), ("seed", m.seed),
        ("n_iter", m.n_iter), ("converged", int(m.converged)),
        ("reg_covar", f"{m.reg_covar:.17g}"), ("log_likelihood", f"{m.log_likelihood:.17g}"),
    ], {"weights": m.weights, "means": m.means, "covariances": m.covariances,
        "history": np.asarray(m.history, dtype=np.float64)})


def _gmm_from(mf):
    return GmmModel(int(mf.get("k")), mf.array("weights"), mf.array("means"),
                    mf.array("covariances"), mf.get("covariance_type"),
                    float(mf.get("log_likelihood")), int(mf.get("seed")),
                    int(mf.get("n_iter")), bool(int(mf.get("converged"))),
                    float(mf.get("reg_covar")), tuple(mf.array("history").tolist()))


def _ae_file(m):
    header = [("name", m.name), ("seed", m.seed),
              ("input_shape", " ".join(str(s) for s in m.input_shape))]
    header += [("encoder", s.describe()) for s in m.encoder_specs]
    header += [("decoder", s.describe()) for s in m.decoder_specs]
    if m.head_spec is not None:
        header += [("head", f"{m.head_spec.n_classes} {m.head_spec.loss}")]
    arrays = {name: layer.params[key] for name, layer, key in m.named_parameters()}
    return ModelFile("autoencoder", header, arrays)


def _ae_from(mf):
    from tilecluster.neural.layers import LayerSpec
    from tilecluster.neural.model import AutoencoderModel, HeadSpec

    head = None
    if mf.get_all("head"):
        n, loss = mf.get("head").split()
        head = HeadSpec(int(n), loss)
    m = AutoencoderModel(_ints(mf.get("input_shape")),
                         [LayerSpec.parse(t) for t in mf.get_all("encoder")],
                         [LayerSpec.parse(t) for t in mf.get_all("decoder")],
                         head=head, seed=int(mf.get("seed")), name=mf.get("name"))
    for name, layer, key in m.named_parameters():
        arr = mf.array(name)
        if arr.shape != layer.params[key].shape:
            raise CorruptModel(f"{name}: stored shape {arr.shape} != {layer.params[key].shape}")
        layer.params[key] = arr
    return m


def to_model_file(model) -> ModelFile:
    if isinstance(model, PcaModel):
        return _pca_file(model)
    if isinstance(model, KMeansModel):
        return _kmeans_file(model)
    if isinstance(model, GmmModel):
        return _gmm_file(model)
    if hasattr(model, "named_parameters"):
        return _ae_file(model)
    raise TypeError(f"cannot persist {type(model).__name__}")


_READERS = {"pca": _pca_from, "kmeans": _kmeans_from, "gmm": _gmm_from, "autoencoder": _ae_from}


def from_model_file(mf: ModelFile):
    if mf.kind not in _READERS:
        raise CorruptModel(f"unknown model kind {mf.kind!r}")
    return _READERS[mf.kind](mf)


def save_model(model, path) -> None:
    text = to_model_file(model).dumps()
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_model(path, kind=None):
    """Read a model file; ``kind`` optionally asserts what it must contain."""
    if not os.path.isfile(path):
        raise ModelMissing(f"no model file at {path}")
    with open(path, encoding="utf-8") as fh:
        mf = ModelFile.loads(fh.read())
    if kind is not None and mf.kind != kind:
        raise CorruptModel(f"{path} holds a {mf.kind} model, expected {kind}")
    return from_model_file(mf)
