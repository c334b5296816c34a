"""8-bit raster images: PPM/PNG I/O, colour features, rotation and montages.

A :class:`Raster` wraps a ``(height, width, channels)`` uint8 array, which is
exactly the row-major, channel-interleaved layout of a binary PPM payload.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from tilecluster.errors import (
    ChannelMismatch,
    CorruptHeader,
    EmptyInput,
    ShapeMismatch,
    SingularStainMatrix,
    UnsupportedFormat,
)

__all__ = [
    "Raster",
    "StainVector",
    "DEFAULT_STAINS",
    "load_raster",
    "save_raster",
    "mean_rgb",
    "rgb_to_hed",
    "hed_to_rgb",
    "mean_hed",
    "rotate90",
    "montage",
    "MONTAGE_COLUMNS",
]

MONTAGE_COLUMNS = 9
OD_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class Raster:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ShapeMismatch(f"expected (h, w, 1|3) array, got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeMismatch("raster must be at least 1x1")
        if data.dtype != np.uint8:
            raise TypeError(f"raster data must be uint8, got {data.dtype}")
        object.__setattr__(self, "data", np.ascontiguousarray(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"Raster(width={self.width}, height={self.height}, channels={self.channels})"

    @classmethod
    def solid(cls, width, height, color=(0, 0, 0)):
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[...] = np.asarray(color, dtype=np.uint8)
        return cls(arr)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def _read_ppm_tokens(buf: bytes):
    """Parse a P5/P6 header; returns (magic, width, height, maxval, offset)."""
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < 4:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise CorruptHeader("truncated PPM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the payload
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise CorruptHeader("missing whitespace after PPM header")
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise CorruptHeader(f"non-integer PPM header field: {exc}") from None
    return magic, width, height, maxval, pos + 1


def _decode_ppm(buf: bytes) -> Raster:
    magic, width, height, maxval, offset = _read_ppm_tokens(buf)
    if magic not in (b"P6", b"P5"):
        raise UnsupportedFormat(f"unsupported PNM magic {magic!r}")
    if width <= 0 or height <= 0:
        raise CorruptHeader(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormat(f"only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    payload = buf[offset:offset + size]
    if len(payload) < size:
        raise CorruptHeader(
            f"payload truncated: expected {size} bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Raster(arr.copy())


def _decode_png(path) -> Raster:
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover - Pillow is optional
        raise UnsupportedFormat("PNG decoding requires Pillow") from None
    with Image.open(path) as img:
        if img.mode not in ("RGB", "L"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.uint8)
    return Raster(arr.copy())


def load_raster(path) -> Raster:
    """Decode a binary PPM (P6/P5, maxval 255) or an 8-bit PNG file."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] in (b"P6", b"P5"):
        return _decode_ppm(buf)
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _decode_png(path)
    raise UnsupportedFormat(f"{path}: not a P6 PPM or PNG file")


def encode_ppm(r: Raster) -> bytes:
    magic = b"P6" if r.channels == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (r.width, r.height)
    return header + r.data.tobytes()


def save_raster(r: Raster, path) -> None:
    """Write ``r`` as binary PPM (P5 for single-channel rasters)."""
    with open(os.fspath(path), "wb") as fh:
        fh.write(encode_ppm(r))


# ---------------------------------------------------------------------------
# Colour features
# ---------------------------------------------------------------------------

def _require_rgb(r: Raster):
    if r.channels != 3:
        raise ChannelMismatch(f"expected 3 channels, got {r.channels}")


def mean_rgb(r: Raster) -> np.ndarray:
    _require_rgb(r)
    return r.data.reshape(-1, 3).mean(axis=0, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class StainVector:
    """Row-normalised optical-density absorption vectors for H, E and residual."""

    hematoxylin: np.ndarray
    eosin: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        for name in ("hematoxylin", "eosin", "residual"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            norm = np.linalg.norm(v)
            if v.shape != (3,) or norm == 0:
                raise SingularStainMatrix(f"{name} must be a non-zero 3-vector")
            object.__setattr__(self, name, v / norm)

    @classmethod
    def from_he(cls, hematoxylin, eosin):
        """Build the triple with residual = normalised cross product of H and E."""
        h = np.asarray(hematoxylin, dtype=np.float64)
        e = np.asarray(eosin, dtype=np.float64)
        h = h / np.linalg.norm(h)
        e = e / np.linalg.norm(e)
        return cls(h, e, np.cross(h, e))

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([self.hematoxylin, self.eosin, self.residual])

    def inverse(self) -> np.ndarray:
        m = self.matrix
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularStainMatrix(f"stain matrix is singular (cond={cond:.3g})")
        return np.linalg.inv(m)


# Ruifrok & Johnston H&E absorption rows.
DEFAULT_STAINS = StainVector.from_he((0.650, 0.704, 0.286), (0.072, 0.990, 0.105))


def rgb_to_hed(r, stains: StainVector = DEFAULT_STAINS) -> np.ndarray:
    """Colour-deconvolve ``r`` into an (h, w, 3) map of H, E, residual concentrations.

    ``r`` may also be a float array whose last axis holds RGB in [0, 255].
    """
    if isinstance(r, Raster):
        _require_rgb(r)
        rgb = r.data.astype(np.float64)
    else:
        rgb = np.asarray(r, dtype=np.float64)
        if rgb.shape[-1] != 3:
            raise ChannelMismatch(f"expected trailing RGB axis, got shape {rgb.shape}")
    inv = stains.inverse()
    od = -np.log10((rgb + OD_EPS) / 255.0)
    return od @ inv


def hed_to_rgb(hed: np.ndarray, stains: StainVector = DEFAULT_STAINS) -> np.ndarray:
    """Inverse of :func:`rgb_to_hed`; returns float RGB values (not clipped)."""
    od = np.asarray(hed, dtype=np.float64) @ stains.matrix
    return 255.0 * np.power(10.0, -od) - OD_EPS


def mean_hed(r: Raster, stains: StainVector = DEFAULT_STAINS) -> np.ndarray:
    return rgb_to_hed(r, stains).reshape(-1, 3).mean(axis=0)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def rotate_array(arr: np.ndarray, quarter_turns: int, axes=(0, 1)) -> np.ndarray:
    """Quarter-turn rotation shared by rasters and NCHW training batches.

    Turns are counter-clockwise in a y-up frame: on screen (row 0 on top) a
    single-row image ``[A, B]`` becomes the column ``[A; B]``.
    """
    return np.rot90(arr, -(int(quarter_turns) % 4), axes=axes)


def rotate90(r: Raster, quarter_turns: int) -> Raster:
    return Raster(np.ascontiguousarray(rotate_array(r.data, quarter_turns)))


def montage(rows, tile_w: int, tile_h: int) -> Raster:
    """Lay tiles out on a 9-column grid, one row per inner sequence.

    Short rows are padded with black tiles.
    """
    rows = [list(row) for row in rows]
    if not rows:
        raise EmptyInput("montage needs at least one row")
    out = np.zeros((len(rows) * tile_h, MONTAGE_COLUMNS * tile_w, 3), dtype=np.uint8)
    for i, row in enumerate(rows):
        if len(row) > MONTAGE_COLUMNS:
            raise ShapeMismatch(f"row {i} has {len(row)} tiles, max is {MONTAGE_COLUMNS}")
        for j, tile in enumerate(row):
            if tile is None:
                continue
            if tile.channels != 3:
                raise ChannelMismatch("montage tiles must be RGB")
            if (tile.width, tile.height) != (tile_w, tile_h):
                raise ShapeMismatch(
                    f"tile ({i}, {j}) is {tile.width}x{tile.height}, expected {tile_w}x{tile_h}")
            out[i * tile_h:(i + 1) * tile_h, j * tile_w:(j + 1) * tile_w] = tile.data
    return Raster(out)
