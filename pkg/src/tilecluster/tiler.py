"""Pyramid tiling of a large raster into fixed-size, non-overlapping tiles.

Output layout::

    <out_dir>/<magnification>/tile_<row>_<col>.ppm
    <out_dir>/manifest.txt

Each manifest line is ``level<TAB>row<TAB>col<TAB>path<TAB>skipped`` with
``path`` relative to ``out_dir`` (``-`` for skipped background tiles).
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from tilecluster.errors import DegenerateOutput, NoSuchMagnification
from tilecluster.raster import Raster, save_raster

log = logging.getLogger(__name__)

MAGNIFICATIONS = {1.25: 16, 2.5: 8, 5.0: 4, 10.0: 2, 20.0: 1}
MANIFEST_NAME = "manifest.txt"


def level_name(magnification: float) -> str:
    return repr(float(magnification))


@dataclass
class PyramidSpec:
    levels: dict = field(default_factory=lambda: dict(MAGNIFICATIONS))
    tile_size: int = 150
    background_threshold: float | None = None

    def __post_init__(self):
        if self.tile_size < 8:
            raise ValueError(f"tile_size must be >= 8, got {self.tile_size}")
        if not self.levels:
            raise ValueError("at least one pyramid level is required")
        for mag in self.levels:
            if float(mag) not in MAGNIFICATIONS:
                raise NoSuchMagnification(
                    f"{mag} is not one of {sorted(MAGNIFICATIONS)}")
        ordered = sorted(self.levels.items())
        for mag, f in ordered:
            if f < 1 or f & (f - 1):
                raise ValueError(f"downsample factor {f} for {mag} is not a power of two")
        factors = [f for _, f in ordered]
        if any(a <= b for a, b in zip(factors, factors[1:])):
            raise ValueError("downsample factors must decrease as magnification increases")
        if self.background_threshold is not None and not 0 <= self.background_threshold <= 255:
            raise ValueError("background_threshold must lie in [0, 255]")

    @classmethod
    def for_magnifications(cls, magnifications, **kwargs):
        levels = {}
        for m in magnifications:
            m = float(m)
            if m not in MAGNIFICATIONS:
                raise NoSuchMagnification(f"{m} is not one of {sorted(MAGNIFICATIONS)}")
            levels[m] = MAGNIFICATIONS[m]
        return cls(levels=levels, **kwargs)


@dataclass(frozen=True)
class TileRecord:
    level: str
    row: int
    col: int
    path: str | None
    skipped: bool = False


@dataclass
class TileManifest:
    root: str
    records: list

    def for_level(self, level) -> list:
        name = level if isinstance(level, str) else level_name(level)
        return [r for r in self.records if r.level == name]

    def paths(self, level=None) -> list:
        recs = self.records if level is None else self.for_level(level)
        return [os.path.join(self.root, r.path) for r in recs if not r.skipped]

    def write(self, path=None) -> str:
        path = path or os.path.join(self.root, MANIFEST_NAME)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in self.records:
                fh.write(f"{r.level}\t{r.row}\t{r.col}\t{r.path or '-'}\t{int(r.skipped)}\n")
        return path

    @classmethod
    def read(cls, path):
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                level, row, col, rel, skipped = line.rstrip("\n").split("\t")
                records.append(TileRecord(level, int(row), int(col),
                                          None if rel == "-" else rel, skipped == "1"))
        return cls(os.path.dirname(os.path.abspath(path)), records)


def downsample(r: Raster, factor: int) -> Raster:
    """Mean-pool ``factor`` x ``factor`` blocks, rounding halves up.

    Trailing rows/columns that do not fill a whole block are dropped.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return r
    h, w = r.height // factor, r.width // factor
    if h == 0 or w == 0:
        raise DegenerateOutput(
            f"downsampling {r.width}x{r.height} by {factor} leaves no pixels")
    block = r.data[:h * factor, :w * factor].astype(np.int64)
    sums = block.reshape(h, factor, w, factor, r.channels).sum(axis=(1, 3))
    n = factor * factor
    # round(sum / n) with ties up, in exact integer arithmetic
    out = (2 * sums + n) // (2 * n)
    return Raster(out.astype(np.uint8))


def luminance(r: Raster) -> float:
    d = r.data.reshape(-1, r.channels).astype(np.float64)
    if r.channels == 1:
        return float(d.mean())
    return float((d @ np.array([0.299, 0.587, 0.114])).mean())


def _tile_level(slide: Raster, mag: float, factor: int, spec: PyramidSpec, out_dir: str):
    name = level_name(mag)
    scaled = downsample(slide, factor)
    t = spec.tile_size
    n_rows, n_cols = scaled.height // t, scaled.width // t
    if n_rows == 0 or n_cols == 0:
        raise DegenerateOutput(
            f"level {name}: {scaled.width}x{scaled.height} is smaller than one {t}px tile")
    level_dir = os.path.join(out_dir, name)
    os.makedirs(level_dir, exist_ok=True)
    records = []
    for row in range(n_rows):
        for col in range(n_cols):
            tile = Raster(scaled.data[row * t:(row + 1) * t, col * t:(col + 1) * t])
            if (spec.background_threshold is not None
                    and luminance(tile) > spec.background_threshold):
                records.append(TileRecord(name, row, col, None, True))
                continue
            rel = os.path.join(name, f"tile_{row}_{col}.ppm")
            save_raster(tile, os.path.join(out_dir, rel))
            records.append(TileRecord(name, row, col, rel, False))
    return records


def tile_pyramid(slide: Raster, spec: PyramidSpec, out_dir) -> TileManifest:
    """Tile ``slide`` at every level of ``spec`` and write the manifest."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for mag, factor in sorted(spec.levels.items()):
        records.extend(_tile_level(slide, mag, factor, spec, out_dir))
        log.info("level %s: %d tiles", level_name(mag), len(records))
    manifest = TileManifest(out_dir, records)
    manifest.write()
    return manifest


def usable_levels(slide: Raster, tile_size: int) -> list:
    """Magnifications at which ``slide`` yields at least one whole tile."""
    out = []
    for mag, f in sorted(MAGNIFICATIONS.items()):
        if slide.width // f >= tile_size and slide.height // f >= tile_size:
            out.append(mag)
    return out
