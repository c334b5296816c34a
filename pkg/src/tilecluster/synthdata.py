"""Seeded desk-scale stand-ins for labelled histology data.

Texture classes pair up on shared colour palettes (the two stripe
orientations; the two noise grains) so that mean colour alone cannot tell
every class apart, and the two noise classes differ only in grain size,
which makes them the hardest pair to separate.
"""

from __future__ import annotations

import os

import numpy as np

from tilecluster.raster import Raster, save_raster

__all__ = [
    "TEXTURE_CLASSES",
    "SOLID_COLORS",
    "make_blobs",
    "texture_patch",
    "make_texture_tiles",
    "make_synthetic_slide",
    "slide_tile_labels",
    "write_tile_set",
    "read_labels_file",
]

TEXTURE_CLASSES = (
    "solid-light", "solid-dark", "vertical-stripes", "horizontal-stripes",
    "checker", "noise-fine", "noise-coarse", "gradient",
)

_STRIPE = ((214, 128, 176), (118, 58, 146))
_CHECKER = ((236, 176, 204), (150, 70, 120))
_NOISE = ((196, 112, 170), (238, 196, 220))
_GRADIENT = ((244, 210, 226), (170, 90, 150))

SOLID_COLORS = {
    "solid-light": (242, 236, 240),
    "solid-dark": (92, 42, 112),
    "solid-pink": (226, 150, 190),
    "solid-purple": (150, 96, 180),
}

STRIPE_PERIOD = 4
COARSE_GRAIN = 2
DEFAULT_NOISE = 45.0


def _two_tone(mask, palette):
    lo, hi = (np.asarray(c, dtype=np.float64) for c in palette)
    return np.where(mask[..., None], hi, lo)


def _blend(t, palette):
    lo, hi = (np.asarray(c, dtype=np.float64) for c in palette)
    return lo + t[..., None] * (hi - lo)


def texture_patch(name, height, width, rng, random_phase=True) -> np.ndarray:
    """Noise-free (height, width, 3) float texture for class ``name``.

    With ``random_phase`` the pattern offset/orientation and the noise fields
    are drawn from ``rng``; otherwise every call returns the same image.
    """
    ys, xs = np.mgrid[0:height, 0:width]
    if not random_phase:
        rng = np.random.default_rng(TEXTURE_CLASSES.index(name) if name in TEXTURE_CLASSES else 0)
    if name in SOLID_COLORS:
        return np.broadcast_to(np.asarray(SOLID_COLORS[name], dtype=np.float64),
                               (height, width, 3)).copy()
    two_pi = 2 * np.pi / STRIPE_PERIOD
    phase = rng.uniform(0, STRIPE_PERIOD) if random_phase else 0.0
    if name == "vertical-stripes":
        return _blend(0.5 + 0.5 * np.cos(two_pi * (xs + phase)), _STRIPE)
    if name == "horizontal-stripes":
        return _blend(0.5 + 0.5 * np.cos(two_pi * (ys + phase)), _STRIPE)
    if name == "checker":
        phase2 = rng.uniform(0, STRIPE_PERIOD) if random_phase else 0.0
        wave = np.cos(two_pi * (xs + phase)) * np.cos(two_pi * (ys + phase2))
        return _blend(0.5 + 0.5 * wave, _CHECKER)
    if name == "noise-fine":
        return _two_tone(rng.random((height, width)) < 0.5, _NOISE)
    if name == "noise-coarse":
        g = COARSE_GRAIN
        coarse = rng.random((height // g + 2, width // g + 2)) < 0.5
        oy = int(rng.integers(g)) if random_phase else 0
        ox = int(rng.integers(g)) if random_phase else 0
        return _two_tone(coarse[(ys + oy) // g, (xs + ox) // g], _NOISE)
    if name == "gradient":
        t = xs / max(width - 1, 1)
        lo, hi = (np.asarray(c, dtype=np.float64) for c in _GRADIENT)
        return lo + t[..., None] * (hi - lo)
    raise ValueError(f"unknown texture class {name!r}")


def _finish(img, noise_level, rng):
    if noise_level > 0:
        img = img + rng.uniform(-noise_level, noise_level, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_texture_tiles(n_per_class: int, classes=TEXTURE_CLASSES, tile: int = 32,
                       noise_level: float = DEFAULT_NOISE, seed: int = 0, random_phase: bool = True):
    """Return ``(tiles, labels)``; label i is the index of ``classes[i]``.

    Tiles are ordered class by class.
    """
    classes = list(classes)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    tiles, labels = [], []
    for label, name in enumerate(classes):
        for _ in range(n_per_class):
            base = texture_patch(name, tile, tile, rng, random_phase)
            tiles.append(Raster(_finish(base, noise_level, rng)))
            labels.append(label)
    return tiles, np.asarray(labels, dtype=np.int64)


def make_blobs(n: int, k: int, dims: int, separation: float = 10.0,
               anisotropy=None, seed: int = 0):
    """Gaussian clusters with unit-variance noise.

    Centres sit on a regular k-gon in the first two axes with neighbouring
    centres ``separation`` apart (on a line when ``dims`` is 1).
    ``anisotropy`` is either a condition number, applied per cluster as a
    randomly rotated linear stretch, or a sequence of k (dims, dims) matrices.
    """
    if k < 1 or dims < 1:
        raise ValueError("k and dims must be positive")
    rng = np.random.default_rng(seed)
    centres = np.zeros((k, dims))
    if k > 1:
        if dims == 1:
            centres[:, 0] = separation * np.arange(k)
        else:
            radius = separation / (2 * np.sin(np.pi / k))
            angles = 2 * np.pi * np.arange(k) / k
            centres[:, 0] = radius * np.cos(angles)
            centres[:, 1] = radius * np.sin(angles)
    transforms = None
    if anisotropy is not None:
        if np.isscalar(anisotropy):
            cond = float(anisotropy)
            scale = np.full(dims, 1 / np.sqrt(cond))
            scale[0] = np.sqrt(cond)
            transforms = []
            for _ in range(k):
                q, r = np.linalg.qr(rng.normal(size=(dims, dims)))
                q = q * np.sign(np.diag(r))
                transforms.append((scale[:, None] * q.T))
        else:
            transforms = [np.asarray(a, dtype=np.float64) for a in anisotropy]
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    xs, ys = [], []
    for j in range(k):
        z = rng.normal(size=(sizes[j], dims))
        if transforms is not None:
            z = z @ transforms[j]
        xs.append(centres[j] + z)
        ys.append(np.full(sizes[j], j))
    return np.concatenate(xs), np.concatenate(ys).astype(np.int64)


def make_synthetic_slide(grid, region_px: int, seed: int = 0, noise_level: float = 8.0) -> Raster:
    """Composite slide: ``grid[r][c]`` names the texture (or solid colour) of each region."""
    grid = [list(row) for row in grid]
    if not grid or not grid[0] or any(len(r) != len(grid[0]) for r in grid):
        raise ValueError("grid must be a non-empty rectangle")
    rng = np.random.default_rng(seed)
    h, w = len(grid) * region_px, len(grid[0]) * region_px
    out = np.zeros((h, w, 3), dtype=np.uint8)
    for r, row in enumerate(grid):
        for c, name in enumerate(row):
            if isinstance(name, str):
                base = texture_patch(name, region_px, region_px, rng)
                noise = noise_level if name not in SOLID_COLORS else 0.0
            else:
                base = np.broadcast_to(np.asarray(name, dtype=np.float64), (region_px, region_px, 3))
                noise = 0.0
            out[r * region_px:(r + 1) * region_px, c * region_px:(c + 1) * region_px] = \
                _finish(base, noise, rng)
    return Raster(out)


def slide_tile_labels(grid, region_px: int, tile_size: int, factor: int = 1):
    """Majority-region label per tile of a slide built by :func:`make_synthetic_slide`.

    Returns ``{(row, col): (label, fraction)}`` where label indexes the
    flattened grid (row-major) and fraction is the majority region's share.
    """
    n_r, n_c = len(grid), len(grid[0])
    h = (n_r * region_px) // factor
    w = (n_c * region_px) // factor
    out = {}
    for row in range(h // tile_size):
        for col in range(w // tile_size):
            y0, x0 = row * tile_size * factor, col * tile_size * factor
            span = tile_size * factor
            ys = np.arange(y0, y0 + span) // region_px
            xs = np.arange(x0, x0 + span) // region_px
            counts = np.zeros(n_r * n_c, dtype=np.int64)
            ry, cy = np.unique(ys, return_counts=True)
            rx, cx = np.unique(xs, return_counts=True)
            for a, na in zip(ry, cy):
                for b, nb in zip(rx, cx):
                    counts[a * n_c + b] += na * nb
            label = int(np.argmax(counts))
            out[(row, col)] = (label, counts[label] / counts.sum())
    return out


def write_tile_set(tiles, labels, out_dir, class_names=None) -> str:
    """Write tiles as ``tile_<i>.ppm`` plus ``labels.txt``; returns the labels path."""
    os.makedirs(out_dir, exist_ok=True)
    width = max(4, len(str(len(tiles))))
    lines = []
    for i, (tile, label) in enumerate(zip(tiles, labels)):
        name = f"tile_{i:0{width}d}.ppm"
        save_raster(tile, os.path.join(out_dir, name))
        lines.append(f"{name},{int(label)}\n")
    path = os.path.join(out_dir, "labels.txt")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
    if class_names is not None:
        with open(os.path.join(out_dir, "classes.txt"), "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{i},{name}\n" for i, name in enumerate(class_names))
    return path


def read_labels_file(path) -> dict:
    """Parse ``relative/path,label`` lines into ``{absolute path: label}``.

    Paths are resolved against the directory holding the labels file.
    """
    base = os.path.dirname(os.path.abspath(path))
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rel, sep, label = line.rpartition(",")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'path,label'")
            out[os.path.normpath(os.path.join(base, rel))] = int(label)
    return out
