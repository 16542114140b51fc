"""Deterministic synthetic 28x28 digit corpus.

Stand-in for handwritten-digit IDX data in environments without the
real files: a 5x7 dot-matrix glyph per class (two handwriting styles
above mild distortion) is upscaled, jittered in position, rotation,
stroke intensity and blur, and dosed with pixel noise.  Samples are reproducible from the seed, class-balanced
round-robin, and are typically written to IDX files so runs exercise
the production loaders.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError
from .store import Dataset, save_idx_images, save_idx_labels

_FONT = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}

# second handwriting style per digit, drawn so most alternates sit a
# few cells from ANOTHER digit's shape (plain 0 vs 8, round 3 vs 8,
# boxy 9 vs open 4, loopless 5 vs 6, lightning 2 vs 7): classes share
# strokes the way handwritten digits do, instead of each owning a
# private far-apart template
_ALT_FONT = {
    0: ("01110", "10001", "10001", "10001", "10001", "10001", "01110"),
    1: ("00100", "00100", "00100", "00100", "00100", "00100", "00100"),
    2: ("11111", "00001", "00010", "00100", "01000", "10000", "11111"),
    3: ("01110", "10001", "00001", "00110", "00001", "10001", "01110"),
    4: ("10010", "10010", "10010", "11111", "00010", "00010", "00010"),
    5: ("00110", "01000", "10000", "11110", "00001", "00001", "01110"),
    6: ("01110", "10000", "10000", "11110", "10001", "10001", "01110"),
    7: ("01111", "00001", "00010", "00100", "00100", "00100", "00100"),
    8: ("01110", "10001", "01010", "00100", "01010", "10001", "01110"),
    9: ("11110", "10010", "10010", "11110", "00010", "00010", "00010"),
}

_SCALE = 3
_SIDE = 28


def _bitmap(rows) -> np.ndarray:
    return np.array([[c == "1" for c in row] for row in rows], dtype=np.float64)


_BITMAPS = {d: _bitmap(_FONT[d]) for d in range(10)}
_ALT_BITMAPS = {d: _bitmap(_ALT_FONT[d]) for d in range(10)}


def _render(digit: int, rng: np.random.Generator, distortion: float) -> np.ndarray:
    bitmap = _BITMAPS[digit]
    extra = max(0.0, distortion - 1.0)
    if extra > 0.0:
        # style variety: alternate glyph shapes and pen thickness force
        # the class manifolds closer together, like handwriting does
        if rng.random() < min(0.5, 0.5 * extra):
            bitmap = _ALT_BITMAPS[digit]
        if rng.random() < min(0.4, 0.25 * extra):
            bold = np.zeros_like(bitmap)
            bold[:, 1:] = bitmap[:, :-1]
            bitmap = np.maximum(bitmap, bold)
        # structural ambiguity: drop or add whole stroke cells, like sloppy
        # handwriting; this is what keeps a trained model honestly calibrated
        drop = rng.random(bitmap.shape) < 0.04 * extra
        add = rng.random(bitmap.shape) < 0.02 * extra
        bitmap = np.maximum(np.where(drop, 0.0, bitmap), add)
    glyph = np.kron(bitmap, np.ones((_SCALE, _SCALE)))
    zoom = rng.uniform(max(0.55, 1.0 - 0.25 * extra), min(1.2, 1.0 + 0.2 * extra))
    if abs(zoom - 1.0) > 1e-9:
        glyph = np.clip(ndimage.zoom(glyph, zoom, order=1), 0.0, 1.0)
    gh, gw = glyph.shape
    canvas = np.zeros((_SIDE, _SIDE))
    top = int(rng.integers(1, max(2, _SIDE - gh - 1)))
    left = int(rng.integers(1, max(2, _SIDE - gw - 1)))
    # above mild distortion the ink floor RISES: bright near-saturated
    # strokes with blurred fringes are what give the remaining-headroom
    # attack scores something to discriminate, like scanned handwriting
    intensity_lo = 0.7 if extra > 0.0 else max(0.3, 1.0 - 0.3 * distortion)
    jitter_lo = 0.65 if extra > 0.0 else max(0.25, 1.0 - 0.2 * distortion)
    intensity = rng.uniform(intensity_lo, 1.0)
    jitter = rng.uniform(jitter_lo, 1.0, glyph.shape)
    canvas[top : top + gh, left : left + gw] = glyph * intensity * jitter
    tilt = 15.0 * min(distortion, 2.3)  # past ~35 degrees digits start to alias
    angle = rng.uniform(-tilt, tilt)
    canvas = ndimage.rotate(canvas, angle, reshape=False, order=1, mode="constant")
    # smooth random displacement field; strength ramps in above distortion 1
    alpha = 10.0 * extra
    field = [
        ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, canvas.shape), 4.0) * alpha
        for _ in range(2)
    ]
    if alpha > 0.0:
        rows, cols = np.meshgrid(np.arange(_SIDE), np.arange(_SIDE), indexing="ij")
        coords = np.stack([rows + field[0], cols + field[1]])
        canvas = ndimage.map_coordinates(canvas, coords, order=1, mode="constant")
    canvas = ndimage.gaussian_filter(
        canvas, sigma=rng.uniform(0.4, min(1.4, 0.4 + 0.6 * distortion))
    )
    canvas = canvas + rng.normal(0.0, 0.02 * distortion, canvas.shape)
    # salt-and-pepper clutter: isolated saturated pixels carry no class
    # evidence, so models trained on this stop trusting single pixels
    if extra > 0.0:
        salt = rng.random(canvas.shape) < 0.015 * extra
        pepper = rng.random(canvas.shape) < 0.015 * extra
        canvas = np.where(salt, rng.uniform(0.6, 1.0, canvas.shape), canvas)
        canvas = np.where(pepper, 0.0, canvas)
    return np.clip(canvas, 0.0, 1.0)


def synthetic_digits(
    n: int, seed: int = 0, class_count: int = 10, distortion: float = 1.0
) -> Dataset:
    """Generate n samples, labels round-robin over the first class_count digits.

    ``distortion`` scales every deformation source at once (rotation and
    zoom range, stroke fading, blur, pixel noise, elastic warp, glyph
    style and pen-thickness mixing); 1.0 is the mild default, ~2.0
    approaches handwriting-level variability.
    """
    if not 2 <= class_count <= 10:
        raise ConfigurationError("class_count must lie in [2, 10]")
    if n < 1:
        raise ConfigurationError("n must be positive")
    if not 0.0 < distortion <= 4.0:
        raise ConfigurationError("distortion must lie in (0, 4]")
    rng = np.random.default_rng(seed)
    images = np.empty((n, _SIDE, _SIDE, 1), dtype=np.float32)
    labels = np.arange(n) % class_count
    for i in range(n):
        images[i, :, :, 0] = _render(int(labels[i]), rng, distortion)
    return Dataset(images=images, labels=labels.astype(np.int64), class_count=class_count)


def write_idx_pair(data: Dataset, images_path, labels_path) -> None:
    """Quantize a dataset to uint8 and write an IDX image/label file pair."""
    if data.images.ndim != 4 or data.images.shape[3] != 1:
        raise ConfigurationError("IDX export needs single-channel (N, H, W, 1) images")
    images = np.round(data.images[..., 0] * 255.0).astype(np.uint8)
    save_idx_images(images_path, images)
    save_idx_labels(labels_path, data.labels)
