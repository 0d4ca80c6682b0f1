"""Synthetic labelled dataset: axis-aligned color bands, one band per class.

Each image is split along a randomly chosen axis into ``classes`` bands of
near-equal width (boundaries jittered by up to ``size // 16`` pixels). The
band order is a random permutation of the class ids, so position carries no
label information. Every class has a fixed base hue; each image jitters the
hue and brightness slightly and adds Gaussian noise with sigma 0.02.
"""

import colorsys
from dataclasses import dataclass

import numpy as np

NOISE_SIGMA = 0.02
HUE_JITTER = 0.03
VALUE_JITTER = 0.08


@dataclass
class SyntheticSet:
    images: np.ndarray  # (n, size, size, 3) float64 in [0, 1]
    labels: np.ndarray  # (n, size, size) uint8 region ids

    def __len__(self):
        return len(self.images)

    def split(self, n_train):
        return (SyntheticSet(self.images[:n_train], self.labels[:n_train]),
                SyntheticSet(self.images[n_train:], self.labels[n_train:]))


def class_colors(classes):
    """Base RGB color of each class: evenly spaced hues."""
    return np.array([colorsys.hsv_to_rgb(c / max(classes, 1), 0.75, 0.8) for c in range(classes)])


def _band_edges(size, classes, rng):
    edges = np.round(np.arange(1, classes) * size / classes).astype(int)
    jitter = max(size // 16, 0)
    if jitter:
        edges = edges + rng.integers(-jitter, jitter + 1, size=edges.size)
    return np.concatenate([[0], np.clip(edges, 1, size - 1), [size]])


def generate_synthetic(n, size=32, classes=3, seed=0) -> SyntheticSet:
    if n < 0 or size < 2 or classes < 1 or classes > size:
        raise ValueError(f"need n >= 0, size >= 2 and 1 <= classes <= size (got {n}, {size}, {classes})")
    rng = np.random.default_rng(seed)
    images = np.empty((n, size, size, 3))
    labels = np.empty((n, size, size), dtype=np.uint8)
    for i in range(n):
        axis = int(rng.integers(2))
        edges = np.sort(_band_edges(size, classes, rng))
        order = rng.permutation(classes)
        band = np.empty(size, dtype=np.uint8)
        for b in range(classes):
            band[edges[b]:edges[b + 1]] = order[b]
        lab = np.broadcast_to(band[:, None] if axis == 0 else band[None, :], (size, size))
        colors = np.empty((classes, 3))
        for c in range(classes):
            h = (c / classes + rng.uniform(-HUE_JITTER, HUE_JITTER)) % 1.0
            v = 0.8 + rng.uniform(-VALUE_JITTER, VALUE_JITTER)
            colors[c] = colorsys.hsv_to_rgb(h, 0.75, v)
        img = colors[lab] + rng.normal(0.0, NOISE_SIGMA, size=(size, size, 3))
        images[i] = np.clip(img, 0.0, 1.0)
        labels[i] = lab
    return SyntheticSet(images, labels)
