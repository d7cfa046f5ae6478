"""Deterministic procedural test scenes.

Multi-scale smooth noise plus a few hard-edged shapes: enough texture for
the consistency losses to discriminate parameters, smooth enough that
bilinear resampling round trips stay above 30 dB.
"""

from __future__ import annotations

import numpy as np

from .warp import resize_bilinear


def make_scene(seed: int, size: int = 257, channels: int = 3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size, channels))
    for coarse, weight in ((5, 0.45), (17, 0.3), (49, 0.25)):
        noise = rng.random((coarse, coarse, channels))
        img += resize_bilinear(noise, size) * weight

    # a few filled discs and axis-aligned bars for sharp structure
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    for _ in range(4):
        cx, cy = rng.random(2)
        rad = 0.05 + 0.12 * rng.random()
        col = rng.random(channels)
        disc = (xx - cx) ** 2 + (yy - cy) ** 2 < rad**2
        img[disc] = 0.3 * img[disc] + 0.7 * col
    for _ in range(3):
        x0 = rng.random() * 0.9
        wdt = 0.02 + 0.04 * rng.random()
        col = rng.random(channels)
        bar = (xx > x0) & (xx < x0 + wdt)
        img[bar] = 0.4 * img[bar] + 0.6 * col

    return np.clip(img, 0.0, 1.0)


def desk_set(count: int, size: int = 257, seed: int = 0) -> list[np.ndarray]:
    """A reproducible list of ``count`` distinct scenes."""
    return [make_scene(seed * 10_000 + i, size=size) for i in range(count)]
