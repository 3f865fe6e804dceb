"""Seeded synthetic segmentation scenes for desk-scale training.

Each scene is a textured background (class 0) with a few coloured shapes
painted over it: rectangles, ellipses and long thin bars in both
orientations, so targets come in square, wide and tall aspect ratios.  The
shape's class fixes its base hue; brightness, texture and noise vary.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

IGNORE_INDEX = 255


@dataclass(frozen=True)
class LabeledSample:
    image: np.ndarray   # (1, 3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (H, W) uint8, 255 = ignore

    def __post_init__(self):
        if self.image.ndim != 4 or self.image.shape[:2] != (1, 3):
            raise ValueError(f"image must be (1, 3, H, W), got {self.image.shape}")
        if self.labels.shape != self.image.shape[2:]:
            raise ValueError(f"label dims {self.labels.shape} do not match image {self.image.shape[2:]}")


def class_colors(num_classes: int) -> np.ndarray:
    """Base RGB per foreground class 1..K-1 (row 0 is unused), evenly spaced hues."""
    out = np.zeros((num_classes, 3))
    for k in range(1, num_classes):
        out[k] = colorsys.hsv_to_rgb((k - 1) / max(num_classes - 1, 1), 0.85, 0.9)
    return out


def _smooth_noise(rng, h, w, cell):
    coarse = rng.random((h // cell + 2, w // cell + 2))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    a = coarse[y0][:, x0]
    b = coarse[y0][:, x0 + 1]
    c = coarse[y0 + 1][:, x0]
    d = coarse[y0 + 1][:, x0 + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def _shape_mask(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    kind = rng.integers(3)
    s = min(h, w)
    if kind == 0:  # rectangle
        rh, rw = rng.integers(s // 5, s // 2 + 1, size=2)
    elif kind == 1:  # ellipse
        ry, rx = rng.uniform(s / 10, s / 4, size=2)
        cy, cx = rng.uniform(ry, h - ry), rng.uniform(rx, w - rx)
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    else:  # bar, long axis chosen at random
        long, short = rng.integers(s // 2, 7 * s // 8 + 1), rng.integers(max(s // 12, 2), s // 6 + 1)
        rh, rw = (long, short) if rng.random() < 0.5 else (short, long)
    y0 = rng.integers(0, h - rh + 1)
    x0 = rng.integers(0, w - rw + 1)
    return (yy >= y0) & (yy < y0 + rh) & (xx >= x0) & (xx < x0 + rw)


def make_sample(rng: np.random.Generator, size, num_classes: int, max_shapes: int = 4) -> LabeledSample:
    h, w = size
    colors = class_colors(num_classes)
    tex = _smooth_noise(rng, h, w, 8)
    base = rng.uniform(0.25, 0.55)
    img = np.repeat((base + 0.25 * (tex - 0.5))[None], 3, axis=0)
    img += rng.uniform(-0.04, 0.04, size=(3, 1, 1))
    labels = np.zeros((h, w), dtype=np.uint8)
    for _ in range(rng.integers(1, max_shapes + 1)):
        k = rng.integers(1, num_classes)
        mask = _shape_mask(rng, h, w)
        shade = rng.uniform(0.8, 1.1) * (0.85 + 0.3 * _smooth_noise(rng, h, w, 4))
        img[:, mask] = (colors[k][:, None, None] * shade[None])[:, mask]
        labels[mask] = k
    img += rng.normal(0.0, 0.03, size=img.shape)
    return LabeledSample(np.clip(img, 0, 1).astype(np.float32)[None], labels)


def synth_dataset(seed: int, count: int, size=64, num_classes: int = 4) -> list[LabeledSample]:
    """``count`` deterministic samples of ``size`` (int or (H, W), divisible by 8)."""
    h, w = (size, size) if isinstance(size, int) else size
    if h < 8 or w < 8 or h % 8 or w % 8:
        raise ValueError(f"size must be a positive multiple of 8 on both axes, got {h}x{w}")
    if num_classes < 2:
        raise ValueError("num_classes must be at least 2")
    rng = np.random.default_rng(seed)
    return [make_sample(rng, (h, w), num_classes) for _ in range(count)]
