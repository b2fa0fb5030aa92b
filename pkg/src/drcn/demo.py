"""Deterministic synthetic imagery for smoke tests and desk-scale studies.

The generator mixes low-frequency shading, soft-edged geometric shapes and
band-limited texture, which gives a bicubic degradation something real to
lose: sharp-ish edges and mid-frequency detail a small model can learn to
restore.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .image import ImagePlane, write_png


def synthetic_plane(width: int, height: int, seed: int) -> ImagePlane:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    img = np.zeros((height, width))
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 3.0, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        img += 0.1 * np.cos(2 * np.pi * fx * xx / width + phase[0])
        img += 0.1 * np.cos(2 * np.pi * fy * yy / height + phase[1])

    # Hard-edged disks, bars and rectangles supply the step edges bicubic
    # degradation smears; edge softness is well under a pixel.
    for _ in range(20):
        cx, cy = rng.uniform(0.05, 0.95) * width, rng.uniform(0.05, 0.95) * height
        level = rng.uniform(0.25, 0.6) * rng.choice([-1.0, 1.0])
        kind = rng.random()
        if kind < 0.4:
            radius = rng.uniform(0.02, 0.16) * min(width, height)
            dist = np.hypot(xx - cx, yy - cy) - radius
        else:
            hw = rng.uniform(0.015, 0.15) * width
            hh = rng.uniform(0.01, 0.15) * height
            angle = rng.uniform(0, np.pi)
            dx = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)
            dy = -(xx - cx) * np.sin(angle) + (yy - cy) * np.cos(angle)
            dist = np.maximum(np.abs(dx) - hw, np.abs(dy) - hh)
        img += level / (1.0 + np.exp(np.clip(dist / 0.35, -60, 60)))

    # Oriented stripe patches give mid-frequency texture.
    for _ in range(8):
        cx, cy = rng.uniform(0.1, 0.9) * width, rng.uniform(0.1, 0.9) * height
        period = rng.uniform(3.0, 7.0)
        angle = rng.uniform(0, np.pi)
        carrier = np.cos(2 * np.pi * ((xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)) / period)
        envelope = np.exp(-(np.hypot(xx - cx, yy - cy) ** 2) / (2 * (0.14 * min(width, height)) ** 2))
        img += 0.22 * carrier * envelope

    img += gaussian_filter(rng.normal(0.0, 1.0, size=img.shape), sigma=0.7) * 0.05

    lo, hi = img.min(), img.max()
    img = 0.03 + 0.94 * (img - lo) / max(hi - lo, 1e-9)
    return ImagePlane(img)


def write_demo_dataset(directory: str | Path, count: int, size: int, seed: int) -> list[Path]:
    """Write ``count`` synthetic grayscale PNGs of ``size`` x ``size``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = directory / f"synth_{i:03d}.png"
        write_png(path, synthetic_plane(size, size, seed + i))
        paths.append(path)
    return paths
