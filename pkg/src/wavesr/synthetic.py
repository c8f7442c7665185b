"""Structured synthetic test images for regressions and ablation runs."""

from __future__ import annotations

import numpy as np


def make_test_image(height: int = 64, width: int = 64, channels: int = 1,
                    checker_period: int = 8, stripe_period: int = 12) -> np.ndarray:
    """Checkerboard blended with diagonal sinusoidal stripes, values in [0, 1]."""
    i, j = np.mgrid[0:height, 0:width]
    checker = ((i // checker_period + j // checker_period) % 2).astype(np.float64)
    stripes = 0.5 * (1.0 + np.sin(2.0 * np.pi * (i + j) / stripe_period))
    img = 0.55 * checker + 0.45 * stripes
    return np.repeat(img[:, :, None], channels, axis=2)
