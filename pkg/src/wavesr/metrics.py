"""PSNR and single-scale SSIM reference implementations."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .image import validate_image

# BT.601 luma weights, used when evaluating on the Y channel only.
_LUMA = np.array([0.299, 0.587, 0.114])

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _prepare(a, b, y_channel: bool, crop_border: int):
    a, b = validate_image(a), validate_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if y_channel and a.shape[2] == 3:
        a = (a @ _LUMA)[:, :, None]
        b = (b @ _LUMA)[:, :, None]
    if crop_border > 0:
        if 2 * crop_border >= min(a.shape[0], a.shape[1]):
            raise ValueError(f"crop_border {crop_border} leaves no pixels")
        a = a[crop_border:-crop_border, crop_border:-crop_border]
        b = b[crop_border:-crop_border, crop_border:-crop_border]
    return a, b


def psnr(a, b, peak: float = 1.0, y_channel: bool = False, crop_border: int = 0) -> float:
    """10 log10(peak^2 / MSE) over all pixels and channels; inf if identical."""
    a, b = _prepare(a, b, y_channel, crop_border)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-0.5 * ((np.arange(size) - half) / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, peak: float = 1.0, y_channel: bool = False, crop_border: int = 0) -> float:
    """Mean SSIM over all fully-contained 11x11 gaussian windows, channel-averaged."""
    a, b = _prepare(a, b, y_channel, crop_border)
    h, w, c = a.shape
    if min(h, w) < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than SSIM window {SSIM_WINDOW}")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    values = []
    for ch in range(c):
        x, y = a[:, :, ch], b[:, :, ch]
        wx = np.lib.stride_tricks.sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
        wy = np.lib.stride_tricks.sliding_window_view(y, (SSIM_WINDOW, SSIM_WINDOW))
        mu_x = np.tensordot(wx, win, axes=([2, 3], [0, 1]))
        mu_y = np.tensordot(wy, win, axes=([2, 3], [0, 1]))
        xx = np.tensordot(wx * wx, win, axes=([2, 3], [0, 1])) - mu_x * mu_x
        yy = np.tensordot(wy * wy, win, axes=([2, 3], [0, 1])) - mu_y * mu_y
        xy = np.tensordot(wx * wy, win, axes=([2, 3], [0, 1])) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def write_metrics_csv(path, rows: list[dict]) -> None:
    """Write per-image metric rows; columns are the union of the row keys."""
    path = Path(path)
    fieldnames = list(dict.fromkeys(k for row in rows for k in row))
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
