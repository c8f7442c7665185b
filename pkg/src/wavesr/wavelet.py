"""Undecimated a trous decomposition with the B3-spline kernel.

Every plane stays at full resolution; detail planes are formed by
subtraction, so reconstruction is a telescoping sum and is exact to
floating-point roundoff regardless of the boundary rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .image import save_image, validate_image

B3_TAPS = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

_BOUNDARY_MODES = ("mirror", "wrap")


@dataclass(frozen=True)
class WaveletConfig:
    levels: int = 6
    detail_gain: float = 0.8
    boundary: str = "mirror"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.detail_gain <= 0:
            raise ValueError(f"detail_gain must be > 0, got {self.detail_gain}")
        if self.boundary not in _BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {_BOUNDARY_MODES}")


@dataclass(frozen=True)
class AtrousPyramid:
    """Smooth planes c[0..S] and detail planes w[1..S] (stored 0-indexed)."""

    smooth: tuple
    details: tuple

    @property
    def levels(self) -> int:
        return len(self.details)


def dilated_b3_kernel(level: int) -> np.ndarray:
    """B3-spline taps with 2^(level-1) - 1 zeros inserted between taps."""
    if level < 1:
        raise ValueError(f"level must be >= 1, got {level}")
    step = 2 ** (level - 1)
    kernel = np.zeros(4 * step + 1)
    kernel[::step] = B3_TAPS
    return kernel


def _smooth(x: np.ndarray, level: int, boundary: str) -> np.ndarray:
    kernel = dilated_b3_kernel(level)
    out = convolve1d(x, kernel, axis=0, mode=boundary)
    return convolve1d(out, kernel, axis=1, mode=boundary)


def atrous_decompose(x_ref: np.ndarray, cfg: WaveletConfig) -> AtrousPyramid:
    """Build S smooth and S detail planes, all on the grid of the input."""
    x_ref = validate_image(x_ref)
    smooth = [x_ref]
    details = []
    for s in range(1, cfg.levels + 1):
        c = _smooth(smooth[-1], s, cfg.boundary)
        details.append(smooth[-1] - c)
        smooth.append(c)
    return AtrousPyramid(smooth=tuple(smooth), details=tuple(details))


def reconstruct(pyramid: AtrousPyramid) -> np.ndarray:
    """Coarsest smooth plane plus all detail planes."""
    out = pyramid.smooth[-1].copy()
    for w in pyramid.details:
        out += w
    return out


def partial_targets(pyramid: AtrousPyramid, detail_gain: float) -> list[np.ndarray]:
    """Coarse-to-fine clean targets: coarsest plane plus gain-scaled detail sums.

    targets[s] = c_S + detail_gain * (w_1 + ... + w_s), so consecutive targets
    differ by exactly detail_gain * w_s and targets[S] with gain 1 is the input.
    """
    if detail_gain <= 0:
        raise ValueError(f"detail_gain must be > 0, got {detail_gain}")
    targets = [pyramid.smooth[-1].copy()]
    acc = np.zeros_like(pyramid.smooth[-1])
    for w in pyramid.details:
        acc = acc + w
        targets.append(pyramid.smooth[-1] + detail_gain * acc)
    return targets


def dump_subbands(pyramid: AtrousPyramid, out_dir) -> list[Path]:
    """Write the coarsest plane and each detail plane as affinely-rescaled PNGs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def rescale(plane):
        lo, hi = plane.min(), plane.max()
        if hi - lo < 1e-12:
            return np.full_like(plane, 0.5)
        return (plane - lo) / (hi - lo)

    path = out_dir / "smooth_final.png"
    save_image(path, rescale(pyramid.smooth[-1]))
    written.append(path)
    for s, w in enumerate(pyramid.details, start=1):
        path = out_dir / f"detail_{s:02d}.png"
        save_image(path, rescale(w))
        written.append(path)
    return written
