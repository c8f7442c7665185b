"""Image I/O, bicubic resampling, and the linear degradation operator.

Images are numpy float64 arrays of shape (H, W, C) with C in {1, 3} and
values nominally in [0, 1].  Nothing in this module clamps intermediate
values; clamping happens once, on 8-bit export.

The degradation operator D (downsampling by a possibly non-integer factor,
either bicubic or gaussian-blur-then-subsample) is realised as a pair of
sparse matrices acting separably on rows and columns, so its exact
transpose is available for gradient computations.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import sparse

from .errors import ImageIOError

_FLOOR_EPS = 1e-9


def tolerant_floor(v: float) -> int:
    """floor() that forgives float representation error just below an integer."""
    return int(math.floor(v + _FLOOR_EPS))


def validate_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, C) with C in {{1, 3}}, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


# ---------------------------------------------------------------------------
# File I/O: PNG (via Pillow) and binary PGM/PPM (own reader/writer).

def load_image(path) -> np.ndarray:
    """Load an 8- or 16-bit PNG/PGM/PPM as float64 in [0, 1], shape (H, W, C)."""
    path = Path(path)
    if not path.exists():
        raise ImageIOError(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".png":
        return _load_png(path)
    if suffix in (".pgm", ".ppm", ".pnm"):
        return _load_pnm(path)
    raise ImageIOError(f"unsupported format '{suffix}' (expected .png, .pgm or .ppm)")


def _load_png(path: Path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except Exception as exc:
        raise ImageIOError(f"cannot read PNG {path}: {exc}") from exc
    if mode in ("L", "RGB"):
        return validate_image(arr.astype(np.float64) / 255.0)
    if mode in ("I;16", "I"):
        arr = arr.astype(np.float64)
        if mode == "I" and arr.max() > 65535:
            raise ImageIOError(f"unsupported bit depth in {path}")
        return validate_image(arr / 65535.0)
    raise ImageIOError(f"unsupported PNG mode '{mode}' in {path} (need 8/16-bit gray or 8-bit RGB)")


def _load_pnm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    m = re.match(rb"^(P[56])\s", data)
    if m is None:
        raise ImageIOError(f"{path}: not a binary PGM/PPM (P5/P6) file")
    magic = m.group(1)
    # Header: magic, width, height, maxval; '#' comments allowed between tokens.
    tokens, pos = [], m.end()
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageIOError(f"{path}: malformed PNM header") from exc
    if maxval <= 0 or maxval > 65535:
        raise ImageIOError(f"{path}: unsupported maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    if len(data) - pos < count * dtype.itemsize:
        raise ImageIOError(f"{path}: truncated pixel data")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    arr = raw.reshape(height, width, channels).astype(np.float64) / float(maxval)
    return validate_image(arr)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Round-to-nearest with clamp to [0, 255]; the only place values are clamped."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, img: np.ndarray) -> None:
    """Write an 8-bit PNG or binary PGM/PPM."""
    path = Path(path)
    img = validate_image(img)
    arr = to_uint8(img)
    suffix = path.suffix.lower()
    if suffix == ".png":
        if arr.shape[2] == 1:
            PILImage.fromarray(arr[:, :, 0], mode="L").save(path)
        else:
            PILImage.fromarray(arr, mode="RGB").save(path)
        return
    if suffix in (".pgm", ".ppm", ".pnm"):
        magic = b"P5" if arr.shape[2] == 1 else b"P6"
        if suffix == ".pgm" and arr.shape[2] != 1:
            raise ImageIOError("cannot write 3-channel image as PGM")
        if suffix == ".ppm" and arr.shape[2] != 3:
            raise ImageIOError("cannot write 1-channel image as PPM")
        header = b"%s\n%d %d\n255\n" % (magic, arr.shape[1], arr.shape[0])
        path.write_bytes(header + arr.tobytes())
        return
    raise ImageIOError(f"unsupported output format '{suffix}'")


# ---------------------------------------------------------------------------
# Separable resampling machinery.

def _mirror_index(i: int, n: int) -> int:
    # Reflection without edge repetition: ..., x2, x1, | x0, x1, ..., x_{n-1} | x_{n-2}, ...
    if n == 1:
        return 0
    period = 2 * n - 2
    i = i % period
    return period - i if i >= n else i


def _cubic_weight(t: float, a: float = -0.5) -> float:
    # Catmull-Rom style cubic kernel, unit DC gain, delta at integer offsets.
    t = abs(t)
    if t <= 1.0:
        return (a + 2.0) * t ** 3 - (a + 3.0) * t ** 2 + 1.0
    if t < 2.0:
        return a * t ** 3 - 5.0 * a * t ** 2 + 8.0 * a * t - 4.0 * a
    return 0.0


@lru_cache(maxsize=256)
def _resample_matrix(n_in: int, n_out: int) -> sparse.csr_matrix:
    """Sparse (n_out, n_in) bicubic interpolation matrix, center-aligned, mirror edges."""
    if n_out < 1 or n_in < 1:
        raise ValueError("sizes must be >= 1")
    scale = n_in / n_out
    rows, cols, vals = [], [], []
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        base = math.floor(src)
        frac = src - base
        for k in range(-1, 3):
            w = _cubic_weight(frac - k)
            if w == 0.0:
                continue
            rows.append(i)
            cols.append(_mirror_index(base + k, n_in))
            vals.append(w)
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n_out, n_in))
    return mat.tocsr()


@lru_cache(maxsize=256)
def _gaussian_blur_matrix(n: int, sigma: float) -> sparse.csr_matrix:
    """Sparse (n, n) gaussian convolution matrix with mirror boundary."""
    if sigma <= 0.0:
        return sparse.identity(n, format="csr")
    radius = int(math.ceil(3.0 * sigma))
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    rows, cols, vals = [], [], []
    for i in range(n):
        for k in range(-radius, radius + 1):
            rows.append(i)
            cols.append(_mirror_index(i + k, n))
            vals.append(taps[k + radius])
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


@lru_cache(maxsize=256)
def _subsample_matrix(n_in: int, n_out: int, factor: float) -> sparse.csr_matrix:
    """Point subsampling: output j picks input pixel floor((j + 0.5) * factor)."""
    idx = np.minimum(np.floor((np.arange(n_out) + 0.5) * factor + _FLOOR_EPS), n_in - 1).astype(int)
    return sparse.coo_matrix(
        (np.ones(n_out), (np.arange(n_out), idx)), shape=(n_out, n_in)
    ).tocsr()


def _apply_separable(mat_rows, mat_cols, x: np.ndarray) -> np.ndarray:
    """Compute mat_rows @ x @ mat_cols.T independently per channel."""
    h, w, c = x.shape
    oh, ow = mat_rows.shape[0], mat_cols.shape[0]
    y = (mat_rows @ x.reshape(h, w * c)).reshape(oh, w, c)
    y = (mat_cols @ y.transpose(1, 0, 2).reshape(w, oh * c)).reshape(ow, oh, c)
    return np.ascontiguousarray(y.transpose(1, 0, 2))


def bicubic_resample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample to (out_h, out_w) with a Catmull-Rom cubic kernel and mirror edges."""
    img = validate_image(img)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"invalid output size ({out_h}, {out_w})")
    mr = _resample_matrix(img.shape[0], out_h)
    mc = _resample_matrix(img.shape[1], out_w)
    return _apply_separable(mr, mc, img)


# ---------------------------------------------------------------------------
# Degradation operator.

DEGRADATION_MODES = ("bicubic", "blur-subsample")


@dataclass(frozen=True)
class DegradationModel:
    """LR formation model: scale factor, downsampling mode, optional noise.

    noise_sigma is used only when synthesizing LR observations from ground
    truth; the operator itself (and its adjoint) is noise-free and linear.
    """

    scale_factor: float = 2.0
    mode: str = "bicubic"
    blur_sigma: float = 1.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.scale_factor <= 1.0:
            raise ValueError(f"scale_factor must be > 1, got {self.scale_factor}")
        if self.mode not in DEGRADATION_MODES:
            raise ValueError(f"mode must be one of {DEGRADATION_MODES}, got '{self.mode}'")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("blur_sigma and noise_sigma must be >= 0")

    def lr_shape(self, hr_h: int, hr_w: int) -> tuple[int, int]:
        return (
            tolerant_floor(hr_h / self.scale_factor),
            tolerant_floor(hr_w / self.scale_factor),
        )

    def hr_shape(self, lr_h: int, lr_w: int) -> tuple[int, int]:
        return (
            tolerant_floor(lr_h * self.scale_factor + 0.5),
            tolerant_floor(lr_w * self.scale_factor + 0.5),
        )


def _operator_matrices(model: DegradationModel, hr_h: int, hr_w: int):
    lr_h, lr_w = model.lr_shape(hr_h, hr_w)
    if lr_h < 1 or lr_w < 1:
        raise ValueError(f"degraded size ({lr_h}, {lr_w}) below 1 pixel")
    if model.mode == "bicubic":
        return _resample_matrix(hr_h, lr_h), _resample_matrix(hr_w, lr_w)
    mr = _subsample_matrix(hr_h, lr_h, model.scale_factor) @ _gaussian_blur_matrix(hr_h, model.blur_sigma)
    mc = _subsample_matrix(hr_w, lr_w, model.scale_factor) @ _gaussian_blur_matrix(hr_w, model.blur_sigma)
    return mr, mc


def degrade(x: np.ndarray, model: DegradationModel, noisy: bool = False, rng=None) -> np.ndarray:
    """Apply D to an HR image; optionally add i.i.d. gaussian noise from rng."""
    x = validate_image(x)
    mr, mc = _operator_matrices(model, x.shape[0], x.shape[1])
    y = _apply_separable(mr, mc, x)
    if noisy and model.noise_sigma > 0:
        if rng is None:
            raise ValueError("noisy degradation requires an explicit rng")
        y = y + model.noise_sigma * rng.standard_normal(y.shape)
    return y


def degrade_adjoint(r: np.ndarray, model: DegradationModel, out_h: int, out_w: int) -> np.ndarray:
    """Apply the exact transpose of D (noise off) onto the HR grid (out_h, out_w)."""
    r = validate_image(r)
    mr, mc = _operator_matrices(model, out_h, out_w)
    lr_h, lr_w = mr.shape[0], mc.shape[0]
    if r.shape[:2] != (lr_h, lr_w):
        raise ValueError(f"residual shape {r.shape[:2]} does not match LR grid ({lr_h}, {lr_w})")
    return _apply_separable(mr.T.tocsr(), mc.T.tocsr(), r)
