"""Shared raster helpers: intensity scaling, FFT, PSF/filter kernels, unit conversion.

Images are plain 2-D ``float64`` numpy arrays (rows = axial depth, columns =
lateral position).  Functions never modify their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

UNIT = "unit"
BYTE = "byte"
_RANGES = {UNIT: (0.0, 1.0), BYTE: (0.0, 255.0)}

SURFACE_LABELS = ("S1", "S2", "S3", "S4", "S5", "S6", "S7")
CHOROID = "choroid"

MIN_SIZE = 8


@dataclass(frozen=True)
class Resolution:
    """Pixel pitch in micrometres; lateral = columns, axial = rows."""

    lateral_um_per_px: float = 5.88
    axial_um_per_px: float = 3.87

    def __post_init__(self):
        if not (self.lateral_um_per_px > 0 and self.axial_um_per_px > 0):
            raise ValueError("pixel pitch must be strictly positive")


@dataclass
class SurfaceTrace:
    """Row coordinate of one surface per image column (NaN where undefined)."""

    rows: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 1:
            raise ValueError("surface rows must be one-dimensional")

    @property
    def width(self) -> int:
        return self.rows.size

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.rows)

    def coverage(self) -> float:
        return float(self.defined.mean()) if self.rows.size else 0.0

    def x_extent(self) -> int:
        """Number of columns where the surface is defined."""
        return int(self.defined.sum())

    def filled(self) -> np.ndarray:
        """Rows with undefined columns linearly interpolated (nearest value at the ends)."""
        ok = self.defined
        if not ok.any():
            raise ValueError(f"surface {self.label!r} has no defined column")
        x = np.arange(self.rows.size)
        return np.interp(x, x[ok], self.rows[ok])


@dataclass
class SegmentationResult:
    surfaces: dict[str, SurfaceTrace]
    diagnostics: dict = field(default_factory=dict)

    def __getitem__(self, label: str) -> SurfaceTrace:
        return self.surfaces[label]

    def ordered(self) -> list[SurfaceTrace]:
        return [self.surfaces[s] for s in SURFACE_LABELS]


def check_image(img, min_size: int = MIN_SIZE) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 3:
        img = img[..., :3].mean(axis=2)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if min(img.shape) < min_size:
        raise ValueError(f"image must be at least {min_size}x{min_size}, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def rescale(img, target: str = UNIT) -> np.ndarray:
    """Affinely map the image's min/max onto the target range.

    A constant image maps to the low end of the range.
    """
    lo, hi = _RANGES[target]
    img = np.asarray(img, dtype=float)
    mn, mx = float(img.min()), float(img.max())
    if mx <= mn:
        return np.full(img.shape, lo)
    # x / x is exact in IEEE arithmetic, so the maximum lands exactly on ``hi``
    return lo + ((img - mn) / (mx - mn)) * (hi - lo)


def fft2(img) -> np.ndarray:
    return np.fft.fft2(np.asarray(img, dtype=float))


def ifft2(spec) -> np.ndarray:
    return np.fft.ifft2(spec).real


def gaussian_psf(size: int = 7, variance: float = 1e-3) -> np.ndarray:
    """Centred, unit-sum 2-D Gaussian kernel; ``variance`` is in pixels squared."""
    size = int(size)
    if size < 3 or size % 2 == 0:
        raise ValueError("PSF size must be an odd integer >= 3")
    if not variance > 0:
        raise ValueError("PSF variance must be positive")
    r = np.arange(size) - size // 2
    # log-domain keeps the tiny-variance case finite
    logk = -(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * variance)
    k = np.exp(logk - logk.max())
    return k / k.sum()


def psf_otf(psf, shape) -> np.ndarray:
    """Transfer function of a centred kernel zero-padded to ``shape``."""
    psf = np.asarray(psf, dtype=float)
    pad = np.zeros(shape)
    kh, kw = psf.shape
    pad[:kh, :kw] = psf
    pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


def convolve(img, kernel) -> np.ndarray:
    """Same-size linear convolution with replicate-edge borders."""
    return ndimage.convolve(np.asarray(img, dtype=float), np.asarray(kernel, dtype=float),
                            mode="nearest")


def box_filter(img, size) -> np.ndarray:
    """Moving average over a ``size`` (int or (rows, cols)) window, replicate borders."""
    return ndimage.uniform_filter(np.asarray(img, dtype=float), size=size, mode="nearest")


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gauss_filter(img, size, sigmas) -> np.ndarray:
    """Separable Gaussian blur; ``size`` and ``sigmas`` are (rows, cols) pairs.

    A zero sigma leaves that axis untouched.
    """
    size = np.broadcast_to(size, 2)
    sigmas = np.broadcast_to(sigmas, 2)
    out = np.asarray(img, dtype=float)
    for axis in (0, 1):
        if sigmas[axis] > 0 and size[axis] > 1:
            k = gaussian_kernel1d(int(size[axis]), float(sigmas[axis]))
            # even-length kernels: shift origin so the window is centred as closely as possible
            origin = -1 if len(k) % 2 == 0 else 0
            out = ndimage.correlate1d(out, k, axis=axis, mode="nearest", origin=origin)
    return out


def to_um(thickness_px, res: Resolution = Resolution()):
    return np.asarray(thickness_px, dtype=float) * res.axial_um_per_px if np.ndim(thickness_px) \
        else float(thickness_px) * res.axial_um_per_px


def read_image(path) -> np.ndarray:
    """Read an 8/16-bit grayscale PNG or PGM into the unit range."""
    from PIL import Image as _PIL

    with _PIL.open(path) as im:
        if im.mode in ("RGB", "RGBA", "P", "LA"):
            im = im.convert("RGB")
        arr = np.asarray(im)
        if arr.ndim == 3:
            arr = arr[..., :3].astype(float).mean(axis=2)
            peak = 255.0
        elif arr.dtype == np.uint8 or im.mode == "L":
            peak = 255.0
        elif im.mode in ("I;16", "I;16B", "I;16L", "I"):
            peak = 65535.0
        else:
            peak = max(float(arr.max()), 1.0)
    return check_image(arr.astype(float) / peak)


def write_image(path, img, bits: int = 8) -> None:
    """Write a unit-range image (values clipped) as 8- or 16-bit grayscale."""
    from PIL import Image as _PIL

    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    path = Path(path)
    if bits == 16:
        arr = np.round(img * 65535).astype(np.uint16)
        im = _PIL.fromarray(arr)
    else:
        im = _PIL.fromarray(np.round(img * 255).astype(np.uint8))
    im.save(path)
