"""Image-quality figures (SNR, CNR, PSNR), surface errors and layer-thickness agreement.

Standard deviations use the population convention (divide by N) throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Resolution, SegmentationResult, SurfaceTrace


class NoiseFreeBackground(ValueError):
    """Background standard deviation is zero, SNR is unbounded."""


class DegenerateContrast(ValueError):
    """Both regions are constant, CNR is 0/0."""


class InfinitePSNR(ValueError):
    """The two images are identical."""


class NoOverlap(ValueError):
    """Two traces share no defined column."""


class UndefinedCorrelation(ValueError):
    """Reference profile is constant or too short for a correlation."""


# layer label -> (upper surface, lower surface)
LAYER_PAIRS = {
    "NFL": ("S1", "S2"),
    "IPL/GCL": ("S2", "S3"),
    "INL": ("S3", "S4"),
    "ONL": ("S4", "S5"),
    "IS/OS": ("S5", "S6"),
    "RPE": ("S6", "S7"),
    "NFL+IPL": ("S1", "S3"),
    "Inner": ("S1", "S5"),
    "Outer": ("S5", "S7"),
}


# ----------------------------------------------------------------------------- image quality

@dataclass(frozen=True)
class ForegroundSpec:
    """Rows from ``top_margin`` above S1 to ``bottom_margin`` below S7 form the foreground."""

    top_margin: int = 10
    bottom_margin: int = 50

    def __post_init__(self):
        if self.top_margin < 0 or self.bottom_margin < 0:
            raise ValueError("foreground margins must be non-negative")


def foreground_mask(top, bottom, shape, spec: ForegroundSpec = ForegroundSpec()) -> np.ndarray:
    """Boolean mask of the retinal foreground.

    ``top`` and ``bottom`` are the S1 and S7 traces (arrays or
    :class:`SurfaceTrace`); undefined columns are interpolated.  Rows are
    clamped to the image.
    """
    n1, n2 = shape
    up = _rows(top)
    lo = _rows(bottom)
    if up.size != n2 or lo.size != n2:
        raise ValueError("surface widths do not match the image")
    up = np.clip(np.floor(up) - spec.top_margin, 0, n1 - 1)
    lo = np.clip(np.ceil(lo) + spec.bottom_margin, 0, n1 - 1)
    r = np.arange(n1)[:, None]
    return (r >= up[None, :]) & (r <= lo[None, :])


def _rows(s) -> np.ndarray:
    tr = s if isinstance(s, SurfaceTrace) else SurfaceTrace(s)
    return tr.filled()


def _regions(img, fg):
    img = np.asarray(img, dtype=float)
    fg = np.asarray(fg, dtype=bool)
    if img.shape != fg.shape:
        raise ValueError("mask and image shapes differ")
    f, b = img[fg], img[~fg]
    if f.size == 0 or b.size == 0:
        raise ValueError("foreground and background must both be nonempty")
    return f, b


def snr(img, fg) -> float:
    """Global SNR in dB: foreground mean over background standard deviation."""
    f, b = _regions(img, fg)
    sb = b.std()
    if sb == 0:
        raise NoiseFreeBackground("background has zero variance")
    if f.mean() <= 0:
        raise ValueError("foreground mean must be positive")
    return float(20.0 * np.log10(f.mean() / sb))


def cnr(img, fg) -> float:
    """Global contrast-to-noise ratio with a pooled standard deviation."""
    f, b = _regions(img, fg)
    pooled = 0.5 * (f.var() + b.var())
    if pooled == 0:
        raise DegenerateContrast("both regions are constant")
    return float(abs(f.mean() - b.mean()) / np.sqrt(pooled))


def psnr(noisy, denoised) -> float:
    """Peak SNR in dB; the peak is the maximum of ``noisy``."""
    a = np.asarray(noisy, dtype=float)
    b = np.asarray(denoised, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    rmse = np.sqrt(np.mean((a - b) ** 2))
    if rmse == 0:
        raise InfinitePSNR("images are identical")
    if a.max() <= 0:
        raise ValueError("peak intensity must be positive")
    return float(20.0 * np.log10(a.max() / rmse))


# ----------------------------------------------------------------------------- surfaces

@dataclass(frozen=True)
class SurfaceError:
    mean_um: float
    sd_um: float
    n_columns: int


def _common(a, b):
    ra = np.asarray(a.rows if isinstance(a, SurfaceTrace) else a, dtype=float)
    rb = np.asarray(b.rows if isinstance(b, SurfaceTrace) else b, dtype=float)
    if ra.shape != rb.shape:
        raise ValueError(f"trace widths differ: {ra.size} vs {rb.size}")
    ok = np.isfinite(ra) & np.isfinite(rb)
    if not ok.any():
        raise NoOverlap("traces share no defined column")
    return ra, rb, ok


def surface_error(auto, manual, res: Resolution = Resolution()) -> SurfaceError:
    """Mean and sd of the per-column absolute row difference, in micrometres."""
    ra, rb, ok = _common(auto, manual)
    d = np.abs(ra[ok] - rb[ok]) * res.axial_um_per_px
    return SurfaceError(float(d.mean()), float(d.std()), int(ok.sum()))


# ----------------------------------------------------------------------------- thickness

@dataclass
class ThicknessProfile:
    layer_label: str
    per_column_um: np.ndarray
    n_clamped: int = 0
    vs_reference: dict | None = field(default=None)

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.per_column_um)

    @property
    def mean_um(self) -> float:
        return float(np.mean(self.per_column_um[self.defined]))

    @property
    def sd_um(self) -> float:
        return float(np.std(self.per_column_um[self.defined]))

    def summary(self) -> dict:
        out = {"mean_um": self.mean_um, "sd_um": self.sd_um, "n_clamped": self.n_clamped}
        if self.vs_reference is not None:
            out.update(self.vs_reference)
        return out


def thickness(upper, lower, res: Resolution = Resolution(), label: str = "") -> ThicknessProfile:
    """Per-column distance from ``upper`` down to ``lower`` in micrometres.

    Columns where either trace is undefined are NaN.  Negative differences
    (crossed surfaces) are clamped to zero and counted in ``n_clamped``.
    """
    ra, rb, ok = _common(upper, lower)
    out = np.full(ra.shape, np.nan)
    d = (rb[ok] - ra[ok]) * res.axial_um_per_px
    neg = d < 0
    out[ok] = np.where(neg, 0.0, d)
    return ThicknessProfile(label, out, int(neg.sum()))


def layer_thicknesses(result: SegmentationResult, res: Resolution = Resolution(),
                      layers=tuple(LAYER_PAIRS)) -> dict[str, ThicknessProfile]:
    """Profiles for the named layers of a segmentation."""
    out = {}
    for name in layers:
        a, b = LAYER_PAIRS[name]
        out[name] = thickness(result[a], result[b], res, name)
    return out


@dataclass(frozen=True)
class Agreement:
    r: float
    r2: float
    n_columns: int

    def as_dict(self) -> dict:
        return {"r": self.r, "r2": self.r2}


def agreement(auto: ThicknessProfile, ref: ThicknessProfile) -> Agreement:
    """Pearson r and the coefficient of determination with ``ref`` as target."""
    x, y, ok = _common(auto.per_column_um, ref.per_column_um)
    x, y = x[ok], y[ok]
    if x.size < 3:
        raise UndefinedCorrelation("need at least 3 common columns")
    yc = y - y.mean()
    ss_tot = float(np.dot(yc, yc))
    if ss_tot == 0:
        raise UndefinedCorrelation("reference thickness is constant")
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    # a constant automatic profile has no linear association with the reference
    r = float(np.dot(xc, yc) / np.sqrt(sxx * ss_tot)) if sxx > 0 else 0.0
    ss_res = float(np.sum((y - x) ** 2))
    return Agreement(r, 1.0 - ss_res / ss_tot, int(x.size))


def compare_layers(auto: SegmentationResult, ref: SegmentationResult,
                   res: Resolution = Resolution(), layers=tuple(LAYER_PAIRS)) -> dict[str, ThicknessProfile]:
    """Automatic profiles annotated with their agreement against ``ref``."""
    mine = layer_thicknesses(auto, res, layers)
    theirs = layer_thicknesses(ref, res, layers)
    for name, prof in mine.items():
        try:
            prof.vs_reference = agreement(prof, theirs[name]).as_dict()
        except UndefinedCorrelation:
            prof.vs_reference = {"r": None, "r2": None}
    return mine
