"""Six-pass multi-resolution extraction of seven retinal surfaces.

Each pass takes a source (the denoised image or its negative), restricts it
to a band bounded by surfaces found earlier, high-pass filters it,
thresholds it, keeps the connected regions that satisfy a selection rule and
reads a surface off the top or bottom of the kept pixels.  The passes are
data (``TABLE``), executed in order by :func:`segment`.

Stored surface rows are the first image row of the layer *below* the
surface: a region's top row is used as-is, a region's bottom row is moved
down by one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import _kernels
from .core import (CHOROID, SURFACE_LABELS, SegmentationResult, SurfaceTrace, box_filter,
                   check_image, gauss_filter, rescale)

log = logging.getLogger(__name__)


class SegmentationError(RuntimeError):
    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"iteration {iteration}: {message}")
        self.iteration = iteration


class EmptyRegion(ValueError):
    pass


class DegenerateHistogram(ValueError):
    pass


@dataclass(frozen=True)
class IterationSpec:
    index: int
    source: str                    # "I" or "1-I"
    mask: tuple                    # (upper, lower) surface labels, or () for the whole image
    filter: str                    # "smooth", "box", "gauss", "stretch"
    threshold: str                 # "regiongrow", "negative", "otsu"
    criterion: str                 # "area", "major_axis", "all"
    surfaces: tuple                # ((label, "top" | "bottom"), ...)
    size: tuple = (25, 25)         # low-pass window (rows, cols)
    sigmas: tuple = (0.0, 0.0)     # gaussian sigmas (rows, cols)


TABLE = (
    IterationSpec(1, "I", (), "smooth", "regiongrow", "all",
                  (("S1", "top"), (CHOROID, "bottom")), size=(3, 15), sigmas=(0.5, 4.0)),
    IterationSpec(2, "1-I", ("S1", CHOROID), "box", "negative", "major_axis",
                  (("S5", "top"), ("S7", "bottom"))),
    IterationSpec(3, "1-I", ("S5", "S7"), "stretch", "otsu", "area", (("S6", "bottom"),)),
    IterationSpec(4, "1-I", ("S1", "S5"), "box", "otsu", "major_axis", (("S4", "bottom"),)),
    IterationSpec(5, "1-I", ("S1", "S4"), "gauss", "otsu", "area", (("S3", "bottom"),),
                  size=(31, 41), sigmas=(6.0, 10.0)),
    IterationSpec(6, "I", ("S1", "S3"), "box", "otsu", "area", (("S2", "bottom"),)),
)

# extraction order doubles as reliability order for the ordering repair
EXTRACTION_ORDER = ("S1", CHOROID, "S5", "S7", "S6", "S4", "S3", "S2")
ANATOMICAL_ORDER = SURFACE_LABELS + (CHOROID,)


@dataclass
class SegmentConfig:
    table: tuple = TABLE
    regiongrow_tolerance: int = 233
    tolerance_range: tuple = (230, 235)
    regiongrow_floor_pct: float = 1.0
    min_region: int = 20
    coverage_frac: float = 0.75
    major_axis_tie: float = 0.05
    mask_margin: int = 1
    keep_diagnostics: bool = False


# ----------------------------------------------------------------------------- primitives

def band_mask(upper, lower, height) -> np.ndarray:
    """Rows ``upper[x] <= r < lower[x]`` for every column (both given per column)."""
    r = np.arange(height)[:, None]
    return (r >= np.asarray(upper)[None, :]) & (r < np.asarray(lower)[None, :])


def highpass_step(src, mask, spec: IterationSpec) -> np.ndarray:
    """Filter the masked source; zero outside the mask.

    Low-pass filters are mask-normalised (the local mean is taken over masked
    pixels only), so the band edges do not see the zeroed surroundings.
    ``smooth`` returns a blurred image instead of a difference, ``stretch``
    a percentile contrast stretch inside the mask.
    """
    src = np.asarray(src, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != src.shape:
        raise ValueError("mask does not match the image")
    if not mask.any():
        raise EmptyRegion("empty region of interest")
    x = np.where(mask, src, 0.0)
    if spec.filter == "smooth":
        return np.where(mask, gauss_filter(x, spec.size, spec.sigmas), 0.0)
    if spec.filter == "stretch":
        lo, hi = np.percentile(src[mask], (1.0, 99.0))
        out = np.clip((src - lo) / (hi - lo), 0.0, 1.0) if hi > lo else np.zeros_like(src)
        return np.where(mask, out, 0.0)
    if spec.filter == "box":
        lp = box_filter(x, spec.size)
        weight = box_filter(mask.astype(float), spec.size)
    elif spec.filter == "gauss":
        lp = gauss_filter(x, spec.size, spec.sigmas)
        weight = gauss_filter(mask.astype(float), spec.size, spec.sigmas)
    else:
        raise ValueError(f"unknown filter {spec.filter!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        local = np.where(weight > 1e-12, lp / np.maximum(weight, 1e-12), 0.0)
    return np.where(mask, x - local, 0.0)


def region_grow(img, seed_value: float = 255, threshold: float = 233) -> np.ndarray:
    """4-connected flood from every pixel equal to ``seed_value`` through pixels >= ``threshold``."""
    img = np.asarray(img, dtype=float)
    seeds = img == seed_value
    if not seeds.any():
        raise EmptyRegion(f"no pixel equals the seed value {seed_value}")
    return _kernels.flood_from_seeds(img >= threshold, seeds)


def otsu_threshold(img, mask=None) -> int:
    """Byte threshold maximising between-class variance; foreground is ``> t``.

    Pixels are rounded onto 0..255.  Ties go to the lowest threshold.
    """
    vals = np.asarray(img, dtype=float)
    if mask is not None:
        vals = vals[np.asarray(mask, dtype=bool)]
    vals = np.clip(np.round(vals.ravel()), 0, 255).astype(np.int64)
    hist = np.bincount(vals, minlength=256).astype(float)
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogram("degenerate histogram")
    p = hist / hist.sum()
    levels = np.arange(256)
    w0 = np.cumsum(p)
    mu_t = np.cumsum(p * levels)
    total = mu_t[-1]
    w1 = 1.0 - w0
    with np.errstate(invalid="ignore", divide="ignore"):
        between = (total * w0 - mu_t) ** 2 / (w0 * w1)
    between = np.where((w0 > 0) & (w1 > 0), between, -np.inf)
    best = between.max()
    # tolerate float noise in the tie check
    return int(np.flatnonzero(between >= best - 1e-12 * max(abs(best), 1.0))[0])


@dataclass
class Component:
    label: int
    area: int
    major_axis: float
    columns: np.ndarray
    strength: float = 0.0


def components(binary, min_size: int = 1, response=None) -> tuple[np.ndarray, list[Component]]:
    """8-connected components with area, major-axis length and column coverage.

    ``strength`` is the mean absolute ``response`` over the component (0 if
    no response image is given).
    """
    labels, n = ndimage.label(binary, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return labels, []
    mom = _kernels.label_moments(labels, n)
    if response is not None:
        strength = ndimage.sum_labels(np.abs(response), labels, np.arange(1, n + 1)) / \
            np.maximum(mom[:, 0], 1)
    else:
        strength = np.zeros(n)
    out = []
    slices = ndimage.find_objects(labels)
    for i in range(n):
        area = mom[i, 0]
        if area < min_size:
            continue
        mx, my = mom[i, 1] / area, mom[i, 2] / area
        # second central moments with the unit-pixel correction (1/12)
        cxx = mom[i, 3] / area - mx * mx + 1.0 / 12
        cyy = mom[i, 4] / area - my * my + 1.0 / 12
        cxy = mom[i, 5] / area - mx * my
        lam = 0.5 * (cxx + cyy) + np.sqrt(0.25 * (cxx - cyy) ** 2 + cxy ** 2)
        sl = slices[i]
        cols = np.flatnonzero((labels[sl] == i + 1).any(axis=0)) + sl[1].start
        out.append(Component(i + 1, int(area), 4.0 * np.sqrt(lam), cols, float(strength[i])))
    return labels, out


def rank_components(comps: list[Component], criterion: str, tie: float = 0.05) -> list[Component]:
    """Order candidates best-first.

    ``major_axis`` treats lengths within ``tie`` (relative) of each other as
    equal and prefers the stronger mean response, then the larger area.
    """
    if criterion in ("area", "all"):
        return sorted(comps, key=lambda c: (-c.area, c.label))
    if criterion == "major_axis":
        rest = sorted(comps, key=lambda c: (-c.major_axis, c.label))
        ordered = []
        while rest:
            head = rest[0].major_axis
            group = [c for c in rest if c.major_axis >= (1.0 - tie) * head]
            group.sort(key=lambda c: (-c.area, c.label))
            ordered.append(group[0])
            rest = [c for c in rest if c is not group[0]]
        return ordered
    raise ValueError(f"unknown criterion {criterion!r}")


def select_regions(binary, criterion: str, reference_extent: int | None = None,
                   coverage_frac: float = 0.75, min_size: int = 1, tie: float = 0.05,
                   response=None):
    """Keep the best region; add next-best ones while column coverage is short.

    Returns ``(mask, info)`` where ``info`` records how many regions were
    merged and the final column coverage.
    """
    binary = np.asarray(binary, dtype=bool)
    labels, comps = components(binary, min_size, response)
    if not comps:
        raise EmptyRegion("no candidate region")
    if criterion == "all":
        chosen = comps
    else:
        ranked = rank_components(comps, criterion, tie)
        chosen = [ranked[0]]
        if reference_extent is not None:
            need = coverage_frac * reference_extent
            covered = set(ranked[0].columns.tolist())
            for c in ranked[1:]:
                if len(covered) >= need:
                    break
                chosen.append(c)
                covered.update(c.columns.tolist())
    keep = np.isin(labels, [c.label for c in chosen])
    extent = int(keep.any(axis=0).sum())
    return keep, {"merged": len(chosen), "candidates": len(comps), "extent": extent}


def trace_surface(region, which: str = "top", label: str = "") -> SurfaceTrace:
    """Per-column min (``top``) or max (``bottom``) row of a region; NaN where empty."""
    top, bottom = _kernels.column_extents(region)
    rows = top if which == "top" else bottom
    if which not in ("top", "bottom"):
        raise ValueError("which must be 'top' or 'bottom'")
    return SurfaceTrace(np.where(rows >= 0, rows, np.nan).astype(float), label)


# ----------------------------------------------------------------------------- pipeline

def _threshold(filtered, mask, spec: IterationSpec, cfg: SegmentConfig, width: int):
    if spec.threshold == "negative":
        return (filtered < 0) & mask
    if spec.threshold == "otsu":
        vals = filtered[mask]
        byte = np.zeros_like(filtered)
        byte[mask] = rescale(vals, "byte")
        t = otsu_threshold(byte, mask)
        return (byte > t) & mask
    if spec.threshold == "regiongrow":
        # The floor is a low percentile rather than the minimum: deconvolution
        # undershoot next to steep edges would otherwise lift the background.
        floor = np.percentile(filtered, cfg.regiongrow_floor_pct)
        byte = rescale(np.maximum(filtered, floor), "byte")
        # Seeds are the 255-valued pixels; a pixel joins when it is within the
        # tolerance of the seed value, i.e. >= 255 - tolerance.
        tried = [cfg.regiongrow_tolerance] + [t for t in range(cfg.tolerance_range[1],
                                                                cfg.tolerance_range[0] - 1, -1)
                                              if t != cfg.regiongrow_tolerance]
        grown = None
        for tol in tried:
            grown = region_grow(byte, 255, 255 - tol)
            if grown.any(axis=0).sum() >= cfg.coverage_frac * width:
                break
        return grown
    raise ValueError(f"unknown threshold rule {spec.threshold!r}")


def _repair_order(surfaces: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Clip each later-extracted surface between earlier-extracted neighbours."""
    done = {}
    for lab in EXTRACTION_ORDER:
        rows = surfaces[lab].copy()
        pos = ANATOMICAL_ORDER.index(lab)
        above = [done[k] for k in ANATOMICAL_ORDER[:pos] if k in done]
        below = [done[k] for k in ANATOMICAL_ORDER[pos + 1:] if k in done]
        ok = np.isfinite(rows)
        if above:
            lo = np.max([_fill(a) for a in above], axis=0)
            rows[ok] = np.maximum(rows[ok], lo[ok])
        if below:
            hi = np.min([_fill(b) for b in below], axis=0)
            rows[ok] = np.minimum(rows[ok], hi[ok])
        done[lab] = rows
    return done


def _fill(rows):
    return SurfaceTrace(rows).filled()


def segment(denoised, cfg: SegmentConfig = SegmentConfig()) -> SegmentationResult:
    """Run the six passes on a unit-range denoised image."""
    img = rescale(check_image(denoised))
    n1, n2 = img.shape
    found: dict[str, np.ndarray] = {}
    diag = {"iterations": []}
    s1_extent = n2
    for spec in cfg.table:
        src = img if spec.source == "I" else 1.0 - img
        try:
            if spec.mask:
                upper, lower = (_fill(found[k]) for k in spec.mask)
                m = cfg.mask_margin
                mask = band_mask(np.round(upper) + m, np.round(lower) - m, n1)
            else:
                mask = np.ones_like(img, dtype=bool)
            filtered = highpass_step(src, mask, spec)
            binary = _threshold(filtered, mask, spec, cfg, n2)
            if spec.threshold == "regiongrow":
                region, info = binary, {"merged": 1, "extent": int(binary.any(axis=0).sum())}
                if not region.any():
                    raise EmptyRegion("no candidate region")
            else:
                region, info = select_regions(binary, spec.criterion, s1_extent,
                                              cfg.coverage_frac, cfg.min_region,
                                              cfg.major_axis_tie, response=filtered)
        except (EmptyRegion, DegenerateHistogram) as exc:
            err = SegmentationError(str(exc), spec.index)
            err.partial = dict(found)
            raise err from exc
        for lab, which in spec.surfaces:
            rows = trace_surface(region, which).rows
            if which == "bottom":
                rows = rows + 1
            if lab in ("S1", CHOROID):
                # S1 is continuous by construction; the choroid bounds later masks
                rows = SurfaceTrace(rows, lab).filled()
            found[lab] = np.clip(rows, 0, n1 - 1)
        if spec.index == 1:
            s1_extent = int(np.isfinite(found["S1"]).sum())
        info["index"] = spec.index
        if cfg.keep_diagnostics:
            info["filtered"] = filtered
            info["region"] = region
            info["mask"] = mask
        diag["iterations"].append(info)
        log.debug("iteration %d: %s", spec.index, {k: v for k, v in info.items()
                                                    if not isinstance(v, np.ndarray)})
    repaired = _repair_order(found)
    surfaces = {lab: SurfaceTrace(repaired[lab], lab) for lab in ANATOMICAL_ORDER}
    return SegmentationResult(surfaces, diag)
