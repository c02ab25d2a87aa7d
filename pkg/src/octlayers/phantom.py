"""Synthetic B-scans with exact ground-truth surfaces.

Surfaces are built bottom-up from the IS/OS junction (S5) by stacking layer
thicknesses, so ordering holds by construction.  Each ground-truth row is the
first image row of the layer *below* that surface, which is also the
convention used by the segmenter.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .core import CHOROID, SURFACE_LABELS, SegmentationResult, SurfaceTrace

LAYERS = ("vitreous", "NFL", "IPL/GCL", "INL", "ONL", "IS/OS", "RPE", "choroid", "sclera")

# Brightness ordering is chosen so every surface is a distinct edge:
# NFL bright over a dark IPL/GCL, INL/ONL brightening towards the outer band,
# IS/OS darker than the RPE, textured choroid, dark sclera.  The overall
# contrast is kept modest so additive noise matters, as in real B-scans.
DEFAULT_INTENSITIES = {
    "vitreous": 0.05,
    "NFL": 0.45,
    "IPL/GCL": 0.20,
    "INL": 0.26,
    "ONL": 0.35,
    "IS/OS": 0.50,
    "RPE": 0.62,
    "choroid": 0.40,
    "sclera": 0.05,
}

# thickness in pixels (axial pitch is fixed, so these do not scale with height)
DEFAULT_THICKNESS = {
    "NFL": 10.0,
    "IPL/GCL": 8.0,
    "INL": 14.0,
    "ONL": 12.0,
    "IS/OS": 8.0,
    "RPE": 8.0,
    "choroid": 50.0,
}

CYST_INTENSITY = 0.08
# The cystic preset puts dark cysts inside the inner retina (between S2 and
# S4).  A thicker ONL keeps them away from the IS/OS edge.
CYSTIC_ONL = 16.0
CYSTIC_GCL = 10.0
CYST_LAYER = ("INL", "S2", "S4")
CYST_CLEARANCE = (1.5, 1.5)     # px kept free above and below a cyst
CYST_HALF_WIDTH = 0.05         # horizontal semi-axis as a fraction of the width
MIN_GAP = 2


@dataclass(frozen=True)
class Cyst:
    cx: float  # column of centre
    cy: float  # row of centre
    ax: float  # horizontal semi-axis
    ay: float  # vertical semi-axis
    intensity: float = CYST_INTENSITY


@dataclass(frozen=True)
class Swelling:
    """Gaussian thickness bump on one layer (all lengths in px)."""

    layer: str
    cx: float
    sigma: float
    amount: float


@dataclass(frozen=True)
class PhantomSpec:
    width: int = 512
    height: int = 256
    is_os_row: float = 0.58        # S5 baseline as a fraction of height
    tilt: float = 0.03             # S5 rise across the width, fraction of height
    bow: float = 0.04              # S5 curvature, fraction of height
    thickness: dict = field(default_factory=lambda: dict(DEFAULT_THICKNESS))
    nfl_gradient: float = 0.5      # NFL thickness varies by +-this fraction across the width
    undulation: float = 2.0        # amplitude (px) of a slow thickness wave on IPL/GCL..RPE
    fovea_x: float = 0.5           # fraction of width
    fovea_width: float = 0.06      # gaussian sigma, fraction of width
    fovea_depth: float = 0.0       # fractional thinning of inner layers at the centre
    intensities: dict = field(default_factory=lambda: dict(DEFAULT_INTENSITIES))
    cysts: tuple = ()
    swellings: tuple = ()
    choroid_texture: float = 0.03
    choroid_decay: float = 1.0
    noise_sigma: float = 0.0
    speckle: float = 0.0           # multiplicative noise sd, off by default
    seed: int = 0


def build_surfaces(spec: PhantomSpec) -> dict[str, np.ndarray]:
    """Integer ground-truth rows for S1..S7 and the choroid bottom."""
    w, h = spec.width, spec.height
    u = np.linspace(-0.5, 0.5, w)
    s5 = spec.is_os_row * h + spec.tilt * h * u - spec.bow * h * (u ** 2 - 1.0 / 12)

    t = {k: np.full(w, float(v)) for k, v in spec.thickness.items()}
    cols = np.arange(w)
    for sw in spec.swellings:
        t[sw.layer] = t[sw.layer] + sw.amount * np.exp(-0.5 * ((cols - sw.cx) / sw.sigma) ** 2)
    pit = np.exp(-0.5 * ((u - (spec.fovea_x - 0.5)) / spec.fovea_width) ** 2)
    thin = 1.0 - spec.fovea_depth * pit

    def wave(name):
        # one and a half periods across the width, phase fixed per layer
        phase = 1.7 * LAYERS.index(name)
        return spec.undulation * np.sin(3.0 * np.pi * u + phase)

    def inner(name):
        return np.maximum((t[name] + wave(name)) * thin, MIN_GAP)

    def outer(name):
        return np.maximum(t[name] + wave(name), MIN_GAP)

    nfl = np.maximum(t["NFL"] * thin * (1.0 + spec.nfl_gradient * 2 * u), MIN_GAP)
    rows = {"S5": s5}
    rows["S4"] = s5 - outer("ONL")
    rows["S3"] = rows["S4"] - inner("INL")
    rows["S2"] = rows["S3"] - inner("IPL/GCL")
    rows["S1"] = rows["S2"] - nfl
    rows["S6"] = s5 + outer("IS/OS")
    rows["S7"] = rows["S6"] + outer("RPE")
    rows[CHOROID] = rows["S7"] + np.maximum(t["choroid"], MIN_GAP)
    return {k: np.round(v) for k, v in rows.items()}


def validate(spec: PhantomSpec, surfaces: dict[str, np.ndarray]) -> None:
    order = list(SURFACE_LABELS) + [CHOROID]
    if surfaces["S1"].min() < 1 or surfaces[CHOROID].max() > spec.height - 1:
        raise ValueError("surfaces do not fit inside the image height")
    for upper, lower in zip(order[:-1], order[1:]):
        gap = surfaces[lower] - surfaces[upper]
        if gap.min() < MIN_GAP:
            raise ValueError(f"surfaces {upper}/{lower} closer than {MIN_GAP} px")
    for k, v in spec.intensities.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"intensity of {k} outside [0, 1]")
    for c in spec.cysts:
        cols = np.arange(max(int(np.ceil(c.cx - c.ax)), 0), min(int(c.cx + c.ax) + 1, spec.width))
        if cols.size == 0:
            raise ValueError(f"cyst {c} lies outside the image")
        half = c.ay * np.sqrt(np.clip(1.0 - ((cols - c.cx) / c.ax) ** 2, 0.0, 1.0))
        if np.any(c.cy - half < surfaces["S2"][cols]) or np.any(c.cy + half >= surfaces["S5"][cols]):
            raise ValueError(f"cyst {c} not confined between S2 and S5")


def layer_index(surfaces: dict[str, np.ndarray], height: int) -> np.ndarray:
    """Per-pixel layer index into ``LAYERS``."""
    order = list(SURFACE_LABELS) + [CHOROID]
    stack = np.stack([surfaces[k] for k in order])          # (8, width)
    r = np.arange(height)[None, :, None]
    return (r >= stack[:, None, :]).sum(axis=0)


def render(spec: PhantomSpec, surfaces: dict[str, np.ndarray], rng) -> np.ndarray:
    idx = layer_index(surfaces, spec.height)
    values = np.array([spec.intensities[name] for name in LAYERS])
    img = values[idx]
    chor = idx == LAYERS.index("choroid")
    if spec.choroid_decay > 0:
        # reflectance falls off with depth below the RPE
        depth = np.arange(spec.height)[:, None] - surfaces["S7"][None, :]
        length = spec.choroid_decay * float(spec.thickness["choroid"])
        img = np.where(chor, img * np.exp(-np.maximum(depth, 0) / length), img)
    if spec.choroid_texture > 0:
        tex = ndimage.gaussian_filter(rng.standard_normal(img.shape), (1.5, 4.0))
        tex *= spec.choroid_texture / max(tex.std(), 1e-12)
        img = np.where(chor, img + tex, img)
    if spec.cysts:
        rr, cc = np.mgrid[: spec.height, : spec.width]
        for c in spec.cysts:
            inside = ((cc - c.cx) / c.ax) ** 2 + ((rr - c.cy) / c.ay) ** 2 <= 1.0
            img = np.where(inside, c.intensity, img)
    return np.clip(img, 0.0, 1.0)


def generate(spec: PhantomSpec) -> tuple[np.ndarray, SegmentationResult]:
    """Noisy image plus exact surfaces.

    Noise is added after rendering and the result is *not* clipped, so the
    injected variance is preserved exactly.
    """
    surfaces = build_surfaces(spec)
    validate(spec, surfaces)
    rng = np.random.default_rng(spec.seed)
    clean = render(spec, surfaces, rng)
    img = clean
    if spec.speckle > 0:
        img = img * (1.0 + spec.speckle * rng.standard_normal(img.shape))
    if spec.noise_sigma > 0:
        img = img + spec.noise_sigma * rng.standard_normal(img.shape)
    truth = SegmentationResult(
        {k: SurfaceTrace(v.astype(float), k) for k, v in surfaces.items()},
        diagnostics={"clean": clean},
    )
    return img, truth


def _fit_cyst(surf, cx: float, ax: float) -> Cyst:
    """Tallest ellipse of half-width ``ax`` at ``cx`` clear of the cyst layer's bounding surfaces."""
    cols = np.arange(int(np.ceil(cx - ax)), int(cx + ax) + 1)
    _, upper, lower = CYST_LAYER
    cols = cols[(cols >= 0) & (cols < surf[upper].size)]
    shape = np.sqrt(np.clip(1.0 - ((cols - cx) / ax) ** 2, 0.0, 1.0))
    top = surf[upper][cols] + CYST_CLEARANCE[0]
    bottom = surf[lower][cols] - CYST_CLEARANCE[1]
    # centre halfway between the bounds at the middle column, then shrink until every column fits
    mid = int(np.argmax(shape))
    cy = 0.5 * (top[mid] + bottom[mid])
    ay = 0.5 * (bottom[mid] - top[mid])
    while ay > 2.0 and np.any((cy - ay * shape < top) | (cy + ay * shape > bottom)):
        ay -= 0.5
    return Cyst(cx=float(cx), cy=float(cy), ax=float(ax), ay=float(ay))


def preset(name: str, size=(512, 256), noise_sigma: float = 0.0, seed: int = 0) -> PhantomSpec:
    """Named configurations: ``normal``, ``foveal`` and ``cystic``.

    ``size`` is (width, height).
    """
    width, height = size
    base = PhantomSpec(width=width, height=height, noise_sigma=noise_sigma, seed=seed)
    if name == "normal":
        return base
    if name == "foveal":
        return replace(base, fovea_depth=1.0, fovea_width=0.08, bow=0.05)
    if name == "cystic":
        thick = dict(DEFAULT_THICKNESS, ONL=CYSTIC_ONL, **{"IPL/GCL": CYSTIC_GCL})
        ax = max(CYST_HALF_WIDTH * width, 10.0)
        centres = [fx * width for fx in (0.3, 0.75)]
        spec = replace(base, thickness=thick, is_os_row=0.62)
        surf = build_surfaces(spec)
        return replace(spec, cysts=tuple(_fit_cyst(surf, cx, ax) for cx in centres))
    raise ValueError(f"unknown phantom preset {name!r}")
