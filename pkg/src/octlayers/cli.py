"""Command-line front end: denoise, segment, measure, batch-run and compare.

Configuration comes from a plain ``key = value`` text file (``#`` starts a
comment, blank lines are ignored, keys are :class:`PipelineConfig` field
names with ``-`` or ``_``).  The file named by ``--config`` or, failing that,
by the ``OCT_LAYERS_CONFIG`` environment variable is read first; ``--set
key=value`` pairs and dedicated flags override it, in that order.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import denoise as dn
from . import metrics as mt
from . import phantom as ph
from . import segment as sg
from .core import (BYTE, SURFACE_LABELS, Resolution, SegmentationResult,
                   SurfaceTrace, read_image, rescale, write_image)

log = logging.getLogger("octlayers")

SCHEMA_VERSION = 1
CONFIG_ENV = "OCT_LAYERS_CONFIG"
DENOISERS = ("fourier-wiener", "wavelet-baseline", "none")


# ----------------------------------------------------------------------------- configuration

@dataclass
class PipelineConfig:
    lateral_um_per_px: float = 5.88
    axial_um_per_px: float = 3.87
    denoiser: str = "fourier-wiener"
    rel_eps: float = 1e-3
    energy_frac: float = 0.95
    psf_size: int = 7
    psf_variance: float = 1e-3
    regiongrow_tolerance: int = 233
    min_region: int = 20
    coverage_frac: float = 0.75
    workers: int = 1
    diagnostics: bool = False

    def __post_init__(self):
        if self.denoiser not in DENOISERS:
            raise ValueError(f"denoiser must be one of {DENOISERS}, got {self.denoiser!r}")
        if not 0 < self.rel_eps < 1:
            raise ValueError("rel_eps must lie in (0, 1)")
        if not 0 < self.energy_frac <= 1:
            raise ValueError("energy_frac must lie in (0, 1]")
        if self.psf_size < 3 or self.psf_size % 2 == 0:
            raise ValueError("psf_size must be an odd integer >= 3")
        if not self.psf_variance > 0:
            raise ValueError("psf_variance must be positive")
        if not 230 <= self.regiongrow_tolerance <= 235:
            raise ValueError("regiongrow_tolerance must lie in [230, 235]")
        if self.min_region < 1:
            raise ValueError("min_region must be >= 1")
        if not 0 < self.coverage_frac <= 1:
            raise ValueError("coverage_frac must lie in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        Resolution(self.lateral_um_per_px, self.axial_um_per_px)

    @property
    def resolution(self) -> Resolution:
        return Resolution(self.lateral_um_per_px, self.axial_um_per_px)

    def denoise_config(self) -> dn.DenoiseConfig:
        return dn.DenoiseConfig(rel_eps=self.rel_eps, energy_frac=self.energy_frac,
                                psf_size=self.psf_size, psf_variance=self.psf_variance)

    def segment_config(self) -> sg.SegmentConfig:
        return sg.SegmentConfig(regiongrow_tolerance=self.regiongrow_tolerance,
                                min_region=self.min_region, coverage_frac=self.coverage_frac,
                                keep_diagnostics=self.diagnostics)


def _coerce(kind, text: str):
    if kind is bool or kind == "bool":
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int or kind == "int":
        return int(text)
    if kind is float or kind == "float":
        return float(text)
    return text.strip()


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a dict of typed values."""
    types = {f.name: f.type for f in fields(PipelineConfig)}
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ValueError(f"config line {n}: unknown key {key!r}")
        try:
            out[key] = _coerce(types[key], value)
        except ValueError as exc:
            raise ValueError(f"config line {n}: {exc}") from None
    return out


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the config file, then ``overrides``."""
    values = {}
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        values.update(parse_config_text(Path(path).read_text()))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig(**values)


# ----------------------------------------------------------------------------- file io

@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary sibling of ``path`` that replaces it on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_json(path, obj) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def save_image(path, img, bits: int = 8) -> None:
    with atomic_path(path) as tmp:
        write_image(tmp, img, bits)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_surfaces(path, result: SegmentationResult, labels=SURFACE_LABELS) -> None:
    """CSV with columns surface_label, column_index, row (defined columns only)."""
    with atomic_path(path) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["surface_label", "column_index", "row"])
        for lab in labels:
            rows = result[lab].rows
            for c in np.flatnonzero(np.isfinite(rows)):
                w.writerow([lab, int(c), _fmt(rows[c])])


def read_surfaces(path, width: int | None = None) -> SegmentationResult:
    """Inverse of :func:`write_surfaces`; missing columns become undefined."""
    entries: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"surface_label", "column_index", "row"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(need)}")
        for rec in reader:
            entries.setdefault(rec["surface_label"], []).append(
                (int(rec["column_index"]), float(rec["row"])))
    missing = [s for s in SURFACE_LABELS if s not in entries]
    if missing:
        raise ValueError(f"{path}: missing surfaces {missing}")
    top = max(c for v in entries.values() for c, _ in v) + 1
    width = top if width is None else width
    if top > width:
        raise ValueError(f"{path}: column {top - 1} exceeds image width {width}")
    surfaces = {}
    for lab, vals in entries.items():
        rows = np.full(width, np.nan)
        for c, r in vals:
            rows[c] = r
        surfaces[lab] = SurfaceTrace(rows, lab)
    return SegmentationResult(surfaces)


def write_thickness(path, profiles: dict[str, mt.ThicknessProfile], image_index=None) -> None:
    with atomic_path(path) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["layer", "column_index", "thickness_um"]
        w.writerow((["image_index"] if image_index is not None else []) + head)
        for name, prof in profiles.items():
            for c in np.flatnonzero(prof.defined):
                row = [name, int(c), _fmt(prof.per_column_um[c])]
                w.writerow(([image_index] if image_index is not None else []) + row)


# ----------------------------------------------------------------------------- pipeline steps

def denoise_image(img, cfg: PipelineConfig, method: str | None = None):
    """Return ``(unit-range image, NoiseEstimate or None)``."""
    method = method or cfg.denoiser
    if method == "fourier-wiener":
        return dn.denoise(img, cfg.denoise_config())
    if method == "wavelet-baseline":
        return rescale(dn.wavelet_denoise_baseline(rescale(img))), None
    if method == "none":
        return rescale(img), None
    raise ValueError(f"unknown denoiser {method!r}")


def quality_report(noisy, denoised, result: SegmentationResult | None, cfg: PipelineConfig,
                   ref: SegmentationResult | None = None) -> dict:
    """Image-quality, surface-error and thickness figures as a JSON-ready dict.

    The foreground comes from ``ref`` when given, else from ``result``.
    Intensities are compared on the byte range.
    """
    res = cfg.resolution
    nb, db = rescale(noisy, BYTE), rescale(denoised, BYTE)
    out: dict = {"schema_version": SCHEMA_VERSION}
    basis = ref if ref is not None else result
    if basis is not None:
        fg = mt.foreground_mask(basis["S1"], basis["S7"], nb.shape)
        out["foreground_source"] = "reference" if ref is not None else "automatic"
        for tag, img in (("noisy", nb), ("denoised", db)):
            out[f"snr_{tag}"] = _safe(mt.snr, img, fg)
            out[f"cnr_{tag}"] = _safe(mt.cnr, img, fg)
        out["snr"], out["cnr"] = out["snr_denoised"], out["cnr_denoised"]
    out["psnr"] = _safe(mt.psnr, nb, db)
    if result is not None:
        if ref is not None:
            out["per_surface_error_um"] = {
                s: asdict(mt.surface_error(result[s], ref[s], res)) for s in SURFACE_LABELS}
            layers = mt.compare_layers(result, ref, res)
        else:
            layers = mt.layer_thicknesses(result, res)
        out["per_layer"] = {k: v.summary() for k, v in layers.items()}
    return out


def _estimate(est: dn.NoiseEstimate) -> dict:
    return {"k": int(est.k), "a": float(est.a), "nsr": float(est.nsr)}


def _safe(fn, *args):
    try:
        return fn(*args)
    except ValueError as exc:
        log.warning("%s: %s", fn.__name__, exc)
        return None


def dump_diagnostics(result: SegmentationResult, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for info in result.diagnostics.get("iterations", []):
        i = info["index"]
        if "filtered" in info:
            save_image(out_dir / f"iter{i}_filtered.png", rescale(info["filtered"]))
        if "region" in info:
            save_image(out_dir / f"iter{i}_region.png", info["region"].astype(float))


def process_image(path, cfg: PipelineConfig, out_dir, ref_path=None) -> dict:
    """Full chain for one file; writes denoised PNG, surfaces CSV and report JSON."""
    path, out_dir = Path(path), Path(out_dir)
    stem = path.stem
    img = read_image(path)
    den, est = denoise_image(img, cfg)
    result = sg.segment(den, cfg.segment_config())
    ref = read_surfaces(ref_path, img.shape[1]) if ref_path else None
    report = quality_report(img, den, result, cfg, ref)
    report["image"] = path.name
    report["denoiser"] = cfg.denoiser
    if est is not None:
        report["estimate"] = _estimate(est)
    save_image(out_dir / f"{stem}_denoised.png", den)
    write_surfaces(out_dir / f"{stem}_surfaces.csv", result)
    write_json(out_dir / f"{stem}_report.json", report)
    if cfg.diagnostics:
        dump_diagnostics(result, out_dir / f"{stem}_diag")
    thick = mt.layer_thicknesses(result, cfg.resolution)
    return {"image": path.name, "width": img.shape[1],
            "thickness": {k: v.per_column_um for k, v in thick.items()}}


def _job(args):
    i, path, cfg, out_dir, ref = args
    try:
        return i, process_image(path, cfg, out_dir, ref), None
    except Exception as exc:       # reported per image, the batch carries on
        return i, None, {"image": str(path), "error": type(exc).__name__, "message": str(exc)}


def run_pipeline(paths, cfg: PipelineConfig, out_dir, truth_dir=None):
    """Process a stack of images.

    Returns ``(per-image summaries, error records)``; summaries keep the
    input order.  Stack-level thickness CSV, thickness-map PNGs and an error
    manifest are written to ``out_dir``.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("no input images")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, p in enumerate(paths):
        ref = None
        if truth_dir is not None:
            cand = Path(truth_dir) / f"{p.stem}.csv"
            ref = cand if cand.exists() else None
        jobs.append((i, p, cfg, out_dir, ref))
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            done = list(pool.map(_job, jobs))
    else:
        done = [_job(j) for j in jobs]
    done.sort(key=lambda t: t[0])
    ok = [(i, s) for i, s, e in done if s is not None]
    errors = [e for _, _, e in done if e is not None]
    write_json(out_dir / "errors.json", {"schema_version": SCHEMA_VERSION, "errors": errors})
    if ok:
        _write_stack(out_dir, ok)
    return [s for _, s in ok], errors


def _write_stack(out_dir: Path, ok) -> None:
    with atomic_path(out_dir / "stack_thickness.csv") as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_index", "column_index", "layer", "thickness_um"])
        for i, s in ok:
            for layer, vals in s["thickness"].items():
                for c in np.flatnonzero(np.isfinite(vals)):
                    w.writerow([i, int(c), layer, _fmt(vals[c])])
    width = max(s["width"] for _, s in ok)
    for layer in mt.LAYER_PAIRS:
        grid = np.full((len(ok), width), np.nan)
        for row, (_, s) in enumerate(ok):
            v = s["thickness"][layer]
            grid[row, : v.size] = v
        render_thickness_map(out_dir / f"thickness_map_{layer.replace('/', '-')}.png", grid, layer)


def render_thickness_map(path, grid, layer: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3), dpi=100)
    im = ax.imshow(grid, aspect="auto", cmap="viridis", interpolation="nearest")
    ax.set_xlabel("column")
    ax.set_ylabel("image index")
    ax.set_title(f"{layer} thickness (um)")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    with atomic_path(path) as tmp:
        fig.savefig(tmp, format="png", metadata={"Software": None})
    plt.close(fig)


def compare(img, truth: SegmentationResult, cfg: PipelineConfig, methods=DENOISERS) -> dict:
    """Run each denoiser on the same image and score it against ``truth``."""
    img = np.asarray(img, dtype=float)
    if truth["S1"].width != img.shape[1]:
        raise ValueError(f"truth width {truth['S1'].width} does not match image width {img.shape[1]}")
    out = {"schema_version": SCHEMA_VERSION, "methods": {}}
    for m in methods:
        den, est = denoise_image(img, cfg, m)
        try:
            result = sg.segment(den, cfg.segment_config())
            seg_error = None
        except sg.SegmentationError as exc:
            result, seg_error = None, f"iteration {exc.iteration}: {exc}"
        rep = quality_report(img, den, result, cfg, truth)
        if rep.get("snr_noisy") is not None and rep.get("snr_denoised") is not None:
            rep["snr_gain_db"] = rep["snr_denoised"] - rep["snr_noisy"]
            rep["cnr_gain"] = rep["cnr_denoised"] - rep["cnr_noisy"]
        if est is not None:
            rep["estimate"] = _estimate(est)
        if seg_error:
            rep["segmentation_error"] = seg_error
        out["methods"][m] = rep
    return out


# ----------------------------------------------------------------------------- argument parsing

def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 512x256, got {text!r}") from None
    return w, h


def _pair(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip().replace("-", "_"), v.strip()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="octlayers", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help=f"key=value config file (default: ${CONFIG_ENV})")
        sp.add_argument("--set", action="append", type=_pair, default=[], metavar="KEY=VALUE",
                        help="override one config value; repeatable")
        sp.add_argument("--denoiser", choices=DENOISERS)

    sp = sub.add_parser("denoise", help="denoise one image")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report", help="JSON file for the noise estimate")
    common(sp)

    sp = sub.add_parser("segment", help="segment an already denoised image")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True, help="surfaces CSV")
    sp.add_argument("--diag", help="directory for per-iteration PNGs")
    common(sp)

    sp = sub.add_parser("thickness", help="layer thickness from a surfaces CSV")
    sp.add_argument("--surfaces", required=True)
    sp.add_argument("--out", required=True, help="thickness CSV")
    sp.add_argument("--ref", help="reference surfaces CSV for r and R2")
    sp.add_argument("--summary", help="JSON file with per-layer statistics")
    common(sp)

    sp = sub.add_parser("metrics", help="quality and agreement report")
    sp.add_argument("--image", required=True, help="denoised image")
    sp.add_argument("--noisy", help="original image (defaults to --image)")
    sp.add_argument("--surfaces", required=True)
    sp.add_argument("--ref")
    sp.add_argument("--out", required=True)
    common(sp)

    sp = sub.add_parser("phantom", help="synthetic B-scan with ground truth")
    sp.add_argument("--preset", default="normal", choices=("normal", "foveal", "cystic"))
    sp.add_argument("--size", type=_size, default=(512, 256))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth", help="ground-truth surfaces CSV")

    sp = sub.add_parser("run", help="full pipeline over a stack of images")
    sp.add_argument("inputs", nargs="*")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--truth-dir", help="directory of <stem>.csv reference surfaces")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--diag", action="store_true", default=None)
    common(sp)

    sp = sub.add_parser("compare", help="score each denoiser against ground truth")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--methods", default=",".join(DENOISERS))
    common(sp)
    return p


def _config(args) -> PipelineConfig:
    types = {f.name: f.type for f in fields(PipelineConfig)}
    over = {}
    for k, v in getattr(args, "set", []):
        if k not in types:
            raise ValueError(f"unknown config key {k!r}")
        over[k] = _coerce(types[k], v)
    if getattr(args, "denoiser", None):
        over["denoiser"] = args.denoiser
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    if getattr(args, "diag", None):
        over["diagnostics"] = True
    return load_config(getattr(args, "config", None), over)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(parser, args)
    except (OSError, ValueError, sg.SegmentationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(parser, args) -> int:
    if args.cmd == "phantom":
        spec = ph.preset(args.preset, size=args.size, noise_sigma=args.noise, seed=args.seed)
        img, truth = ph.generate(spec)
        # additive noise leaves the unit range; stretch rather than clip it
        save_image(args.out, rescale(img), bits=16)
        if args.truth:
            write_surfaces(args.truth, truth)
        return 0

    cfg = _config(args)
    if args.cmd == "denoise":
        den, est = denoise_image(read_image(args.inp), cfg)
        save_image(args.out, den)
        if args.report:
            body = est.to_dict() if est is not None else {}
            write_json(args.report, {"schema_version": SCHEMA_VERSION, "denoiser": cfg.denoiser, **body})
        return 0

    if args.cmd == "segment":
        result = sg.segment(read_image(args.inp), cfg.segment_config())
        write_surfaces(args.out, result)
        if args.diag:
            dump_diagnostics(result, args.diag)
        return 0

    if args.cmd == "thickness":
        auto = read_surfaces(args.surfaces)
        if args.ref:
            ref = read_surfaces(args.ref, auto["S1"].width)
            profiles = mt.compare_layers(auto, ref, cfg.resolution)
        else:
            profiles = mt.layer_thicknesses(auto, cfg.resolution)
        write_thickness(args.out, profiles)
        if args.summary:
            write_json(args.summary, {"schema_version": SCHEMA_VERSION,
                                      "per_layer": {k: v.summary() for k, v in profiles.items()}})
        return 0

    if args.cmd == "metrics":
        den = read_image(args.image)
        noisy = read_image(args.noisy) if args.noisy else den
        auto = read_surfaces(args.surfaces, den.shape[1])
        ref = read_surfaces(args.ref, den.shape[1]) if args.ref else None
        write_json(args.out, quality_report(noisy, den, auto, cfg, ref))
        return 0

    if args.cmd == "run":
        if not args.inputs:
            parser.error("run needs at least one input image")
        summaries, errors = run_pipeline(args.inputs, cfg, args.out_dir, args.truth_dir)
        for e in errors:
            print(f"failed: {e['image']}: {e['error']}: {e['message']}", file=sys.stderr)
        return 0 if not errors else 2

    if args.cmd == "compare":
        img = read_image(args.inp)
        truth = read_surfaces(args.truth)
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        bad = [m for m in methods if m not in DENOISERS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        write_json(args.out, compare(img, truth, cfg, methods))
        return 0
    raise AssertionError(args.cmd)


if __name__ == "__main__":
    sys.exit(main())
