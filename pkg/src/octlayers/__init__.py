"""Retinal OCT B-scan denoising, layer segmentation and thickness measurement.

The submodules ``denoise`` and ``segment`` share their names with their main
entry points; import those as ``octlayers.denoise.denoise`` and
``octlayers.segment.segment``.
"""
from . import core, denoise, metrics, phantom, segment
from .core import Resolution, SegmentationResult, SurfaceTrace, read_image, rescale, write_image
from .denoise import DenoiseConfig, NoiseEstimate, estimate_noise, wavelet_denoise_baseline
from .metrics import agreement, cnr, psnr, snr, surface_error, thickness
from .phantom import PhantomSpec, generate, preset
from .segment import SegmentConfig, SegmentationError

__version__ = "0.1.0"

__all__ = [
    "core", "denoise", "metrics", "phantom", "segment",
    "Resolution", "SegmentationResult", "SurfaceTrace", "read_image", "rescale", "write_image",
    "DenoiseConfig", "NoiseEstimate", "estimate_noise", "wavelet_denoise_baseline",
    "agreement", "cnr", "psnr", "snr", "surface_error", "thickness",
    "PhantomSpec", "generate", "preset",
    "SegmentConfig", "SegmentationError",
]
