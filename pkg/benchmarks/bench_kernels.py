"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20] [--size 1024x496]

Also times one full segmentation with each path.  The numba timings
exclude the first (compiling) call.
"""
import argparse
import time

import numpy as np

from octlayers import _kernels, denoise, phantom, segment


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def inputs(width, height, seed=0):
    rng = np.random.default_rng(seed)
    allowed = rng.random((height, width)) < 0.6
    seeds = np.zeros_like(allowed)
    seeds[rng.integers(0, height, 20), rng.integers(0, width, 20)] = True
    from scipy import ndimage
    labels, n = ndimage.label(allowed)
    return allowed, seeds, labels, n


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--size", default="1024x496")
    args = ap.parse_args()
    width, height = (int(v) for v in args.size.lower().split("x"))

    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is unavailable or disabled; nothing to compare")

    allowed, seeds, labels, n = inputs(width, height)
    cases = {
        "flood_from_seeds": lambda nb: _kernels.flood_from_seeds(allowed, seeds, use_numba=nb),
        "column_extents": lambda nb: _kernels.column_extents(allowed, use_numba=nb),
        "label_moments": lambda nb: _kernels.label_moments(labels, n, use_numba=nb),
    }

    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, fn in cases.items():
        fn(True)  # compile
        a, b = fn(False), fn(True)
        pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
        same = all(np.array_equal(x, y) for x, y in pairs)
        t_np = best_of(lambda: fn(False), args.repeat)
        t_nb = best_of(lambda: fn(True), args.repeat)
        flag = "" if same else "  MISMATCH"
        print(f"{name:<20} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.1f}{flag}")

    img, _ = phantom.generate(phantom.preset("normal", size=(width, height), noise_sigma=0.05))
    den, _ = denoise.denoise(img)
    for label, nb in (("numpy", False), ("numba", True)):
        orig = _kernels.HAVE_NUMBA
        # route segment() through one path by overriding the default choice
        _kernels.HAVE_NUMBA = nb
        try:
            segment.segment(den)
            t = best_of(lambda: segment.segment(den), max(1, args.repeat // 10))
        finally:
            _kernels.HAVE_NUMBA = orig
        print(f"segment ({label}) {t * 1e3:10.1f} ms")


if __name__ == "__main__":
    main()
