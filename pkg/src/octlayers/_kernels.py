"""Hot loops with a numba path and a pure-numpy fallback.

Set ``OCTLAYERS_DISABLE_NUMBA=1`` (or uninstall numba) to force the numpy
path.  Both paths return identical results; the test-suite checks this.
"""
import os

import numpy as np
from scipy import ndimage

_DISABLED = os.environ.get("OCTLAYERS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag in a subprocess
    HAVE_NUMBA = False


# --------------------------------------------------------------------------- numpy

def _flood_numpy(allowed, seeds):
    labels, _ = ndimage.label(allowed, structure=ndimage.generate_binary_structure(2, 1))
    hit = np.unique(labels[seeds & allowed])
    hit = hit[hit > 0]
    return np.isin(labels, hit)


def _column_extents_numpy(region):
    any_ = region.any(axis=0)
    top = np.where(any_, region.argmax(axis=0), -1)
    bottom = np.where(any_, region.shape[0] - 1 - region[::-1].argmax(axis=0), -1)
    return top.astype(np.int64), bottom.astype(np.int64)


def _moments_numpy(labels, n):
    rr, cc = np.nonzero(labels)
    lab = labels[rr, cc]
    out = np.zeros((n + 1, 6))
    out[:, 0] = np.bincount(lab, minlength=n + 1)
    out[:, 1] = np.bincount(lab, cc, minlength=n + 1)
    out[:, 2] = np.bincount(lab, rr, minlength=n + 1)
    out[:, 3] = np.bincount(lab, cc.astype(float) ** 2, minlength=n + 1)
    out[:, 4] = np.bincount(lab, rr.astype(float) ** 2, minlength=n + 1)
    out[:, 5] = np.bincount(lab, cc.astype(float) * rr, minlength=n + 1)
    return out[1:]


# --------------------------------------------------------------------------- numba

if HAVE_NUMBA:

    @njit(cache=True)
    def _flood_numba(allowed, seeds):
        n1, n2 = allowed.shape
        out = np.zeros((n1, n2), dtype=np.bool_)
        stack = np.empty(n1 * n2, dtype=np.int64)
        top = 0
        for i in range(n1):
            for j in range(n2):
                if seeds[i, j] and allowed[i, j] and not out[i, j]:
                    out[i, j] = True
                    stack[top] = i * n2 + j
                    top += 1
        while top > 0:
            top -= 1
            p = stack[top]
            i = p // n2
            j = p - i * n2
            for d in range(4):
                if d == 0:
                    a, b = i - 1, j
                elif d == 1:
                    a, b = i + 1, j
                elif d == 2:
                    a, b = i, j - 1
                else:
                    a, b = i, j + 1
                if 0 <= a < n1 and 0 <= b < n2 and allowed[a, b] and not out[a, b]:
                    out[a, b] = True
                    stack[top] = a * n2 + b
                    top += 1
        return out

    @njit(cache=True)
    def _column_extents_numba(region):
        n1, n2 = region.shape
        top = np.full(n2, -1, dtype=np.int64)
        bottom = np.full(n2, -1, dtype=np.int64)
        for j in range(n2):
            for i in range(n1):
                if region[i, j]:
                    top[j] = i
                    break
            for i in range(n1 - 1, -1, -1):
                if region[i, j]:
                    bottom[j] = i
                    break
        return top, bottom

    @njit(cache=True)
    def _moments_numba(labels, n):
        out = np.zeros((n, 6))
        n1, n2 = labels.shape
        for i in range(n1):
            for j in range(n2):
                k = labels[i, j]
                if k > 0:
                    o = out[k - 1]
                    o[0] += 1.0
                    o[1] += j
                    o[2] += i
                    o[3] += j * j
                    o[4] += i * i
                    o[5] += i * j
        return out


def flood_from_seeds(allowed, seeds, use_numba=None):
    """4-connected pixels of ``allowed`` reachable from any seed inside ``allowed``."""
    allowed = np.ascontiguousarray(allowed, dtype=bool)
    seeds = np.ascontiguousarray(seeds, dtype=bool)
    if _pick(use_numba):
        return _flood_numba(allowed, seeds)
    return _flood_numpy(allowed, seeds)


def column_extents(region, use_numba=None):
    """Per-column first and last True row (-1 where a column is empty)."""
    region = np.ascontiguousarray(region, dtype=bool)
    if _pick(use_numba):
        return _column_extents_numba(region)
    return _column_extents_numpy(region)


def label_moments(labels, n, use_numba=None):
    """Raw moments per label 1..n: count, Σx, Σy, Σx², Σy², Σxy (x = column, y = row)."""
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if _pick(use_numba):
        return _moments_numba(labels, int(n))
    return _moments_numpy(labels, int(n))


def _pick(use_numba):
    if use_numba is None:
        return HAVE_NUMBA
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba path requested but numba is unavailable or disabled")
    return bool(use_numba)
