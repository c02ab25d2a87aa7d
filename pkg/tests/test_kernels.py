import json
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import ndimage

from octlayers import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable or disabled")


def _cases(rng, n=15):
    for _ in range(n):
        shape = tuple(int(v) for v in rng.integers(1, 40, 2))
        allowed = rng.random(shape) < rng.uniform(0.2, 0.8)
        seeds = rng.random(shape) < 0.02
        yield allowed, seeds


@needs_numba
def test_flood_paths_agree(rng):
    for allowed, seeds in _cases(rng):
        a = _kernels.flood_from_seeds(allowed, seeds, use_numba=True)
        b = _kernels.flood_from_seeds(allowed, seeds, use_numba=False)
        np.testing.assert_array_equal(a, b)


@needs_numba
def test_column_extents_paths_agree(rng):
    for allowed, _ in _cases(rng):
        for x, y in zip(_kernels.column_extents(allowed, use_numba=True),
                        _kernels.column_extents(allowed, use_numba=False)):
            np.testing.assert_array_equal(x, y)


@needs_numba
def test_moments_paths_agree(rng):
    for allowed, _ in _cases(rng):
        labels, n = ndimage.label(allowed)
        a = _kernels.label_moments(labels, n, use_numba=True)
        b = _kernels.label_moments(labels, n, use_numba=False)
        np.testing.assert_allclose(a, b, rtol=0, atol=0)


def test_column_extents_values():
    r = np.zeros((6, 3), dtype=bool)
    r[1:4, 0] = True
    r[5, 2] = True
    top, bottom = _kernels.column_extents(r, use_numba=False)
    np.testing.assert_array_equal(top, [1, -1, 5])
    np.testing.assert_array_equal(bottom, [3, -1, 5])


def test_moments_values():
    labels = np.array([[1, 1, 0], [0, 2, 0]])
    m = _kernels.label_moments(labels, 2, use_numba=False)
    np.testing.assert_array_equal(m[0], [2, 1, 0, 1, 0, 0])
    np.testing.assert_array_equal(m[1], [1, 1, 1, 1, 1, 1])


def test_flood_ignores_seeds_outside(rng):
    allowed = np.zeros((5, 5), dtype=bool)
    seeds = np.ones((5, 5), dtype=bool)
    assert not _kernels.flood_from_seeds(allowed, seeds).any()


_SNIPPET = """
import json, numpy as np
from octlayers import _kernels, phantom, segment
img, _ = phantom.generate(phantom.preset("normal", size=(256, 256)))
res = segment.segment(img)
print(json.dumps({"numba": _kernels.HAVE_NUMBA,
                  "rows": {k: res[k].rows.tolist() for k in segment.ANATOMICAL_ORDER}}))
"""


def _run(flag):
    env = dict(os.environ)
    env.pop("OCTLAYERS_DISABLE_NUMBA", None)
    if flag:
        env["OCTLAYERS_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", _SNIPPET], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


@pytest.mark.slow
def test_env_flag_forces_numpy_with_same_result():
    off = _run(True)
    assert off["numba"] is False
    on = _run(False)
    assert on["rows"] == off["rows"]


def test_numba_request_when_disabled(monkeypatch):
    monkeypatch.setattr(_kernels, "HAVE_NUMBA", False)
    with pytest.raises(RuntimeError):
        _kernels.column_extents(np.ones((2, 2), dtype=bool), use_numba=True)
