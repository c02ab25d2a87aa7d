import functools

import numpy as np
import pytest

from octlayers import denoise, phantom

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@functools.lru_cache(maxsize=None)
def _noisy_phantom(name, sigma, seed, size=(512, 256)):
    return phantom.generate(phantom.preset(name, size=size, noise_sigma=sigma, seed=seed))


@functools.lru_cache(maxsize=None)
def _denoised(name, sigma, seed):
    img, _ = _noisy_phantom(name, sigma, seed)
    return denoise.denoise(img)


@pytest.fixture(scope="session")
def noisy_phantom():
    return _noisy_phantom


@pytest.fixture(scope="session")
def denoised_phantom():
    return _denoised


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
