import numpy as np
import pytest

from octlayers import core, denoise as dn, metrics, phantom
from octlayers.denoise import DenoiseConfig

import oracles


# ----------------------------------------------------------------------------- spectra

class TestBinarySpectrum:
    def test_zero_image(self):
        assert not dn.binary_spectrum(np.zeros((8, 8))).any()

    def test_dc_only(self):
        b = dn.binary_spectrum(np.full((8, 10), 3.0))
        assert b.sum() == 1 and b[4, 5] == 1

    def test_row_sinusoid(self):
        n1, n2 = 16, 32
        cols = np.arange(n2)
        img = 1.0 + np.tile(np.cos(2 * np.pi * 3 * cols / n2), (n1, 1))
        b = dn.binary_spectrum(img)
        on = set(zip(*np.nonzero(b)))
        assert on == {(8, 16), (8, 16 - 3), (8, 16 + 3)}

    def test_normalized_range(self, rng):
        m = dn.normalized_magnitude(rng.random((16, 16)))
        assert m.max() == pytest.approx(1.0) and m.min() >= 0.0


class TestCentralBox:
    def test_dc(self):
        box = dn.central_box(dn.shifted_magnitude(np.ones((9, 9))))
        assert (box.half_rows, box.half_cols) == (0, 0)
        assert box.area == 1

    def test_single_row(self):
        n1, n2 = 16, 32
        cols = np.arange(n2)
        img = 1.0 + np.tile(np.cos(2 * np.pi * 5 * cols / n2), (n1, 1))
        box = dn.central_box(dn.shifted_magnitude(img), 0.99)
        assert box.half_rows == 0 and box.half_cols == 5

    def test_degenerate(self):
        with pytest.raises(dn.DegenerateSpectrum):
            dn.central_box(np.zeros((8, 8)))

    @pytest.mark.parametrize("frac", [0.5, 0.9, 0.95, 0.99])
    def test_phantom_matches_exhaustive(self, frac):
        img, _ = phantom.generate(phantom.preset("normal", noise_sigma=0.05, seed=3))
        small = img[::4, ::8]
        assert small.shape == (64, 64)
        plane = dn.shifted_magnitude(small)
        box = dn.central_box(plane, frac)
        assert (box.half_rows, box.half_cols) == oracles.central_box(plane, frac)

    def test_decompose_partitions_binary(self, rng):
        d = dn.decompose(rng.random((16, 16)))
        np.testing.assert_array_equal(d.C + d.E, d.binary)
        assert not (d.C * d.E).any()


# ----------------------------------------------------------------------------- Wiener

def _impulse(n=3):
    k = np.zeros((n, n))
    k[n // 2, n // 2] = 1.0
    return k


class TestWiener:
    def test_identity(self, rng):
        x = rng.random((12, 16))
        np.testing.assert_allclose(dn.wiener_deconvolve(x, _impulse(), 0.0), x, atol=1e-12)

    def test_infinite_nsr_kills(self, rng):
        x = rng.random((12, 16))
        assert np.abs(dn.wiener_deconvolve(x, _impulse(), np.inf)).max() == 0.0
        assert np.abs(dn.wiener_deconvolve(x, _impulse(), 1e12)).max() < 1e-9

    def test_singular(self, rng):
        psf = np.zeros((3, 3))
        psf[1, 1:] = 0.5          # two-tap average has a zero at the Nyquist column
        with pytest.raises(dn.SingularDeconvolution):
            dn.wiener_deconvolve(rng.random((8, 8)), psf, 0.0)

    def test_negative_nsr(self, rng):
        with pytest.raises(ValueError):
            dn.wiener_deconvolve(rng.random((8, 8)), _impulse(), -1.0)

    def test_inverse_filter_limit(self, rng):
        # periodic blur with an invertible kernel, undone exactly at nsr -> 0
        x = rng.random((16, 16))
        psf = core.gaussian_psf(3, 0.3)
        blurred = core.ifft2(core.fft2(x) * core.psf_otf(psf, x.shape))
        np.testing.assert_allclose(dn.wiener_deconvolve(blurred, psf, 1e-14), x, atol=1e-6)

    def test_roundtrip_psnr(self):
        img, _ = phantom.generate(phantom.preset("normal"))
        psf = core.gaussian_psf()
        back = dn.wiener_deconvolve(core.convolve(img, psf), psf, 1e-9)
        assert metrics.psnr(img, back) >= 40.0


# ----------------------------------------------------------------------------- error metric

class TestStructuralError:
    def test_zero_denoised_counts_active_bins(self, rng):
        x = rng.random((8, 8))
        e = dn.structural_error(x, np.zeros_like(x))
        assert e == dn.binary_spectrum(x).sum()

    def test_binary_cancellation(self):
        x = np.zeros((8, 8))
        x[0, 0] = 1.0
        assert dn.structural_error(x, x, a=2.0) == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_sum(self, rng):
        for _ in range(5):
            x, y = rng.random((8, 8)), rng.random((8, 8))
            got = dn.structural_error(x, y, a=1.5)
            want = oracles.structural_error(x, y, 1.5)
            assert got == pytest.approx(want, rel=1e-9)

    def test_split_form_agrees(self, rng):
        x, y = rng.random((16, 16)), rng.random((16, 16))
        d = dn.decompose(x)
        m = dn.normalized_magnitude(y)
        for a in (1.0, 1.3, 2.0):
            assert dn.structural_error_split(d, m, a) == pytest.approx(dn.structural_error(x, y, a), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dn.structural_error(np.zeros((8, 8)), np.zeros((8, 9)))


# ----------------------------------------------------------------------------- estimation

class TestEstimate:
    def test_constant_image(self):
        with pytest.raises(dn.DegenerateSpectrum):
            dn.estimate_noise(np.full((32, 32), 0.3))

    def test_heavier_noise_not_larger_k(self, noisy_phantom):
        light, _ = noisy_phantom("normal", 0.02, 5)
        heavy, _ = noisy_phantom("normal", 0.1, 5)
        assert dn.estimate_noise(heavy).k <= dn.estimate_noise(light).k

    def test_grid_is_exhaustive(self):
        # recompute each grid cell through the public error function
        img, _ = phantom.generate(phantom.preset("normal", size=(128, 256), noise_sigma=0.03, seed=1))
        cfg = DenoiseConfig(ks=(1, 2, 3, 5, 8, 12), a_grid=(1.0, 1.5, 2.0))
        est = dn.estimate_noise(img, cfg)
        I = core.rescale(img)
        want = np.empty((len(cfg.ks), len(cfg.a_grid)))
        for i, k in enumerate(cfg.ks):
            Id = dn._Deconvolver(I, cfg)(10.0 ** -k)
            for j, a in enumerate(cfg.a_grid):
                want[i, j] = dn.structural_error(I, Id, a, cfg.rel_eps)
        np.testing.assert_allclose(est.error_surface, want, rtol=1e-9)
        i, j = np.unravel_index(np.argmin(want), want.shape)
        assert (est.k, est.a) == (cfg.ks[i], cfg.a_grid[j])

    def test_ties_go_to_smaller_k(self, monkeypatch):
        # a flat error surface must resolve to the first k and first a
        monkeypatch.setattr(dn, "error_terms", lambda b, m: (1.0, 0.0, 0.0))
        est = dn.estimate_noise(np.random.default_rng(0).random((16, 16)))
        assert (est.k, est.a) == (1, 1.0)

    def test_weight_within_bounds(self, noisy_phantom):
        img, _ = noisy_phantom("normal", 0.05, 0)
        est = dn.estimate_noise(img)
        assert 1.0 <= est.a <= 2.0
        assert est.error_surface.shape == (15, 11)
        assert est.noise_variance == 10.0 ** -est.k
        d = est.to_dict()
        assert d["k"] == est.k and len(d["error_surface"]) == 15

    def test_error_curve(self, noisy_phantom):
        est = dn.estimate_noise(noisy_phantom("normal", 0.05, 0)[0])
        assert est.error_curve().shape == (15,)
        assert est.error_curve().min() == pytest.approx(est.error_surface.min())


class TestDenoise:
    def test_identity_path(self):
        img, truth = phantom.generate(phantom.preset("normal"))
        cfg = DenoiseConfig()
        est = dn.NoiseEstimate(k=15, a=1.0, nsr=0.0, error_surface=np.zeros((1, 1)))
        out = dn.apply_estimate(img, est, cfg)
        assert metrics.psnr(core.rescale(img), out) >= 35.0

    def test_snr_cnr_gain(self, noisy_phantom, denoised_phantom):
        img, truth = noisy_phantom("normal", 0.05, 0)
        den, _ = denoised_phantom("normal", 0.05, 0)
        fg = metrics.foreground_mask(truth["S1"], truth["S7"], img.shape)
        assert metrics.snr(den, fg) - metrics.snr(img, fg) >= 8.0
        assert metrics.cnr(den, fg) - metrics.cnr(img, fg) >= 0.2

    def test_output_unit_range(self, denoised_phantom):
        den, _ = denoised_phantom("normal", 0.05, 0)
        assert den.min() == 0.0 and den.max() == 1.0

    def test_boundary_modes(self, noisy_phantom):
        img, _ = noisy_phantom("normal", 0.05, 0)
        a = dn.denoise(img, DenoiseConfig(boundary="periodic"))[0]
        b = dn.denoise(img)[0]
        assert a.shape == b.shape == img.shape
        with pytest.raises(ValueError):
            DenoiseConfig(boundary="reflect")

    def test_symmetric_boundary_edge_columns(self, noisy_phantom):
        # the mirrored extension avoids wrap-around ringing at the side borders
        img, truth = noisy_phantom("normal", 0.05, 0)
        clean = core.rescale(truth.diagnostics["clean"])

        def edge_err(cfg):
            d = dn.denoise(img, cfg)[0]
            return np.abs(d - clean)[:, :4].mean()

        assert edge_err(DenoiseConfig()) < edge_err(DenoiseConfig(boundary="periodic"))


class TestWavelet:
    def test_zero(self):
        assert not dn.wavelet_denoise_baseline(np.zeros((32, 32))).any()

    @pytest.mark.parametrize("shape", [(32, 32), (30, 45)])
    def test_perfect_reconstruction(self, rng, shape):
        x = rng.random(shape)
        assert np.abs(dn.wavelet_denoise_baseline(x, threshold=0.0) - x).max() < 1e-9

    def test_reduces_mse(self):
        rng = np.random.default_rng(3)
        clean = np.zeros((64, 64))
        clean[16:40, 8:50] = 1.0
        clean[44:60, :] = 0.5
        noisy = clean + 0.1 * rng.standard_normal(clean.shape)
        out = dn.wavelet_denoise_baseline(noisy)
        assert np.mean((out - clean) ** 2) < np.mean((noisy - clean) ** 2)

    def test_universal_rule_shrinks(self, rng):
        x = rng.standard_normal((64, 64))
        out = dn.wavelet_denoise_baseline(x, rule="universal")
        assert out.std() < x.std()

    def test_bad_args(self, rng):
        with pytest.raises(ValueError):
            dn.wavelet_denoise_baseline(rng.random((16, 16)), levels=0)
        with pytest.raises(ValueError):
            dn.wavelet_denoise_baseline(rng.random((16, 16)), rule="sure")
