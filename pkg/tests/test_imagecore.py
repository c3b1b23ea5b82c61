import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from patchlab.imagecore import (
    PSNR_INF,
    NoiseSpec,
    PgmError,
    add_awgn,
    derive_seed,
    estimate_noise_sigma,
    load_pgm,
    load_ppm,
    mse,
    noise_rng,
    parse_pgm,
    psnr,
    save_pgm,
    save_pgm16,
    save_ppm,
    ssim,
    to_bytes8,
)


class TestPgm:
    def test_p2_roundtrip_values(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P2\n# comment\n3 2\n255\n0 10 20\n30 40 255\n")
        img = load_pgm(p)
        assert img.shape == (2, 3)
        np.testing.assert_array_equal(img, [[0, 10, 20], [30, 40, 255]])

    def test_p5_roundtrip(self, tmp_path, rng):
        img = rng.integers(0, 256, (7, 9)).astype(float)
        save_pgm(img, tmp_path / "a.pgm")
        np.testing.assert_array_equal(load_pgm(tmp_path / "a.pgm"), img)

    def test_16bit_scaled_to_255(self, tmp_path):
        data = b"P5\n2 1\n65535\n" + np.array([0, 65535], dtype=">u2").tobytes()
        np.testing.assert_allclose(parse_pgm(data), [[0.0, 255.0]])

    def test_16bit_roundtrip_precision(self, tmp_path, rng):
        img = rng.uniform(0, 255, (5, 6))
        save_pgm16(img, tmp_path / "b.pgm")
        assert np.abs(load_pgm(tmp_path / "b.pgm") - img).max() <= 255 / 65535

    def test_save_clamps_and_rounds_half_up(self):
        np.testing.assert_array_equal(to_bytes8([-3.0, 0.5, 1.49, 254.5, 300.0]), [0, 1, 1, 255, 255])

    def test_truncated_payload(self):
        with pytest.raises(PgmError, match="size mismatch"):
            parse_pgm(b"P5\n4 4\n255\n" + bytes(10))

    def test_bad_magic(self):
        with pytest.raises(PgmError, match="byte offset 0"):
            parse_pgm(b"P6\n1 1\n255\n\x00")

    def test_bad_maxval(self):
        with pytest.raises(PgmError, match="maxval"):
            parse_pgm(b"P5\n1 1\n70000\n\x00\x00")

    def test_ppm_roundtrip(self, tmp_path, rng):
        rgb = rng.integers(0, 256, (4, 5, 3)).astype(float)
        save_ppm(rgb, tmp_path / "c.ppm")
        np.testing.assert_array_equal(load_ppm(tmp_path / "c.ppm"), rgb)


class TestNoise:
    def test_pinned_stream(self):
        # first draws of PCG64(0) standard normals, frozen
        expected = np.random.Generator(np.random.PCG64(0)).standard_normal(3)
        np.testing.assert_array_equal(noise_rng(0).standard_normal(3), expected)

    def test_awgn_deterministic_and_unclamped(self):
        img = np.zeros((32, 32))
        a = add_awgn(img, NoiseSpec(10, 4))
        np.testing.assert_array_equal(a, add_awgn(img, NoiseSpec(10, 4)))
        assert a.min() < 0

    def test_zero_sigma_identity(self, textured):
        out = add_awgn(textured, NoiseSpec(0.0, 1))
        np.testing.assert_array_equal(out, textured)
        assert out is not textured

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(-1.0)

    def test_noise_statistics(self):
        img = np.full((256, 256), 128.0)
        n = add_awgn(img, NoiseSpec(20, 3)) - img
        assert abs(n.std() - 20) < 0.3
        assert abs(n.mean()) < 0.3

    @pytest.mark.parametrize("sigma", [5.0, 15.0, 30.0])
    def test_estimate_on_flat_image(self, sigma):
        img = add_awgn(np.full((200, 200), 100.0), NoiseSpec(sigma, 11))
        assert estimate_noise_sigma(img) == pytest.approx(sigma, rel=0.05)

    def test_estimate_clean_constant_is_zero(self):
        assert estimate_noise_sigma(np.full((10, 10), 7.0)) == 0.0

    def test_derive_seed_stable(self):
        assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
        assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)
        assert 0 <= derive_seed(5) < 2**63


class TestMetrics:
    def test_psnr_known_value(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 5.0)
        assert mse(a, b) == 25.0
        assert psnr(a, b) == pytest.approx(20 * np.log10(255 / 5), abs=1e-12)

    def test_psnr_identical_sentinel(self, textured):
        assert psnr(textured, textured) == PSNR_INF

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            psnr(np.zeros((3, 3)), np.zeros((3, 4)))

    def test_ssim_identity_and_symmetry(self, textured, rng):
        assert ssim(textured, textured) == 1.0
        other = textured + rng.normal(0, 10, textured.shape)
        assert ssim(textured, other) == ssim(other, textured)

    def test_ssim_matches_skimage(self, textured, rng):
        other = textured + rng.normal(0, 12, textured.shape)
        ref = structural_similarity(textured, other, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, data_range=255)
        assert ssim(textured, other) == pytest.approx(ref, abs=1e-10)

    def test_ssim_too_small(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((5, 5)), np.zeros((5, 5)))

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.5, 40), st.integers(0, 2**31))
    def test_ssim_bounded(self, sigma, seed):
        y, x = np.mgrid[0:24, 0:24]
        img = 3.0 * x + 2.0 * y
        noisy = add_awgn(img, NoiseSpec(sigma, seed))
        value = ssim(img, noisy)
        assert -1.0 <= value < 1.0
