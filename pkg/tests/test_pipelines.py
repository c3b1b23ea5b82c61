from dataclasses import replace

import numpy as np
import pytest

from patchlab.grouping import GroupingConfig, candidate_distances, extract_patch, gaussian_weighted_distance
from patchlab.imagecore import NoiseSpec, add_awgn, estimate_noise_sigma, psnr
from patchlab.pipelines import (
    Accumulator,
    BoostSpec,
    CoverageError,
    aggregate_finalize,
    boost_back_projection,
    boost_sos,
    boost_twicing,
    default_config,
    denoise,
    deposit_patches,
    nlm_weights,
    svd_group_estimate,
)
from patchlab.pipelines.aggregate import reference_grid, resolve_threads
from patchlab.pipelines.bm3d import Transform3D
from patchlab.pipelines.lowrank import lpg_threshold, pca_wiener_estimate
from patchlab.pipelines.nlm import nlm_bandwidth, nlm_denoise
from patchlab.shrinkage import ShrinkSpec, noise_tau_sq, select_rank

PIPELINES = ("nlm", "lra_svd", "lpg_pca", "bm3d_lite")


@pytest.fixture(scope="module")
def scene():
    y, x = np.mgrid[0:48, 0:48].astype(float)
    img = 90 + 50 * np.sin(x / 4.0) + 30 * (y > 20) + 0.5 * y
    return img, add_awgn(img, NoiseSpec(15, 2))


class TestAggregation:
    def test_deposit_matches_loop(self, rng):
        shape = (9, 11)
        centers = np.array([[0, 0], [4, 5], [8, 10], [2, 9]])
        patches = rng.normal(size=(4, 9))
        weights = np.array([1.0, 2.0, 0.5, 3.0])
        acc = Accumulator(shape)
        deposit_patches(acc, centers, patches, 3, weights)
        num, den = np.zeros(shape), np.zeros(shape)
        for (r, c), p, w in zip(centers, patches.reshape(4, 3, 3), weights):
            for dy in range(3):
                for dx in range(3):
                    rr, cc = r + dy - 1, c + dx - 1
                    if 0 <= rr < shape[0] and 0 <= cc < shape[1]:
                        num[rr, cc] += w * p[dy, dx]
                        den[rr, cc] += w
        np.testing.assert_allclose(acc.numerator, num, atol=1e-12)
        np.testing.assert_allclose(acc.denominator, den, atol=1e-12)

    def test_uncovered_pixel(self):
        acc = Accumulator((5, 5))
        deposit_patches(acc, np.array([[1, 1]]), np.ones((1, 9)), 3)
        with pytest.raises(CoverageError, match=r"\(0, 3\)"):
            aggregate_finalize(acc)

    def test_reference_grid_reaches_end(self):
        assert reference_grid(10, 3).tolist() == [0, 3, 6, 9]
        assert reference_grid(11, 3).tolist() == [0, 3, 6, 9, 10]
        assert reference_grid(1, 4).tolist() == [0]

    def test_threads_env_fallback(self, monkeypatch):
        monkeypatch.setenv("PATCHLAB_THREADS", "3")
        assert resolve_threads(None) == 3
        assert resolve_threads(2) == 2
        monkeypatch.delenv("PATCHLAB_THREADS")
        assert resolve_threads(None) == 1


def svd_oracle(X, sigma):
    """Per-group centered SVD with the rank rule, via numpy's SVD."""
    out = np.empty_like(X)
    for g, G in enumerate(X):
        mean = G.mean(axis=0)
        u, s, vt = np.linalg.svd(G - mean, full_matrices=False)
        r = select_rank(s, noise_tau_sq(G.shape[1], G.shape[0], sigma))
        out[g] = G if r >= len(s) else mean + (u[:, :r] * s[:r]) @ vt[:r]
    return out


class TestGroupEstimates:
    @pytest.mark.parametrize("m,n", [(30, 9), (6, 25)])
    def test_svd_batch_matches_oracle(self, rng, m, n):
        base = rng.normal(size=(20, 2, n)) * 40
        coef = rng.normal(size=(20, m, 2))
        X = coef @ base + rng.normal(size=(20, m, n)) * 5
        est = svd_group_estimate(X, 5.0, ShrinkSpec())
        np.testing.assert_allclose(est, svd_oracle(X, 5.0), atol=1e-8)

    def test_full_rank_passthrough_exact(self, rng):
        X = rng.normal(size=(3, 10, 9)) * 50
        np.testing.assert_array_equal(svd_group_estimate(X, 0.0, ShrinkSpec()), X)

    def test_soft_sv_shrinks_energy(self, rng):
        X = rng.normal(size=(4, 12, 9)) * 10
        est = svd_group_estimate(X, 5.0, ShrinkSpec(kind="soft_sv"))
        centered = X - X.mean(axis=1, keepdims=True)
        assert np.all(np.linalg.norm(est - X.mean(axis=1, keepdims=True), axis=(1, 2))
                      < np.linalg.norm(centered, axis=(1, 2)))

    def test_pca_wiener_matches_loop(self, rng):
        X = rng.normal(size=(5, 12, 9)) * 20
        mask = rng.random((5, 12)) < 0.6
        mask[:, 0] = True
        est = pca_wiener_estimate(X, mask, 6.0)
        for g in range(5):
            G = X[g][mask[g]]
            mean = G.mean(axis=0)
            lam, phi = np.linalg.eigh((G - mean).T @ (G - mean) / len(G))
            sig = np.maximum(lam - 36.0, 0)
            gain = np.where(sig + 36.0 > 0, sig / (sig + 36.0), 0.0)
            gain[lam <= 0] = 0.0
            expect = (G - mean) @ (phi * gain) @ phi.T + mean
            np.testing.assert_allclose(est[g][mask[g]], expect, atol=1e-9)

    def test_lpg_threshold(self):
        cfg = default_config("lpg_pca", 10)
        assert lpg_threshold(cfg, 10.0) == 2.0 * 25 * 100 + 25.0 * 25

    @pytest.mark.parametrize("m", [1, 5, 16, 32])
    def test_transform3d_roundtrip(self, rng, m):
        T = Transform3D(7, m)
        X = rng.normal(size=(3, m, 49))
        np.testing.assert_allclose(T.inverse(T.forward(X)), X, atol=1e-10)


class TestNlm:
    def test_weights_match_direct_formula(self, scene):
        _, noisy = scene
        cfg = replace(default_config("nlm", 15), grouping=GroupingConfig(patch_side=5, search_radius=3, top_m=1))
        h = nlm_bandwidth(cfg, 15.0)
        cand, w = nlm_weights(noisy, (10, 12), cfg, 15.0)
        ref = extract_patch(noisy, (10, 12), 5)
        d = np.array([gaussian_weighted_distance(ref, extract_patch(noisy, c, 5), 1.0) for c in cand])
        expect = np.exp(-d / h**2)
        np.testing.assert_allclose(w, expect / expect.sum(), rtol=1e-10)

    def test_denoise_matches_weights(self, scene):
        _, noisy = scene
        cfg = default_config("nlm", 15)
        out = nlm_denoise(noisy, cfg, 15.0)
        for center in [(0, 0), (24, 30), (47, 5)]:
            cand, w = nlm_weights(noisy, center, cfg, 15.0)
            assert out[center] == pytest.approx(np.dot(w, noisy[cand[:, 0], cand[:, 1]]), rel=1e-10)

    def test_default_bandwidth(self):
        assert nlm_bandwidth(default_config("nlm"), 10.0) == pytest.approx(0.3 * 10 * 5)

    def test_zero_bandwidth_exact_matches_only(self):
        img = np.tile([0.0, 50.0], (8, 4))
        cfg = default_config("nlm", 10, nlm_h=None)
        cfg = replace(cfg, grouping=GroupingConfig(patch_side=3, search_radius=2, top_m=1))
        cand, w = nlm_weights(img, (4, 4), replace(cfg, noise_sigma=0.0), 0.0)
        dist = candidate_distances(img, (4, 4), cfg.grouping, kernel_sigma=1.0)[1]
        assert np.all((w > 0) == (dist == 0))


class TestDenoisers:
    @pytest.mark.parametrize("method", PIPELINES)
    def test_improves_psnr(self, scene, method):
        clean, noisy = scene
        out = denoise(noisy, default_config(method, 15))
        assert psnr(clean, out) > psnr(clean, noisy) + 1.0

    @pytest.mark.parametrize("method", PIPELINES)
    def test_thread_count_bit_exact(self, scene, method):
        _, noisy = scene
        a = denoise(noisy, default_config(method, 15), threads=1)
        b = denoise(noisy, default_config(method, 15), threads=3)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("method", PIPELINES)
    def test_constant_image(self, method):
        img = np.full((32, 32), 100.0)
        out = denoise(img, default_config(method, 10))
        expect = 100.0
        if method == "bm3d_lite":
            # the empirical Wiener gain also acts on the DC of a 7x7x32 stack
            dc_sq = (100.0**2) * 49 * 32
            expect = 100.0 * dc_sq / (dc_sq + 10.0**2)
        np.testing.assert_allclose(out, expect, rtol=1e-12)

    def test_identity(self, scene):
        _, noisy = scene
        out = denoise(noisy, default_config("identity", 5))
        np.testing.assert_array_equal(out, noisy)
        assert out is not noisy

    def test_estimated_sigma_used(self, scene):
        _, noisy = scene
        cfg = default_config("bm3d_lite")
        np.testing.assert_array_equal(denoise(noisy, cfg), denoise(noisy, cfg.with_sigma(estimate_noise_sigma(noisy))))

    def test_second_stage_helps(self, scene):
        clean, noisy = scene
        one = denoise(noisy, default_config("bm3d_lite", 15, two_stage=False))
        two = denoise(noisy, default_config("bm3d_lite", 15))
        assert psnr(clean, two) > psnr(clean, one)

    def test_too_few_candidates(self):
        cfg = default_config("lra_svd", 10)
        with pytest.raises(ValueError, match="top_m"):
            denoise(np.zeros((6, 6)), cfg)


class TestBoosting:
    def test_twicing_with_linear_filter(self, rng):
        y, z = rng.normal(size=(2, 8, 8))

        def half(x):
            return 0.5 * x

        np.testing.assert_allclose(boost_twicing(y, z, half), z + 0.5 * (y - z), atol=1e-12)

    def test_sos_with_linear_filter(self, rng):
        y, z = rng.normal(size=(2, 8, 8))

        def half(x):
            return 0.5 * x

        np.testing.assert_allclose(boost_sos(y, z, half), 0.5 * (y + z) - z, atol=1e-12)

    def test_back_projection_blend(self, rng):
        y, z = rng.normal(size=(2, 4, 4))
        np.testing.assert_allclose(boost_back_projection(y, z, 0.25), z + 0.25 * (y - z))
        with pytest.raises(ValueError):
            boost_back_projection(y, z, 1.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            boost_twicing(np.zeros((3, 3)), np.zeros((3, 4)), lambda x: x)

    @pytest.mark.parametrize("kind", ["twicing", "back_projection", "sos"])
    def test_boosted_pipeline_runs(self, scene, kind):
        clean, noisy = scene
        cfg = default_config("bm3d_lite", 15, boost=BoostSpec(kind=kind, iterations=1, delta=0.3))
        assert psnr(clean, denoise(noisy, cfg)) > psnr(clean, noisy)


def test_nlm_natural_crop_improves():
    from skimage import data

    clean = data.camera()[192:320, 192:320].astype(float)
    for seed in range(5):
        noisy = add_awgn(clean, NoiseSpec(10, seed))
        assert psnr(clean, nlm_denoise(noisy, default_config("nlm", 10), 10.0)) > psnr(clean, noisy)
