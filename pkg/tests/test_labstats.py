import numpy as np
import pytest

from patchlab.grouping import count_similar, similarity_threshold
from patchlab.imagecore import PSNR_INF
from patchlab.labstats import (
    ExperimentRecord,
    LabConfig,
    exp_complexity_vs_threshold,
    exp_jitter_psnr_drop,
    exp_jitter_retention,
    exp_psnr_vs_threshold,
    exp_similar_patch_histogram,
    exp_similarity_threshold_distribution,
    exp_sparsity_rank_curves,
    exp_sparsity_vs_threshold,
    field_values,
    format_value,
    rank_correlation,
    rank_curve,
    read_records,
    records_to_csv,
    sample_centers,
    sparsity_config,
    split_total,
    write_records,
)


@pytest.fixture(scope="module")
def small():
    y, x = np.mgrid[0:40, 0:40].astype(float)
    a = 100 + 60 * np.sin(x / 3.0) * np.cos(y / 5.0) + 40 * (x + y > 45)
    b = np.add.outer(np.arange(40.0) * 3, np.arange(40.0) * 2)
    return {"a": a, "b": b}


class TestHelpers:
    def test_split_total(self):
        assert split_total(10, 3) == [4, 3, 3]
        assert sum(split_total(7, 10)) == 7

    def test_sample_centers_margin_and_determinism(self):
        c = sample_centers((30, 40), 200, 5, 3, 0)
        assert c[:, 0].min() >= 5 and c[:, 0].max() < 25
        assert c[:, 1].min() >= 5 and c[:, 1].max() < 35
        np.testing.assert_array_equal(c, sample_centers((30, 40), 200, 5, 3, 0))
        assert not np.array_equal(c, sample_centers((30, 40), 200, 5, 3, 1))

    def test_rank_correlation(self):
        assert rank_correlation([1, 2, 3, 4], [10, 20, 30, 45]) == pytest.approx(1.0)
        assert rank_correlation([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
        assert rank_correlation([1, 1, 1], [1, 2, 3]) == 0.0

    def test_record_validates_fields(self):
        with pytest.raises(ValueError):
            ExperimentRecord("x", "img", 0.0, "0", 0, {"bogus": 1.0})

    def test_format_value(self):
        assert format_value(1 / 3) == "0.333333"
        assert format_value(PSNR_INF) == "inf"
        assert format_value(None) == ""


class TestSimilarPatches:
    def test_histogram_totals(self, small):
        cfg = LabConfig()
        thetas = [100.0, 2000.0]
        recs = exp_similar_patch_histogram(small["a"], thetas, cfg)
        assert len(recs) == 2 * cfg.grouping.candidates
        for t in thetas:
            freq = [r.values["frequency"] for r in recs if r.values["threshold"] == t]
            assert sum(freq) == 40 * 40

    def test_histogram_matches_pointwise(self, small):
        cfg = LabConfig()
        recs = exp_similar_patch_histogram(small["a"], [500.0], cfg)
        counts = np.zeros(cfg.grouping.candidates)
        for r, c in [(r, c) for r in range(40) for c in range(40)]:
            counts[count_similar(small["a"], (r, c), 500.0, cfg.grouping)] += 1
        np.testing.assert_array_equal(field_values(recs, "frequency"), counts)

    def test_constant_image_all_similar(self):
        img = np.full((20, 20), 50.0)
        recs = exp_similar_patch_histogram(img, [0.0])
        hist = field_values(recs, "frequency")
        # interior pixels see all 80 neighbors, border pixels fewer
        assert hist[80] == 12 * 12
        assert hist.sum() == 400

    def test_threshold_distribution(self, small):
        recs = exp_similarity_threshold_distribution(small["a"], [0, 10], m=15)
        assert len(recs) == 2 * 1600
        t0 = field_values(recs, "threshold", sigma=0.0)
        assert t0[5 * 40 + 7] == pytest.approx(similarity_threshold(small["a"], (5, 7), 15))
        assert field_values(recs, "threshold", sigma=10.0).mean() > t0.mean()

    def test_constant_image_threshold_zero(self):
        recs = exp_similarity_threshold_distribution(np.full((12, 12), 3.0), [0])
        assert np.all(field_values(recs, "threshold") == 0)


class TestPerSample:
    def test_complexity_record_count(self, small):
        recs = exp_complexity_vs_threshold(small, n_patches=9, sigma_list=(0, 15))
        assert len(recs) == 18
        assert {r.image_id for r in recs} == {"a", "b"}

    def test_psnr_vs_threshold_per_image(self, small):
        recs = exp_psnr_vs_threshold(small, n_patches=6, sigma=15)
        assert len(recs) == 12
        assert np.all(np.isfinite(field_values(recs, "psnr_db")))

    def test_retention_clean_is_full(self, small):
        recs = exp_jitter_retention(small, n_patches=10, m=15, sigma_list=(0, 40))
        np.testing.assert_array_equal(field_values(recs, "retention_pct", sigma=0.0), 100.0)
        noisy = field_values(recs, "retention_pct", sigma=40.0)
        # retention moves in steps of 100/m
        np.testing.assert_allclose(noisy * 15 / 100, np.round(noisy * 15 / 100), atol=1e-9)
        assert noisy.mean() < 100

    def test_drop_zero_without_noise(self, small):
        recs = exp_jitter_psnr_drop(small, n_patches=6, sigma_list=(0,))
        np.testing.assert_array_equal(field_values(recs, "drop_db"), 0.0)

    def test_threads_identical(self, small):
        cfg1 = LabConfig(threads=1)
        cfg3 = LabConfig(threads=3)
        a = exp_jitter_psnr_drop(small, n_patches=70, sigma_list=(15,), config=cfg1)
        b = exp_jitter_psnr_drop(small, n_patches=70, sigma_list=(15,), config=cfg3)
        assert records_to_csv(a) == records_to_csv(b)


class TestSparsity:
    def test_rank_curve_clean_group(self, rng):
        X = rng.normal(size=(8, 9)) * 10
        curve, energy = rank_curve(X, 2, X[2])
        assert len(curve) == 9
        assert curve[-1] == PSNR_INF
        centered = X - X.mean(axis=0)
        assert energy.sum() == pytest.approx(np.sum(centered**2), rel=1e-12)

    def test_rank_curves_records(self, small):
        cfg = sparsity_config(search_radius=6)
        recs = exp_sparsity_rank_curves({"a": small["a"]}, n_patches=2, sigma=15, patch_side=9, config=cfg)
        # ranks 0..k with k = min(m, n) = 30
        assert len(recs) == 2 * 31
        assert recs[0].index == "0/r=0" and "atom_energy" not in recs[0].values
        assert recs[30].values["rank"] == 30

    def test_sparsity_vs_threshold(self, small):
        cfg = sparsity_config(search_radius=6)
        recs = exp_sparsity_vs_threshold({"a": small["a"]}, sigma_list=(15, 40), config=cfg, n_patches=3)
        assert len(recs) == 6
        ranks = field_values(recs, "rank")
        assert np.all((ranks >= 0) & (ranks <= 30))


class TestCsv:
    def test_roundtrip_and_rerun(self, small, tmp_path):
        recs = exp_complexity_vs_threshold(small, n_patches=5, sigma_list=(0, 15))
        write_records(recs, tmp_path / "a.csv")
        write_records(exp_complexity_vs_threshold(small, n_patches=5, sigma_list=(0, 15)), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        back = read_records(tmp_path / "a.csv")
        assert len(back) == len(recs)
        for r, s in zip(recs, back):
            assert s.values["threshold"] == pytest.approx(r.values["threshold"], rel=1e-5)

    def test_header_comment(self):
        text = records_to_csv([])
        assert text.startswith("#")
        assert text.splitlines()[1].startswith("experiment_id,image_id,sigma,index,seed")
