import numpy as np
import pytest

from patchlab.cli import main, manifest_text, read_config_file
from patchlab.evalharness import BayerImage, save_raw
from patchlab.imagecore import NoiseSpec, add_awgn, load_pgm, load_ppm, psnr, save_pgm


@pytest.fixture
def workdir(tmp_path):
    y, x = np.mgrid[0:40, 0:40]
    img = np.clip(100 + 60 * np.sin(x / 4.0) + 40 * (y > 18), 0, 255).round()
    save_pgm(img, tmp_path / "clean.pgm")
    save_pgm(add_awgn(img, NoiseSpec(15, 3)), tmp_path / "noisy.pgm")
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    save_pgm(img, imgs / "a.pgm")
    save_pgm(img.T, imgs / "b.pgm")
    return tmp_path


class TestExitCodes:
    def test_unknown_method(self, workdir, capsys):
        assert main(["denoise", str(workdir / "noisy.pgm"), str(workdir / "o.pgm"), "--method", "wnnm"]) == 2
        assert "valid methods" in capsys.readouterr().err
        assert not (workdir / "o.pgm").exists()

    def test_negative_sigma(self, workdir):
        assert main(["noise", str(workdir / "clean.pgm"), str(workdir / "o.pgm"), "--sigma", "-1"]) == 2

    def test_missing_input_is_runtime_error(self, workdir):
        assert main(["denoise", str(workdir / "nope.pgm"), str(workdir / "o.pgm"), "--sigma", "5"]) == 1

    def test_corrupt_input(self, workdir):
        (workdir / "bad.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
        assert main(["denoise", str(workdir / "bad.pgm"), str(workdir / "o.pgm")]) == 1
        assert not (workdir / "o.pgm").exists()

    def test_unknown_experiment(self, workdir):
        assert main(["stats", "--experiment", "fig99", "--images", str(workdir / "imgs"),
                     "--out", str(workdir / "s")]) == 2

    def test_missing_and_empty_dir(self, workdir):
        (workdir / "empty").mkdir()
        assert main(["bench", "--images", str(workdir / "missing"), "--out", str(workdir / "b.csv")]) == 2
        assert main(["bench", "--images", str(workdir / "empty"), "--out", str(workdir / "b.csv")]) == 2

    def test_bad_threads(self, workdir):
        assert main(["denoise", str(workdir / "noisy.pgm"), str(workdir / "o.pgm"), "--threads", "0"]) == 2

    def test_argparse_usage(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


class TestDenoiseAndNoise:
    def test_noise_deterministic(self, workdir):
        a, b = workdir / "n1.pgm", workdir / "n2.pgm"
        assert main(["noise", str(workdir / "clean.pgm"), str(a), "--sigma", "10", "--seed", "4"]) == 0
        assert main(["noise", str(workdir / "clean.pgm"), str(b), "--sigma", "10", "--seed", "4"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_noise_zero_sigma_identity(self, workdir):
        out = workdir / "n0.pgm"
        assert main(["noise", str(workdir / "clean.pgm"), str(out), "--sigma", "0"]) == 0
        np.testing.assert_array_equal(load_pgm(out), load_pgm(workdir / "clean.pgm"))

    def test_denoise_reference(self, workdir, capsys):
        out = workdir / "d.pgm"
        rc = main(["denoise", str(workdir / "noisy.pgm"), str(out), "--method", "bm3d_lite", "--sigma", "15",
                   "--reference", str(workdir / "clean.pgm")])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("PSNR ") and lines[1].startswith("SSIM ")
        clean = load_pgm(workdir / "clean.pgm")
        assert float(lines[0].split()[1]) == pytest.approx(psnr(clean, load_pgm(out)), abs=1e-4)
        assert psnr(clean, load_pgm(out)) > psnr(clean, load_pgm(workdir / "noisy.pgm"))


class TestConfig:
    def test_precedence(self, workdir):
        cfg = workdir / "c.cfg"
        cfg.write_text("# noise settings\nsigma = 20\nseed = 4\n")
        a, b, c = (workdir / f"{k}.pgm" for k in "abc")
        src = str(workdir / "clean.pgm")
        assert main(["noise", src, str(a), "--config", str(cfg)]) == 0
        assert main(["noise", src, str(b), "--sigma", "20", "--seed", "4"]) == 0
        assert a.read_bytes() == b.read_bytes()
        # flags override the file
        assert main(["noise", src, str(c), "--config", str(cfg), "--seed", "5"]) == 0
        assert c.read_bytes() != a.read_bytes()

    def test_bad_lines(self, workdir):
        cfg = workdir / "bad.cfg"
        cfg.write_text("sigma\n")
        assert main(["noise", str(workdir / "clean.pgm"), str(workdir / "o.pgm"), "--config", str(cfg)]) == 2

    def test_unknown_key(self, workdir):
        cfg = workdir / "k.cfg"
        cfg.write_text("colour=blue\n")
        assert main(["noise", str(workdir / "clean.pgm"), str(workdir / "o.pgm"), "--config", str(cfg)]) == 2

    def test_read_config_file(self, workdir):
        cfg = workdir / "r.cfg"
        cfg.write_text("a=1\n\n# skip\nb = x y\n")
        assert read_config_file(cfg) == {"a": "1", "b": "x y"}

    def test_manifest_ignores_threads(self):
        assert manifest_text("bench", {"seed": 1, "threads": 1}) == manifest_text("bench", {"seed": 1, "threads": 4})


class TestStatsAndBench:
    def test_stats_writes_csv_and_manifest(self, workdir):
        out = workdir / "s"
        assert main(["stats", "--experiment", "fig4", "--images", str(workdir / "imgs"), "--out", str(out),
                     "--n-patches", "6", "--sigmas", "0,15"]) == 0
        text = (out / "fig4.csv").read_text()
        assert text.startswith("#")
        rows = [ln for ln in text.splitlines() if not ln.startswith("#")]
        assert len(rows) == 1 + 12
        assert "# complexity: sample standard deviation" in text
        assert (out / "fig4_manifest.txt").exists()

    def test_stats_alias(self, workdir):
        out = workdir / "s"
        assert main(["stats", "--experiment", "jitter_retention", "--images", str(workdir / "imgs"),
                     "--out", str(out), "--n-patches", "4", "--sigmas", "0"]) == 0
        assert (out / "fig6.csv").exists()

    def test_bench_identity(self, workdir):
        out = workdir / "b.csv"
        assert main(["bench", "--images", str(workdir / "imgs"), "--sigmas", "5", "--methods", "identity",
                     "--out", str(out)]) == 0
        assert out.exists() and (workdir / "b_by_sigma.csv").exists()
        assert "identity" in out.read_text()

    def test_bench_seven_alias_in_manifest(self, workdir, monkeypatch):
        import patchlab.evalharness as ev

        monkeypatch.setattr(ev, "SEVEN_METHODS", ("identity",))
        out = workdir / "b7.csv"
        assert main(["bench", "--images", str(workdir / "imgs"), "--sigmas", "5", "--methods", "seven",
                     "--out", str(out)]) == 0
        assert "# methods=identity" in out.read_text()


class TestIsp:
    def test_constant_scene(self, workdir, capsys):
        save_raw(BayerImage(np.full((16, 16), 80.0)), workdir / "flat.pgm")
        rc = main(["isp", "--raw", str(workdir / "flat.pgm"), "--method", "identity", "--out", str(workdir / "isp")])
        assert rc == 0
        assert capsys.readouterr().out.strip() == "sharpness 0"
        np.testing.assert_array_equal(load_ppm(workdir / "isp.ppm"), 80.0)

    def test_unknown_metric_and_pattern(self, workdir):
        save_raw(BayerImage(np.full((8, 8), 80.0)), workdir / "r.pgm")
        base = ["isp", "--raw", str(workdir / "r.pgm"), "--out", str(workdir / "o")]
        assert main(base + ["--metric", "brisque"]) == 2
        assert main(base + ["--pattern", "bggr"]) == 2
        assert not (workdir / "o.ppm").exists()

    def test_odd_mosaic(self, workdir):
        save_pgm(np.zeros((5, 6)), workdir / "odd.pgm")
        assert main(["isp", "--raw", str(workdir / "odd.pgm"), "--out", str(workdir / "o")]) == 2
