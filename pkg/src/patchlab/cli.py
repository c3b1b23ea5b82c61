"""Command-line front end.

Exit status: 0 success, 1 I/O or pipeline failure, 2 invalid usage.
Configuration precedence: built-in defaults < ``--config`` file < flags.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

from . import __version__
from . import evalharness as ev
from . import labstats as ls
from .imagecore import NoiseSpec, PgmError, add_awgn, list_pgms, load_pgm, psnr, save_pgm, save_ppm, ssim
from .pipelines import denoise

EXPERIMENTS = ("fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9")
# descriptive aliases for the short experiment ids
EXPERIMENT_ALIASES = {
    "similar_patches": "fig2",
    "threshold_map": "fig3",
    "complexity": "fig4",
    "psnr_threshold": "fig5",
    "jitter_retention": "fig6",
    "jitter_drop": "fig7",
    "rank_curves": "fig8",
    "optimal_rank": "fig9",
}
DEFAULT_THETAS = (250.0, 625.0, 1250.0, 2500.0)


class UsageError(Exception):
    """Invalid flags or configuration (exit 2)."""


def _parse_list(text, kind=str):
    if isinstance(text, (list, tuple)):
        return list(text)
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    try:
        return [kind(t) for t in items]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def read_config_file(path) -> dict:
    """Plain ``key=value`` lines; ``#`` starts a comment. Keys use underscores."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def effective(args, defaults: dict) -> dict:
    """Merge defaults, the config file and explicitly given flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        from_file = read_config_file(args.config)
        unknown = set(from_file) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(from_file)
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _as(cfg, key, kind):
    try:
        return kind(cfg[key])
    except (TypeError, ValueError):
        raise UsageError(f"invalid value for {key}: {cfg[key]!r}") from None


def _opt_int(v):
    return None if v in (None, "", "None") else int(v)


def _opt_float(v):
    return None if v in (None, "", "None") else float(v)


def _check_threads(cfg):
    t = _as(cfg, "threads", _opt_int)
    if t is not None and t < 1:
        raise UsageError("--threads must be >= 1")
    return t


def manifest_text(command: str, cfg: dict) -> str:
    """Effective configuration as sorted ``key=value`` lines.

    Thread count and output paths are left out; neither changes results.
    """
    lines = [f"# patchlab {__version__} {command}"]
    lines += [f"{k}={cfg[k]}" for k in sorted(cfg) if k not in ("threads", "config", "out")]
    return "\n".join(lines) + "\n"


def _atomic_write(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".patchlab-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_all(files: dict):
    """Write every ``path -> bytes`` pair, only after all of them were produced."""
    for path, data in files.items():
        _atomic_write(path, data)


def _load_images(directory):
    if not directory or not os.path.isdir(directory):
        raise UsageError(f"image directory not found: {directory}")
    paths = list_pgms(directory)
    if not paths:
        raise UsageError(f"no PGM images in {directory}")
    return ev.load_image_dir(directory)


# ---------------------------------------------------------------------------
# commands


def cmd_denoise(args) -> int:
    cfg = effective(args, {"method": "bm3d_lite", "sigma": None, "seed": 0, "threads": None, "reference": None})
    if cfg["method"] not in ev.METHOD_NAMES:
        raise UsageError(f"unknown method {cfg['method']!r}; valid methods: {', '.join(ev.METHOD_NAMES)}")
    sigma = _as(cfg, "sigma", _opt_float)
    if sigma is not None and sigma < 0:
        raise UsageError("--sigma must be >= 0")
    _as(cfg, "seed", int)
    threads = _check_threads(cfg)
    img = load_pgm(args.input)
    ref = load_pgm(cfg["reference"]) if cfg["reference"] else None
    out = denoise(img, ev.method_config(cfg["method"], sigma), threads=threads)
    with tempfile.TemporaryDirectory() as tmp:
        p = os.path.join(tmp, "out.pgm")
        save_pgm(out, p)
        data = open(p, "rb").read()
    _write_all({args.output: data})
    if ref is not None:
        stored = load_pgm(args.output)
        print(f"PSNR {psnr(ref, stored):.4f}")
        print(f"SSIM {ssim(ref, stored):.6f}")
    return 0


def cmd_noise(args) -> int:
    cfg = effective(args, {"sigma": None, "seed": 0})
    sigma = _as(cfg, "sigma", _opt_float)
    if sigma is None:
        raise UsageError("--sigma is required")
    if sigma < 0:
        raise UsageError("--sigma must be >= 0")
    seed = _as(cfg, "seed", int)
    img = load_pgm(args.input)
    noisy = add_awgn(img, NoiseSpec(sigma, seed))
    with tempfile.TemporaryDirectory() as tmp:
        p = os.path.join(tmp, "out.pgm")
        save_pgm(noisy, p)
        data = open(p, "rb").read()
    _write_all({args.output: data})
    return 0


STATS_DEFAULTS = {
    "experiment": None,
    "images": None,
    "seed": 0,
    "out": None,
    "threads": None,
    "n_patches": None,
    "sigmas": None,
    "thetas": ",".join(f"{t:g}" for t in DEFAULT_THETAS),
    "top_m": 15,
}


def run_experiment(exp: str, images, seed: int, threads=None, n_patches=None, sigmas=None,
                   thetas=DEFAULT_THETAS, top_m: int = 15):
    """Records of one experiment with its default plan; ``None`` keeps a default."""
    cfg = ls.LabConfig(seed=seed, threads=threads, top_m=top_m)
    scfg = ls.sparsity_config(seed=seed, threads=threads)

    def pick(default_n, default_s):
        return (default_n if n_patches is None else n_patches), (default_s if sigmas is None else sigmas)

    if exp == "fig2":
        return [rec for name, img in images for rec in ls.exp_similar_patch_histogram(img, thetas, cfg, name)]
    if exp == "fig3":
        _, sl = pick(None, (0, 5, 15, 25))
        return [rec for i, (name, img) in enumerate(images)
                for rec in ls.exp_similarity_threshold_distribution(img, sl, top_m, cfg, name, i)]
    if exp == "fig4":
        n, sl = pick(500, (0, 15, 40))
        return ls.exp_complexity_vs_threshold(images, n, sl, cfg)
    if exp == "fig5":
        n, sl = pick(500, (15,))
        return [rec for s in sl for rec in ls.exp_psnr_vs_threshold(images, n, s, cfg)]
    if exp == "fig6":
        n, sl = pick(100, (0, 5, 10, 15, 25, 40))
        return ls.exp_jitter_retention(images, n, top_m, sl, cfg)
    if exp == "fig7":
        n, sl = pick(100, (0, 5, 10, 15, 25, 40))
        return ls.exp_jitter_psnr_drop(images, n, top_m, sl, cfg)
    if exp == "fig8":
        n, sl = pick(500, (15,))
        return [rec for s in sl for rec in ls.exp_sparsity_rank_curves(images, n, s, scfg.patch_side, scfg)]
    if exp == "fig9":
        n, sl = pick(500, (15, 30, 40))
        return ls.exp_sparsity_vs_threshold(images, sl, scfg, n_patches=n)
    raise UsageError(f"unknown experiment {exp!r}; valid: {', '.join(EXPERIMENTS)}")


def cmd_stats(args) -> int:
    cfg = effective(args, STATS_DEFAULTS)
    exp = EXPERIMENT_ALIASES.get(cfg["experiment"], cfg["experiment"])
    if exp not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {exp!r}; valid: {', '.join(EXPERIMENTS + tuple(EXPERIMENT_ALIASES))}")
    if not cfg["out"]:
        raise UsageError("--out is required")
    seed = _as(cfg, "seed", int)
    threads = _check_threads(cfg)
    n = _as(cfg, "n_patches", _opt_int)
    if n is not None and n < 1:
        raise UsageError("n_patches must be >= 1")
    sigmas = None if cfg["sigmas"] in (None, "") else _parse_list(cfg["sigmas"], float)
    if sigmas is not None and any(s < 0 for s in sigmas):
        raise UsageError("sigmas must be >= 0")
    thetas = _parse_list(cfg["thetas"], float)
    top_m = _as(cfg, "top_m", int)
    images = _load_images(cfg["images"])
    try:
        records = run_experiment(exp, images, seed, threads, n, sigmas, thetas, top_m)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    os.makedirs(cfg["out"], exist_ok=True)
    _write_all({
        os.path.join(cfg["out"], f"{exp}.csv"): ls.records_to_csv(records).encode(),
        os.path.join(cfg["out"], f"{exp}_manifest.txt"): manifest_text("stats", cfg).encode(),
    })
    print(f"{exp}: {len(records)} records")
    return 0


def cmd_bench(args) -> int:
    cfg = effective(args, {"images": None, "sigmas": "5,10,15,20,25", "methods": "bm3d_lite", "out": None,
                           "seed": 0, "threads": None})
    if not cfg["out"]:
        raise UsageError("--out is required")
    sigmas = _parse_list(cfg["sigmas"], float)
    methods = _parse_list(cfg["methods"])
    if methods == ["seven"]:
        methods = list(ev.SEVEN_METHODS)
    cfg["methods"] = ",".join(methods)
    bad = [m for m in methods if m not in ev.METHOD_NAMES]
    if bad or not methods:
        raise UsageError(f"unknown method(s) {', '.join(bad)}; valid methods: {', '.join(ev.METHOD_NAMES)}")
    if not sigmas or any(s < 0 for s in sigmas):
        raise UsageError("sigmas must be a nonempty list of values >= 0")
    seed = _as(cfg, "seed", int)
    threads = _check_threads(cfg)
    images = _load_images(cfg["images"])
    plan = ev.BenchmarkPlan(images, tuple(sigmas), tuple(methods), seed, threads)
    table = ev.run_benchmark(plan)
    out = cfg["out"]
    stem = out[:-4] if out.endswith(".csv") else out
    manifest = manifest_text("bench", cfg)
    _write_all({
        out: ("".join("# " + ln + "\n" for ln in manifest.splitlines()[1:]) + ev.benchmark_csv(table)).encode(),
        stem + "_by_sigma.csv": ev.sigma_averages_csv(table).encode(),
    })
    print(f"{plan.total_runs} runs written to {out}")
    return 0


def cmd_isp(args) -> int:
    cfg = effective(args, {"raw": None, "pattern": None, "method": "bm3d_lite", "metric": "sharpness",
                           "out": None, "threads": None})
    if cfg["method"] not in ev.METHOD_NAMES:
        raise UsageError(f"unknown method {cfg['method']!r}; valid methods: {', '.join(ev.METHOD_NAMES)}")
    if cfg["metric"] not in ev.METRICS:
        raise UsageError(f"unknown metric {cfg['metric']!r}; registered metrics: {', '.join(sorted(ev.METRICS))}")
    if cfg["pattern"] is not None and cfg["pattern"].lower() not in ev.PATTERNS:
        raise UsageError(f"unknown pattern {cfg['pattern']!r}; supported: {', '.join(ev.PATTERNS)}")
    if not cfg["raw"] or not cfg["out"]:
        raise UsageError("--raw and --out are required")
    threads = _check_threads(cfg)
    try:
        raw = ev.load_raw(cfg["raw"])
        if cfg["pattern"] is not None:
            raw = ev.BayerImage(raw.mosaic, cfg["pattern"].lower())
    except PgmError:
        raise  # unreadable file: exit 1
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rgb = ev.isp_chain(raw, ev.method_config(cfg["method"]), threads)
    score = ev.get_metric(cfg["metric"]).evaluate(ev.luminance(rgb))
    with tempfile.TemporaryDirectory() as tmp:
        p = os.path.join(tmp, "out.ppm")
        save_ppm(rgb, p)
        data = open(p, "rb").read()
    _write_all({cfg["out"] + ".ppm": data})
    print(f"{cfg['metric']} {score:.6g}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patchlab", description="Patch-based denoising experiments.")
    p.add_argument("--version", action="version", version=f"patchlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, threads=True):
        sp.add_argument("--config", help="key=value configuration file")
        if seed:
            sp.add_argument("--seed", type=int, help="RNG seed (default 0)")
        if threads:
            sp.add_argument("--threads", type=int, help="worker cap (default: PATCHLAB_THREADS or 1)")

    d = sub.add_parser("denoise", help="denoise a PGM")
    d.add_argument("input")
    d.add_argument("output")
    d.add_argument("--method", help=f"one of {', '.join(ev.METHOD_NAMES)}")
    d.add_argument("--sigma", type=float, help="noise level (estimated when omitted)")
    d.add_argument("--reference", help="clean PGM; prints PSNR and SSIM")
    common(d)
    d.set_defaults(func=cmd_denoise)

    n = sub.add_parser("noise", help="add seeded white Gaussian noise to a PGM")
    n.add_argument("input")
    n.add_argument("output")
    n.add_argument("--sigma", type=float)
    common(n, threads=False)
    n.set_defaults(func=cmd_noise)

    s = sub.add_parser("stats", help="patch statistics experiments")
    s.add_argument("--experiment", help="; ".join(f"{k} ({v})" for k, v in EXPERIMENT_ALIASES.items()))
    s.add_argument("--images", help="directory of PGM images")
    s.add_argument("--out", help="output directory")
    s.add_argument("--n-patches", dest="n_patches", type=int)
    s.add_argument("--sigmas", help="comma-separated noise levels")
    common(s)
    s.set_defaults(func=cmd_stats)

    b = sub.add_parser("bench", help="full-reference benchmark")
    b.add_argument("--images", help="directory of PGM images")
    b.add_argument("--sigmas", help="comma-separated noise levels")
    b.add_argument("--methods", help="comma-separated method names, or 'seven' for the seven-method set")
    b.add_argument("--out", help="output CSV")
    common(b)
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("isp", help="denoise, demosaic and white-balance a raw mosaic")
    i.add_argument("--raw", help="16-bit PGM mosaic (sidecar <raw>.txt with pattern=grgb)")
    i.add_argument("--pattern")
    i.add_argument("--method")
    i.add_argument("--metric")
    i.add_argument("--out", help="output prefix; writes <prefix>.ppm")
    common(i, seed=False)
    i.set_defaults(func=cmd_isp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"patchlab {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, PgmError, ev.BenchmarkError, ValueError, ArithmeticError) as exc:
        print(f"patchlab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
