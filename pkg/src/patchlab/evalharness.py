"""Full-reference benchmarks, the no-reference metric correlation protocol and a raw Bayer chain."""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.ndimage import correlate
from scipy.optimize import minimize
from scipy.special import expit

from .imagecore import NoiseSpec, add_awgn, as_image, derive_seed, load_pgm, psnr, ssim
from .pipelines import DenoiseConfig, default_config, denoise

STANDARD_IMAGES = ("camera", "astronaut", "coffee", "chelsea", "coins", "moon", "rocket", "brick", "grass", "gravel")
DEFAULT_SIGMAS = (5, 10, 15, 20, 25)
LUMA = np.array([0.299, 0.587, 0.114])


class BenchmarkError(RuntimeError):
    """A pipeline failed; the message names the (image, sigma, method) triple."""


# ---------------------------------------------------------------------------
# images


def standard_images(size: int = 512, names=STANDARD_IMAGES) -> list[tuple[str, np.ndarray]]:
    """Grayscale scikit-image test images on [0, 255], center-cropped to ``size``.

    Images smaller than ``size`` are cropped to their largest centered square.
    """
    from skimage import data
    from skimage.color import rgb2gray

    out = []
    for name in names:
        img = np.asarray(getattr(data, name)())
        if img.ndim == 3:
            img = rgb2gray(img[..., :3]) * 255.0
        elif img.dtype != np.uint8:
            raise ValueError(f"unexpected dtype {img.dtype} for {name}")
        img = img.astype(np.float64)
        side = min(img.shape[0], img.shape[1], size)
        r0 = (img.shape[0] - side) // 2
        c0 = (img.shape[1] - side) // 2
        out.append((name, img[r0 : r0 + side, c0 : c0 + side].copy()))
    return out


def load_image_dir(directory) -> list[tuple[str, np.ndarray]]:
    """All PGMs of a directory as ``(stem, image)`` in name order."""
    from .imagecore import list_pgms

    return [(os.path.splitext(os.path.basename(p))[0], load_pgm(p)) for p in list_pgms(directory)]


# ---------------------------------------------------------------------------
# method registry


def method_config(name: str, sigma=None) -> DenoiseConfig:
    """Named denoiser: the four pipelines, three variants, and ``identity``."""
    if name in ("nlm", "lra_svd", "lpg_pca", "bm3d_lite", "identity"):
        return default_config(name, sigma)
    if name == "lra_svd_noboost":
        return default_config("lra_svd", sigma, boost=replace(default_config("lra_svd").boost, kind="none"))
    if name == "lpg_pca_1stage":
        return default_config("lpg_pca", sigma, two_stage=False)
    if name == "bm3d_lite_1stage":
        return default_config("bm3d_lite", sigma, two_stage=False)
    raise ValueError(f"unknown method {name!r}; valid: {', '.join(METHOD_NAMES)}")


METHOD_NAMES = (
    "nlm",
    "lra_svd",
    "lpg_pca",
    "bm3d_lite",
    "lra_svd_noboost",
    "lpg_pca_1stage",
    "bm3d_lite_1stage",
    "identity",
)
SEVEN_METHODS = METHOD_NAMES[:7]


# ---------------------------------------------------------------------------
# full-reference benchmark


@dataclass(frozen=True)
class BenchmarkPlan:
    """Images ``[(label, image)]``, noise levels and methods ``[name]``.

    Each method runs with the true sigma of the noise it is given.
    """

    images: list
    sigmas: tuple = DEFAULT_SIGMAS
    methods: tuple = ("bm3d_lite",)
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if not self.images or not self.sigmas or not self.methods:
            raise ValueError("images, sigmas and methods must be nonempty")
        for m in self.methods:
            method_config(m)

    @property
    def total_runs(self) -> int:
        return len(self.images) * len(self.sigmas) * len(self.methods)


@dataclass(frozen=True)
class BenchRecord:
    image_id: str
    sigma: float
    method: str
    psnr_db: float
    ssim: float
    seconds: float = field(default=0.0, compare=False)


@dataclass
class BenchmarkTable:
    records: list
    averages: list

    def lookup(self, image_id, sigma, method) -> BenchRecord:
        for r in self.records + self.averages:
            if (r.image_id, r.sigma, r.method) == (image_id, float(sigma), method):
                return r
        raise KeyError((image_id, sigma, method))


def benchmark_noisy(image, sigma: float, seed: int, image_index: int) -> np.ndarray:
    """The noisy input shared by every method for one (image, sigma)."""
    return add_awgn(image, NoiseSpec(sigma, derive_seed(seed, 3, image_index, int(round(sigma * 1000)))))


def run_benchmark(plan: BenchmarkPlan, progress: Callable | None = None) -> BenchmarkTable:
    """Every (image, sigma, method) run in plan order plus per-(sigma, method) averages."""
    records = []
    for i, (label, clean) in enumerate(plan.images):
        clean = as_image(clean)
        for sigma in plan.sigmas:
            noisy = benchmark_noisy(clean, sigma, plan.seed, i)
            for name in plan.methods:
                t0 = time.perf_counter()
                try:
                    out = denoise(noisy, method_config(name, sigma), threads=plan.threads)
                except Exception as exc:
                    raise BenchmarkError(f"{name} failed on image {label!r} at sigma={sigma}: {exc}") from exc
                rec = BenchRecord(label, float(sigma), name, psnr(clean, out), ssim(clean, out),
                                  time.perf_counter() - t0)
                records.append(rec)
                if progress is not None:
                    progress(rec)
    averages = []
    for sigma in plan.sigmas:
        for name in plan.methods:
            rs = [r for r in records if r.sigma == float(sigma) and r.method == name]
            averages.append(BenchRecord("Average", float(sigma), name, float(np.mean([r.psnr_db for r in rs])),
                                        float(np.mean([r.ssim for r in rs]))))
    return BenchmarkTable(records, averages)


def _fmt(v: float, digits: int) -> str:
    if v >= 1.7e308:
        return "inf"
    return f"{v:.{digits}f}"


def benchmark_csv(table: BenchmarkTable, methods=None) -> str:
    """Long layout: one row per run, then the Average rows."""
    buf = io.StringIO()
    buf.write("# noise: unclipped AWGN; columns: image,sigma,method,psnr_db,ssim; Average rows hold per-(sigma, method) means\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image", "sigma", "method", "psnr_db", "ssim"])
    for r in table.records + table.averages:
        w.writerow([r.image_id, f"{r.sigma:g}", r.method, _fmt(r.psnr_db, 4), _fmt(r.ssim, 6)])
    return buf.getvalue()


def benchmark_wide_csv(table: BenchmarkTable, sigma: float) -> str:
    """Image rows, ``<method>_psnr``/``<method>_ssim`` columns at one sigma, Average last."""
    methods = list(dict.fromkeys(r.method for r in table.records))
    images = list(dict.fromkeys(r.image_id for r in table.records)) + ["Average"]
    buf = io.StringIO()
    buf.write(f"# sigma={sigma:g}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image"] + [f"{m}_{k}" for m in methods for k in ("psnr", "ssim")])
    for img in images:
        row = [img]
        for m in methods:
            r = table.lookup(img, sigma, m)
            row += [_fmt(r.psnr_db, 2), _fmt(r.ssim, 4)]
        w.writerow(row)
    return buf.getvalue()


def sigma_averages_csv(table: BenchmarkTable) -> str:
    """Average PSNR/SSIM per (sigma, method): the data of a PSNR-vs-sigma plot."""
    buf = io.StringIO()
    buf.write("# columns: sigma,method,psnr_db,ssim\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sigma", "method", "psnr_db", "ssim"])
    for r in table.averages:
        w.writerow([f"{r.sigma:g}", r.method, _fmt(r.psnr_db, 4), _fmt(r.ssim, 6)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# no-reference metrics and the logistic protocol


@dataclass(frozen=True)
class NrMetricPlugin:
    name: str
    evaluate: Callable[[np.ndarray], float]


_LAPLACE = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def builtin_sharpness_proxy(image) -> float:
    """Variance of the 3x3 Laplacian response over the valid region."""
    img = as_image(image)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError("sharpness proxy needs at least a 3x3 image")
    resp = correlate(img, _LAPLACE, mode="constant")[1:-1, 1:-1]
    return float(np.var(resp))


METRICS = {"sharpness": NrMetricPlugin("sharpness", builtin_sharpness_proxy)}


def register_metric(plugin: NrMetricPlugin) -> None:
    METRICS[plugin.name] = plugin


def get_metric(name: str) -> NrMetricPlugin:
    try:
        return METRICS[name]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; registered: {', '.join(sorted(METRICS))}") from None


def logistic(s, params) -> np.ndarray:
    """``b1 + (b2 - b1) / (1 + exp(-(s - b3) / b4))``."""
    b1, b2, b3, b4 = params
    return b1 + (b2 - b1) * expit((np.asarray(s, dtype=np.float64) - b3) / b4)


@dataclass(frozen=True)
class LogisticFit:
    params: tuple
    residual_sse: float
    degenerate: bool = False

    def predict(self, scores) -> np.ndarray:
        if self.degenerate:
            return np.full(np.shape(scores), self.params[0], dtype=np.float64)
        return logistic(scores, self.params)


def _starts(z, q):
    qlo, qhi = float(q.min()), float(q.max())
    slope, intercept = np.polyfit(z, q, 1)
    lo, hi = (qlo, qhi) if slope >= 0 else (qhi, qlo)
    starts = []
    for orient in (1.0, -1.0):
        for b3 in np.quantile(z, (0.2, 0.4, 0.6, 0.8)):
            # saturating start spanning the data range
            b4 = orient * 0.5
            b1, b2 = (lo, hi) if orient > 0 else (hi, lo)
            starts.append((b1, b2, b3, b4))
            # near-linear start matching the least-squares line
            b4 = orient * 1e3
            amp = 4.0 * b4 * slope
            b1 = intercept + slope * b3 - amp / 2.0
            starts.append((b1, b1 + amp, b3, b4))
    return starts


def fit_logistic(scores, qualities) -> LogisticFit:
    """Least-squares 4-parameter logistic from 16 deterministic Nelder-Mead starts.

    Scores are standardized before fitting, so predictions do not depend on
    the offset or scale of the score axis.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    q = np.asarray(qualities, dtype=np.float64).ravel()
    if s.shape != q.shape:
        raise ValueError(f"length mismatch: {s.size} scores vs {q.size} qualities")
    if s.size < 5:
        raise ValueError("need at least 5 samples")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(q))):
        raise ValueError("scores and qualities must be finite")
    mu, sd = float(s.mean()), float(s.std())
    if sd == 0 or np.all(s == s[0]):
        qm = float(q.mean())
        return LogisticFit((qm, qm, float(s[0]), 1.0), float(np.sum((q - qm) ** 2)), degenerate=True)
    z = (s - mu) / sd
    qscale = float(q.std()) or 1.0

    def sse(p):
        if p[3] == 0:
            return np.inf
        r = logistic(z, p) - q
        return float(r @ r) / (qscale * qscale)

    best = None
    for p0 in _starts(z, q):
        res = minimize(sse, np.array(p0), method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 20000, "maxfev": 20000})
        if best is None or res.fun < best.fun:
            best = res
    b1, b2, b3, b4 = best.x
    params = (float(b1), float(b2), float(mu + sd * b3), float(sd * b4))
    r = logistic(s, params) - q
    return LogisticFit(params, float(r @ r))


@dataclass(frozen=True)
class CorrelationReport:
    cc: float
    sse: float
    rmse: float


def correlation_report(fit: LogisticFit, scores, qualities) -> CorrelationReport:
    """Pearson CC of fitted predictions vs qualities, with SSE and RMSE."""
    q = np.asarray(qualities, dtype=np.float64).ravel()
    pred = fit.predict(np.asarray(scores, dtype=np.float64).ravel())
    r = pred - q
    sse = float(r @ r)
    if np.all(pred == pred[0]) or np.all(q == q[0]):
        cc = 0.0
    else:
        cc = float(np.clip(np.corrcoef(pred, q)[0, 1], -1.0, 1.0))
    return CorrelationReport(cc, sse, float(np.sqrt(sse / q.size)))


def correlation_csv(reports: dict) -> str:
    """Metric rows with CC, SSE and RMSE columns."""
    buf = io.StringIO()
    buf.write("# columns: metric,CC,SSE,RMSE\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "CC", "SSE", "RMSE"])
    for name, rep in reports.items():
        w.writerow([name, f"{rep.cc:.4f}", f"{rep.sse:.6g}", f"{rep.rmse:.6g}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# raw Bayer chain
#
# Layout: green on the main diagonal of every 2x2 cell.
#   row 0: G R G R ...
#   row 1: B G B G ...

PATTERNS = ("grgb",)
_SITES = {"g1": (0, 0), "r": (0, 1), "b": (1, 0), "g2": (1, 1)}


@dataclass(frozen=True)
class BayerImage:
    mosaic: np.ndarray
    pattern: str = "grgb"

    def __post_init__(self):
        m = as_image(self.mosaic)
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown Bayer pattern {self.pattern!r}; supported: {', '.join(PATTERNS)}")
        if m.shape[0] % 2 or m.shape[1] % 2:
            raise ValueError(f"Bayer mosaic needs even dimensions, got {m.shape}")
        object.__setattr__(self, "mosaic", m)

    @property
    def height(self) -> int:
        return self.mosaic.shape[0]

    @property
    def width(self) -> int:
        return self.mosaic.shape[1]

    def plane(self, site: str) -> np.ndarray:
        dy, dx = _SITES[site]
        return self.mosaic[dy::2, dx::2].copy()

    def with_planes(self, planes: dict) -> BayerImage:
        m = self.mosaic.copy()
        for site, values in planes.items():
            dy, dx = _SITES[site]
            m[dy::2, dx::2] = values
        return BayerImage(m, self.pattern)

    @classmethod
    def from_rgb(cls, rgb) -> BayerImage:
        """Sample a full-color scene on the mosaic sites."""
        rgb = np.asarray(rgb, dtype=np.float64)
        m = rgb[..., 1].copy()
        m[0::2, 1::2] = rgb[0::2, 1::2, 0]
        m[1::2, 0::2] = rgb[1::2, 0::2, 2]
        return cls(m)


def load_raw(path) -> BayerImage:
    """16-bit PGM mosaic with a ``<path>.txt`` sidecar of ``key=value`` lines (``pattern=grgb``)."""
    sidecar = str(path) + ".txt"
    meta = {}
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    k, _, v = line.partition("=")
                    meta[k.strip().lower()] = v.strip()
    return BayerImage(load_pgm(path), meta.get("pattern", "grgb").lower())


def save_raw(raw: BayerImage, path) -> None:
    """Write the mosaic as a 16-bit PGM plus its ``pattern`` sidecar."""
    from .imagecore import save_pgm16

    save_pgm16(raw.mosaic, path)
    with open(str(path) + ".txt", "w") as fh:
        fh.write(f"pattern={raw.pattern}\n")


def _upsample2(a, axis: int, phase: int):
    """Double ``axis`` with native samples at ``phase + 2k``, Catmull-Rom midpoints elsewhere."""
    a = np.moveaxis(a, axis, 0)
    L = a.shape[0]
    pad = np.pad(a, [(2, 2)] + [(0, 0)] * (a.ndim - 1), mode="symmetric")
    # mids[j] lies halfway between native samples j-1 and j, for j = 0..L
    p0, p1, p2, p3 = pad[0 : L + 1], pad[1 : L + 2], pad[2 : L + 3], pad[3 : L + 4]
    mids = (p1 + p2) / 2.0 + ((p1 - p0) + (p2 - p3)) / 16.0
    out = np.empty((2 * L,) + a.shape[1:])
    out[phase::2] = a
    if phase == 0:
        out[1::2] = mids[1:]
    else:
        out[0::2] = mids[:-1]
    return np.moveaxis(out, 0, axis)


def _plane_full(plane, row_phase, col_phase):
    return _upsample2(_upsample2(plane, 1, col_phase), 0, row_phase)


def demosaic_bicubic_grgb(raw: BayerImage) -> np.ndarray:
    """``(H, W, 3)`` RGB by separable Catmull-Rom interpolation of each color's samples.

    Green averages the estimates from its two diagonal sub-lattices. Native
    samples are copied through unchanged.
    """
    if not isinstance(raw, BayerImage):
        raw = BayerImage(raw)
    rgb = np.empty((raw.height, raw.width, 3))
    rgb[..., 0] = _plane_full(raw.plane("r"), 0, 1)
    rgb[..., 2] = _plane_full(raw.plane("b"), 1, 0)
    g1 = _plane_full(raw.plane("g1"), 0, 0)
    g2 = _plane_full(raw.plane("g2"), 1, 1)
    rgb[..., 1] = (g1 + g2) / 2.0
    m = raw.mosaic
    rgb[0::2, 1::2, 0] = m[0::2, 1::2]
    rgb[1::2, 0::2, 2] = m[1::2, 0::2]
    rgb[0::2, 0::2, 1] = m[0::2, 0::2]
    rgb[1::2, 1::2, 1] = m[1::2, 1::2]
    return rgb


def white_balance_gains(rgb) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    means = rgb.reshape(-1, 3).mean(axis=0)
    if np.any(means == 0):
        raise ValueError(f"gray-world white balance undefined for a zero-mean channel (means {means})")
    return means[1] / means


def gray_world_white_balance(rgb) -> np.ndarray:
    """Scale R and B so every channel mean equals the green mean."""
    gains = white_balance_gains(rgb)
    gains[1] = 1.0
    return np.asarray(rgb, dtype=np.float64) * gains


def luminance(rgb) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ LUMA


def denoise_bayer(raw: BayerImage, config: DenoiseConfig, threads=None) -> BayerImage:
    """Denoise each of the four color planes as an independent grayscale image."""
    return raw.with_planes({site: denoise(raw.plane(site), config, threads) for site in _SITES})


def isp_chain(raw: BayerImage, config: DenoiseConfig, threads=None) -> np.ndarray:
    """Denoise, demosaic, white-balance."""
    return gray_world_white_balance(demosaic_bicubic_grgb(denoise_bayer(raw, config, threads)))


@dataclass
class NrTable:
    rows: list
    columns: list
    cells: list  # rows x columns, None for a missing value

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# rows: raw images; columns: methods; '-' marks a missing value\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image"] + list(self.columns))
        for name, row in zip(self.rows, self.cells):
            w.writerow([name] + ["-" if v is None else f"{v:.6g}" for v in row])
        return buf.getvalue()


def run_nr_evaluation(raws, methods, metric: NrMetricPlugin, threads=None) -> NrTable:
    """Score the luminance of every (raw, method) ISP output with ``metric``.

    ``raws`` is ``[(label, BayerImage)]``, ``methods`` a list of method names.
    A metric failure leaves a missing cell.
    """
    rows, cells = [], []
    for label, raw in raws:
        row = []
        for name in methods:
            out = isp_chain(raw, method_config(name), threads)
            try:
                value = float(metric.evaluate(luminance(out)))
            except Exception:
                value = None
            if value is not None and not np.isfinite(value):
                value = None
            row.append(value)
        rows.append(label)
        cells.append(row)
    return NrTable(rows, list(methods), cells)
