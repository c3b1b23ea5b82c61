"""Patch-similarity, jitter and sparsity statistics over image sets.

Every experiment returns a list of :class:`ExperimentRecord`; write them with
:func:`write_records`. Experiments are pure functions of their inputs and the
seed: noise and patch sampling are derived from ``(seed, image index, sigma)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from .grouping import (
    GroupingConfig,
    candidate_distances,
    count_similar_map,
    patch_complexity,
    patch_matrix,
    select_top_m,
    similarity_threshold_map,
)
from .imagecore import NoiseSpec, add_awgn, as_image, derive_seed, noise_rng, psnr_from_mse
from .pipelines.aggregate import map_ordered
from .shrinkage import noise_tau_sq, select_rank

VALUE_FIELDS = (
    "count",
    "frequency",
    "threshold",
    "complexity",
    "psnr_db",
    "retention_pct",
    "drop_db",
    "rank",
    "atom_energy",
)
CSV_HEADER = ("experiment_id", "image_id", "sigma", "index", "seed") + VALUE_FIELDS
SAMPLE_CHUNK = 64


@dataclass(frozen=True)
class ExperimentRecord:
    experiment_id: str
    image_id: str
    sigma: float
    index: str
    seed: int
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.values) - set(VALUE_FIELDS)
        if unknown:
            raise ValueError(f"unknown value fields {sorted(unknown)}")


@dataclass(frozen=True)
class LabConfig:
    """Grouping geometry and sampling plan shared by the experiments.

    ``top_m`` is the group size ``m``; ``tau_sq_coeff`` scales the rank-rule
    threshold ``c * n * m * sigma^2``.
    """

    patch_side: int = 5
    search_radius: int = 4
    top_m: int = 15
    n_patches: int = 500
    tau_sq_coeff: float = 1.0
    seed: int = 0
    threads: int | None = None

    @property
    def grouping(self) -> GroupingConfig:
        return GroupingConfig(patch_side=self.patch_side, search_radius=self.search_radius, top_m=self.top_m)


def sparsity_config(**overrides) -> LabConfig:
    """Defaults for the sparsity experiments: 9x9 patches in a 21x21 window."""
    base = dict(patch_side=9, search_radius=10, top_m=30)
    base.update(overrides)
    return LabConfig(**base)


def _named(images):
    if isinstance(images, dict):
        return [(str(k), as_image(v)) for k, v in images.items()]
    if isinstance(images, np.ndarray) and images.ndim == 2:
        images = [images]
    out = []
    for i, item in enumerate(images):
        if isinstance(item, tuple):
            out.append((str(item[0]), as_image(item[1])))
        else:
            out.append((f"img{i}", as_image(item)))
    if not out:
        raise ValueError("at least one image is required")
    return out


def noisy_version(image, sigma: float, seed: int, image_index: int) -> np.ndarray:
    """The noisy copy every experiment uses for this (image, sigma, seed)."""
    if sigma == 0:
        return as_image(image).copy()
    key = int(round(sigma * 1000))
    return add_awgn(image, NoiseSpec(sigma, derive_seed(seed, 1, image_index, key)))


def sample_centers(shape, n: int, margin: int, seed: int, image_index: int) -> np.ndarray:
    """``n`` distinct centers at least ``margin`` pixels from every border."""
    H, W = shape
    h, w = H - 2 * margin, W - 2 * margin
    if h <= 0 or w <= 0 or n > h * w:
        raise ValueError(f"cannot sample {n} patches from {shape} with margin {margin}")
    rng = noise_rng(derive_seed(seed, 2, image_index))
    flat = np.sort(rng.choice(h * w, size=n, replace=False))
    return np.stack([flat // w + margin, flat % w + margin], axis=1)


def split_total(n: int, k: int) -> list[int]:
    """Split ``n`` samples over ``k`` images, earlier images taking the remainder."""
    return [n // k + (i < n % k) for i in range(k)]


def _chunks(n: int):
    return [np.arange(s, min(s + SAMPLE_CHUNK, n)) for s in range(0, n, SAMPLE_CHUNK)]


def _per_sample(work, n: int, threads):
    parts = map_ordered(work, _chunks(n), threads)
    return [rec for part in parts for rec in part]


# ---------------------------------------------------------------------------
# group helpers


def top_m_group(image, center, grouping: GroupingConfig):
    """Top-m candidate centers ``(m, 2)`` and the m-th smallest distance."""
    cand, dist = candidate_distances(image, center, grouping)
    ref = int(np.flatnonzero((cand[:, 0] == center[0]) & (cand[:, 1] == center[1]))[0])
    if grouping.top_m > len(cand):
        raise ValueError(f"top_m={grouping.top_m} exceeds the {len(cand)} candidates")
    idx = select_top_m(dist, grouping.top_m, ref)
    return cand[idx], float(np.sort(dist)[grouping.top_m - 1])


def group_spectrum(X):
    """Centered SVD of a ``(m, n)`` group (patches as rows).

    Returns ``(mean, u, s, vt)`` with ``Xc = u diag(s) vt``.
    """
    mean = X.mean(axis=0)
    u, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    return mean, u, s, vt


def rank_estimate(X, row: int, rank: int, spectrum=None) -> np.ndarray:
    """Row ``row`` of the centered rank-``rank`` approximation of ``X``.

    Ranks at or above the number of singular values return the row itself.
    """
    mean, u, s, vt = spectrum if spectrum is not None else group_spectrum(X)
    if rank >= len(s):
        return X[row].copy()
    return mean + (u[row, :rank] * s[:rank]) @ vt[:rank]


def group_denoise_reference(X, row: int, sigma: float, c: float = 1.0) -> np.ndarray:
    """Centered SVD with the tail-energy rank rule, reference row only."""
    m, n = X.shape
    spec = group_spectrum(X)
    r = int(select_rank(spec[2], noise_tau_sq(n, m, sigma, c)))
    return rank_estimate(X, row, r, spec)


def patch_psnr(clean, estimate) -> float:
    """PSNR between two vectorized patches (sentinel when identical)."""
    diff = np.asarray(clean, dtype=np.float64) - np.asarray(estimate, dtype=np.float64)
    return psnr_from_mse(float(np.mean(diff * diff)))


def _ref_row(centers, center) -> int:
    return int(np.flatnonzero((centers[:, 0] == center[0]) & (centers[:, 1] == center[1]))[0])


def rank_correlation(x, y) -> float:
    """Spearman rank correlation; 0 when either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if len(x) < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    return float(spearmanr(x, y)[0])


# ---------------------------------------------------------------------------
# similar-patch statistics


def exp_similar_patch_histogram(image, theta_list, config: LabConfig | None = None, image_id="img0"):
    """Histogram over pixels of the number of similar candidates per theta.

    One record per (theta, count) with the raw pixel frequency.
    """
    config = config or LabConfig()
    img = as_image(image)
    counts = count_similar_map(img, theta_list, config.grouping)
    max_count = config.grouping.candidates - 1
    out = []
    for theta, cmap in zip(theta_list, counts):
        freq = np.bincount(cmap.ravel(), minlength=max_count + 1)
        for c, f in enumerate(freq):
            out.append(
                ExperimentRecord(
                    "similar_patch_histogram", image_id, 0.0, f"theta={float(theta):g}/count={c}",
                    config.seed, {"threshold": float(theta), "count": float(c), "frequency": float(f)},
                )
            )
    return out


def exp_similarity_threshold_distribution(image, sigma_list, m: int = 15, config: LabConfig | None = None,
                                          image_id="img0", image_index: int = 0):
    """Similarity threshold at every pixel of each noisy copy; one record per pixel."""
    config = config or LabConfig()
    img = as_image(image)
    out = []
    for sigma in sigma_list:
        noisy = noisy_version(img, sigma, config.seed, image_index)
        tmap = similarity_threshold_map(noisy, m, config.grouping)
        for p, t in enumerate(tmap.ravel()):
            out.append(
                ExperimentRecord("similarity_threshold", image_id, float(sigma), str(p), config.seed,
                                 {"threshold": float(t)})
            )
    return out


def exp_complexity_vs_threshold(images, n_patches: int = 500, sigma_list=(0, 15, 40),
                                config: LabConfig | None = None):
    """(complexity of the clean patch, similarity threshold on the noisy image) per sample and sigma.

    ``n_patches`` is the total over all images.
    """
    config = config or LabConfig()
    g = config.grouping
    named = _named(images)
    out = []
    for i, ((name, img), n_i) in enumerate(zip(named, split_total(n_patches, len(named)))):
        centers = sample_centers(img.shape, n_i, config.patch_side, config.seed, i)
        clean = patch_matrix(img, centers, config.patch_side)
        cx = [patch_complexity(p) for p in clean]
        for sigma in sigma_list:
            noisy = noisy_version(img, sigma, config.seed, i)

            def work(chunk, noisy=noisy, sigma=sigma):
                recs = []
                for j in chunk:
                    _, t = top_m_group(noisy, centers[j], g)
                    recs.append(ExperimentRecord("complexity_vs_threshold", name, float(sigma), str(j),
                                                 config.seed, {"complexity": cx[j], "threshold": t}))
                return recs

            out.extend(_per_sample(work, n_i, config.threads))
    return out


def exp_psnr_vs_threshold(images, n_patches: int = 500, sigma: float = 15, config: LabConfig | None = None):
    """Reference-patch PSNR after group denoising (no aggregation) against the group threshold.

    ``n_patches`` samples are drawn from every image.
    """
    config = config or LabConfig()
    g = config.grouping
    out = []
    for i, (name, img) in enumerate(_named(images)):
        centers = sample_centers(img.shape, n_patches, config.patch_side, config.seed, i)
        noisy = noisy_version(img, sigma, config.seed, i)

        def work(chunk, img=img, noisy=noisy, centers=centers, name=name):
            recs = []
            for j in chunk:
                members, t = top_m_group(noisy, centers[j], g)
                X = patch_matrix(noisy, members, config.patch_side)
                est = group_denoise_reference(X, _ref_row(members, centers[j]), sigma, config.tau_sq_coeff)
                clean = patch_matrix(img, centers[j : j + 1], config.patch_side)[0]
                recs.append(ExperimentRecord("psnr_vs_threshold", name, float(sigma), str(j), config.seed,
                                             {"threshold": t, "psnr_db": patch_psnr(clean, est)}))
            return recs

        out.extend(_per_sample(work, n_patches, config.threads))
    return out


# ---------------------------------------------------------------------------
# jitter


def _jitter_records(images, n_patches, sigma_list, config: LabConfig, kind: str):
    g = config.grouping
    m = config.top_m
    named = _named(images)
    out = []
    for i, ((name, img), n_i) in enumerate(zip(named, split_total(n_patches, len(named)))):
        centers = sample_centers(img.shape, n_i, config.patch_side, config.seed, i)
        oracle = [top_m_group(img, c, g)[0] for c in centers]
        for sigma in sigma_list:
            noisy = noisy_version(img, sigma, config.seed, i)

            def work(chunk, noisy=noisy, sigma=sigma, img=img, name=name):
                recs = []
                for j in chunk:
                    center = centers[j]
                    members, _ = top_m_group(noisy, center, g)
                    if kind == "retention":
                        ids = {tuple(p) for p in members}
                        common = len(ids & {tuple(p) for p in oracle[j]})
                        vals = {"retention_pct": 100.0 * common / m}
                    else:
                        clean = patch_matrix(img, center[None], config.patch_side)[0]
                        psnrs = []
                        for sel in (members, oracle[j]):
                            X = patch_matrix(noisy, sel, config.patch_side)
                            est = group_denoise_reference(X, _ref_row(sel, center), sigma, config.tau_sq_coeff)
                            psnrs.append(patch_psnr(clean, est))
                        vals = {"drop_db": 0.0 if psnrs[0] == psnrs[1] else psnrs[0] - psnrs[1]}
                    recs.append(ExperimentRecord(f"jitter_{kind}", name, float(sigma), str(j), config.seed, vals))
                return recs

            out.extend(_per_sample(work, n_i, config.threads))
    return out


def exp_jitter_retention(images, n_patches: int = 100, m: int = 15, sigma_list=(0, 5, 10, 15, 25, 40),
                         config: LabConfig | None = None):
    """Percentage of the clean top-m set (by center coordinates) still selected under noise.

    ``n_patches`` is the total over all images.
    """
    config = replace(config or LabConfig(), top_m=m)
    return _jitter_records(images, n_patches, sigma_list, config, "retention")


def exp_jitter_psnr_drop(images, n_patches: int = 100, m: int = 15, sigma_list=(0, 5, 10, 15, 25, 40),
                         config: LabConfig | None = None):
    """PSNR with the noisy-selected group minus PSNR with the clean-selected coordinates.

    ``n_patches`` is the total over all images.
    """
    config = replace(config or LabConfig(), top_m=m)
    return _jitter_records(images, n_patches, sigma_list, config, "psnr_drop")


# ---------------------------------------------------------------------------
# sparsity


def rank_curve(X, row: int, clean_row):
    """PSNR of the reference row for ranks ``0..k`` and the atom energies."""
    spec = group_spectrum(X)
    s = spec[2]
    curve = np.array([patch_psnr(clean_row, rank_estimate(X, row, r, spec)) for r in range(len(s) + 1)])
    return curve, s * s


def _sparsity_groups(images, n_patches, sigma, config: LabConfig, emit):
    g = config.grouping
    out = []
    for i, (name, img) in enumerate(_named(images)):
        centers = sample_centers(img.shape, n_patches, config.patch_side, config.seed, i)
        noisy = noisy_version(img, sigma, config.seed, i)

        def work(chunk, img=img, noisy=noisy, centers=centers, name=name):
            recs = []
            for j in chunk:
                members, t = top_m_group(noisy, centers[j], g)
                X = patch_matrix(noisy, members, config.patch_side)
                clean = patch_matrix(img, centers[j : j + 1], config.patch_side)[0]
                curve, energy = rank_curve(X, _ref_row(members, centers[j]), clean)
                recs.extend(emit(name, j, t, curve, energy))
            return recs

        out.extend(_per_sample(work, n_patches, config.threads))
    return out


def exp_sparsity_rank_curves(images, n_patches: int = 500, sigma: float = 15, patch_side: int = 9,
                             config: LabConfig | None = None):
    """Per group: reference-patch PSNR at every rank and the energy of every atom.

    Record ``index`` is ``"<sample>/r=<rank>"``; rank 0 is the mean-only
    estimate and carries no atom energy.
    """
    config = replace(config or sparsity_config(), patch_side=patch_side)

    def emit(name, j, t, curve, energy):
        recs = []
        for r, p in enumerate(curve):
            vals = {"rank": float(r), "psnr_db": float(p)}
            if r > 0:
                vals["atom_energy"] = float(energy[r - 1])
            recs.append(ExperimentRecord("sparsity_rank_curve", name, float(sigma), f"{j}/r={r}", config.seed, vals))
        return recs

    return _sparsity_groups(images, n_patches, sigma, config, emit)


def exp_sparsity_vs_threshold(images, sigma_list=(15, 30, 40), config: LabConfig | None = None,
                              n_patches: int | None = None):
    """Per group and sigma: similarity threshold and the PSNR-optimal rank (ties go to the lower rank)."""
    config = config or sparsity_config()
    n_patches = config.n_patches if n_patches is None else n_patches
    out = []
    for sigma in sigma_list:

        def emit(name, j, t, curve, energy, sigma=sigma):
            vals = {"threshold": t, "rank": float(np.argmax(curve))}
            return [ExperimentRecord("sparsity_vs_threshold", name, float(sigma), str(j), config.seed, vals)]

        out.extend(_sparsity_groups(images, n_patches, sigma, config, emit))
    return out


# ---------------------------------------------------------------------------
# output


def format_value(v) -> str:
    """Six significant digits; infinities as ``inf``."""
    if v is None:
        return ""
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v >= 1.7e308:
        return "inf"
    return f"{v:.6g}"


def records_to_csv(records) -> str:
    buf = io.StringIO()
    buf.write("# patchlab experiment records; columns: " + ",".join(CSV_HEADER) + "\n")
    if any("complexity" in r.values for r in records):
        buf.write("# complexity: sample standard deviation of the clean patch (stand-in measure)\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        row = [rec.experiment_id, rec.image_id, format_value(rec.sigma), rec.index, str(rec.seed)]
        row += [format_value(rec.values.get(k)) for k in VALUE_FIELDS]
        w.writerow(row)
    return buf.getvalue()


def write_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(records_to_csv(records))


def read_records(path) -> list[ExperimentRecord]:
    """Inverse of :func:`write_records` (values as floats)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    out = []
    for row in rows:
        vals = {k: float(row[k]) for k in VALUE_FIELDS if row[k] != ""}
        out.append(ExperimentRecord(row["experiment_id"], row["image_id"], float(row["sigma"]), row["index"],
                                    int(row["seed"]), vals))
    return out


def field_values(records, name: str, sigma=None) -> np.ndarray:
    """Values of one field, optionally restricted to one sigma, in record order."""
    return np.array([r.values[name] for r in records if name in r.values and (sigma is None or r.sigma == sigma)])
