"""Group denoisers with adaptive bases: truncated SVD (LRA-SVD) and PCA (LPG-PCA)."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..grouping import (
    GroupingConfig,
    center_offset_index,
    grid_distances,
    patch_matrix,
    search_offsets,
    select_top_m,
)
from ..imagecore import as_image
from ..shrinkage import noise_tau_sq, select_rank, soft_threshold_sv
from .aggregate import (
    Accumulator,
    aggregate_finalize,
    deposit_patches,
    reference_grid,
    run_row_blocks,
)
from .config import DenoiseConfig


def match_top_m(image, rows, cols, grouping: GroupingConfig):
    """Top-m block matching for a grid of references.

    Returns ``(refs, centers, dist)`` with ``refs`` ``(N, 2)``, group
    centers ``(N, m, 2)`` and distances ``(N, m)``, groups sorted by
    (distance, raster order).
    """
    d = grid_distances(image, rows, cols, grouping)
    d = d.reshape(-1, d.shape[-1])
    refs = np.stack(np.meshgrid(rows, cols, indexing="ij"), axis=-1).reshape(-1, 2)
    m = grouping.top_m
    n_valid = np.isfinite(d).sum(axis=1).min()
    if m > n_valid:
        raise ValueError(f"top_m={m} exceeds the {n_valid} candidates available at the border")
    idx = select_top_m(d, m, center_offset_index(grouping.search_radius))
    offsets = search_offsets(grouping.search_radius)
    centers = refs[:, None, :] + offsets[idx]
    return refs, centers, np.take_along_axis(d, idx, axis=1)


def gather(image, centers, side):
    """``(N, m, n)`` stack of patch rows for ``(N, m, 2)`` centers."""
    N, m, _ = centers.shape
    return patch_matrix(image, centers.reshape(-1, 2), side).reshape(N, m, side * side)


def _gram_spectrum(Xc):
    """Left singular vectors and singular values of each ``Xc^T`` in the batch.

    ``Xc`` is ``(N, m, n)`` (patches as rows). Uses the ``n x n`` Gram matrix,
    which is cheaper than a batched SVD when ``n < m``.
    """
    G = np.matmul(Xc.transpose(0, 2, 1), Xc)
    G = 0.5 * (G + G.transpose(0, 2, 1))
    lam, U = np.linalg.eigh(G)
    lam = lam[:, ::-1]
    U = np.ascontiguousarray(U[:, :, ::-1])
    return U, np.sqrt(np.maximum(lam, 0.0))


def svd_group_estimate(X, sigma: float, shrink, n_rank: int | None = None):
    """Centered low-rank estimate of every group in a ``(N, m, n)`` batch.

    The rank is chosen by the tail-energy rule (``rank_select``) or the
    singular values are soft-thresholded (``soft_sv``). Groups whose rank is
    full are returned untouched.
    """
    N, m, n = X.shape
    mean = X.mean(axis=1, keepdims=True)
    Xc = X - mean
    k = min(n, m)
    if m < n:
        # spectrum via the m x m Gram matrix, mapped back through Xc^T
        Gm = np.matmul(Xc, Xc.transpose(0, 2, 1))
        Gm = 0.5 * (Gm + Gm.transpose(0, 2, 1))
        lam, V = np.linalg.eigh(Gm)
        lam = lam[:, ::-1]
        V = np.ascontiguousarray(V[:, :, ::-1])
        s = np.sqrt(np.maximum(lam, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            U = np.matmul(Xc.transpose(0, 2, 1), V) / np.where(s > 0, s, 1.0)[:, None, :]
    else:
        U, s = _gram_spectrum(Xc)
    U = np.ascontiguousarray(U[:, :, :k])
    s = s[:, :k]
    if shrink.kind == "soft_sv":
        tau = shrink.soft_coeff * sigma * np.sqrt(m)
        s_new = soft_threshold_sv(s, tau)
        gain = np.where(s > 0, s_new / np.where(s > 0, s, 1.0), 0.0)
        full = np.zeros(N, dtype=bool)
    else:
        if n_rank is None:
            r = select_rank(s, noise_tau_sq(n, m, sigma, shrink.tau_sq_coeff))
        else:
            r = np.full(N, n_rank)
        r = np.atleast_1d(r)
        gain = (np.arange(k)[None, :] < r[:, None]).astype(np.float64)
        full = r >= k
    # projection of each row onto the kept left singular directions
    proj = np.matmul(U * gain[:, None, :], U.transpose(0, 2, 1))
    est = np.matmul(Xc, proj) + mean
    est[full] = X[full]
    return est


def lra_svd_once(image, config: DenoiseConfig, sigma: float, threads=None) -> np.ndarray:
    """One pass of the grouped truncated-SVD denoiser (no boosting)."""
    img = as_image(image)
    g = config.grouping
    if g.top_m is None:
        raise ValueError("lra_svd needs top_m selection")
    rows = reference_grid(img.shape[0], config.step)
    cols = reference_grid(img.shape[1], config.step)

    def work(block):
        acc = Accumulator(img.shape)
        _, centers, _ = match_top_m(img, block, cols, g)
        X = gather(img, centers, g.patch_side)
        est = svd_group_estimate(X, sigma, config.shrink)
        deposit_patches(acc, centers.reshape(-1, 2), est.reshape(-1, g.n), g.patch_side)
        return acc

    return aggregate_finalize(run_row_blocks(work, rows, img.shape, threads))


# ---------------------------------------------------------------------------
# LPG-PCA


def lpg_threshold(config: DenoiseConfig, sigma: float) -> float:
    n = config.grouping.n
    return config.lpg_theta_noise * n * sigma * sigma + config.lpg_theta_floor * n


def pca_wiener_estimate(X, mask, sigma: float):
    """Eigen-domain Wiener shrinkage of masked groups.

    ``X`` is ``(N, K, n)`` candidate patches, ``mask`` ``(N, K)`` the
    selected members. Signal power per eigen-mode is ``max(lambda - s^2, 0)``.
    """
    w = mask.astype(np.float64)[:, :, None]
    m = w.sum(axis=1, keepdims=True)
    Xw = X * w
    mean = Xw.sum(axis=1, keepdims=True) / m
    cov = np.matmul(X.transpose(0, 2, 1), Xw) / m - np.matmul(mean.transpose(0, 2, 1), mean)
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    lam, phi = np.linalg.eigh(cov)
    noise = sigma * sigma
    signal = np.maximum(lam - noise, 0.0)
    den = signal + noise
    gain = np.where(den > 0, signal / np.where(den > 0, den, 1.0), 0.0)
    gain[lam <= 0] = 0.0
    # exact passthrough when nothing is shrunk
    keep_all = np.all(gain == 1.0, axis=1) | (m[:, 0, 0] == 1)
    filt = np.matmul(phi * gain[:, None, :], phi.transpose(0, 2, 1))
    # (x - mean) F + mean, with the mean term folded into one offset per group
    est = np.matmul(X, filt) + (mean - np.matmul(mean, filt))
    est[keep_all] = X[keep_all]
    return est


def lpg_pca_stage(image, guide, config: DenoiseConfig, sigma: float, threads=None) -> np.ndarray:
    """One LPG-PCA pass: group on ``guide``, filter ``image``."""
    img = as_image(image)
    guide = as_image(guide)
    g = replace(config.grouping, top_m=None, threshold=lpg_threshold(config, sigma))
    rows = reference_grid(img.shape[0], config.step)
    cols = reference_grid(img.shape[1], config.step)
    offsets = search_offsets(g.search_radius)

    def work(block):
        acc = Accumulator(img.shape)
        d = grid_distances(guide, block, cols, g)
        d = d.reshape(-1, d.shape[-1])
        refs = np.stack(np.meshgrid(block, cols, indexing="ij"), axis=-1).reshape(-1, 2)
        mask = d <= g.threshold
        mask[:, center_offset_index(g.search_radius)] = True
        centers = refs[:, None, :] + offsets[None, :, :]
        centers_c = np.clip(centers, 0, np.array(img.shape) - 1)
        X = gather(img, centers_c, g.patch_side)
        est = pca_wiener_estimate(X, mask, sigma)
        sel = mask.ravel()
        deposit_patches(acc, centers_c.reshape(-1, 2)[sel], est.reshape(-1, g.n)[sel], g.patch_side)
        return acc

    return aggregate_finalize(run_row_blocks(work, rows, img.shape, threads))


def lpg_pca_denoise(image, config: DenoiseConfig, sigma: float, threads=None, stages=None):
    """Two-stage LPG-PCA; ``stages=1`` stops after the first stage."""
    img = as_image(image)
    out = lpg_pca_stage(img, img, config, sigma, threads)
    if stages is None:
        stages = 2 if config.two_stage else 1
    if stages >= 2:
        sigma2 = np.sqrt(config.stage2_coeff) * sigma
        out = lpg_pca_stage(out, out, config, sigma2, threads)
    return out
