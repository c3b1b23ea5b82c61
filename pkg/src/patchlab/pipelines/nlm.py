"""Non-local means restricted to a search window."""

from __future__ import annotations

import numpy as np

from ..grouping import (
    candidate_distances,
    gaussian_patch_kernel,
    iter_offset_distances,
)
from ..imagecore import as_image
from .aggregate import ROW_BLOCK, map_ordered, row_blocks
from .config import DenoiseConfig


# with the kernel-normalized distance a pure-noise match scores about 2 sigma^2;
# 0.3 keeps dissimilar texture from being averaged in at low sigma
NLM_H_COEFF = 0.3


def nlm_bandwidth(config: DenoiseConfig, sigma: float) -> float:
    if config.nlm_h is not None:
        return config.nlm_h
    return NLM_H_COEFF * sigma * np.sqrt(config.grouping.n)


def _kernel(dist, h):
    if h == 0:
        # zero-bandwidth limit: only exact matches contribute
        return (dist == 0).astype(np.float64)
    return np.exp(-dist / (h * h))


def nlm_weights(image, center, config: DenoiseConfig, sigma: float):
    """Normalized weights of every in-window pixel for one output pixel.

    Returns ``(centers, weights)``; this is the per-pixel reference form of
    what :func:`nlm_denoise` computes for the whole image.
    """
    h = nlm_bandwidth(config, sigma)
    cand, dist = candidate_distances(image, center, config.grouping, kernel_sigma=config.nlm_kernel_sigma)
    w = _kernel(dist, h)
    return cand, w / w.sum()


def _nlm_rows(img, rows, config, h, kernel):
    g = config.grouping
    H, W = img.shape
    cols = np.arange(W)
    r = g.search_radius
    padded = np.pad(img, r, mode="reflect")
    num = np.zeros((len(rows), W))
    den = np.zeros((len(rows), W))
    for _, dy, dx, dist, valid in iter_offset_distances(img, rows, cols, g.patch_side, r, kernel):
        w = _kernel(dist, h) * valid
        num += w * padded[rows + r + dy][:, r + dx : r + dx + W]
        den += w
    return num / den


def nlm_denoise(image, config: DenoiseConfig, sigma: float, threads=None) -> np.ndarray:
    """Weighted average over the search window with Gaussian-weighted patch distances."""
    img = as_image(image)
    h = nlm_bandwidth(config, sigma)
    kernel = gaussian_patch_kernel(config.grouping.patch_side, config.nlm_kernel_sigma)
    rows = np.arange(img.shape[0])
    out = np.empty_like(img)
    blocks = row_blocks(rows, 4 * ROW_BLOCK)
    parts = map_ordered(lambda b: _nlm_rows(img, b, config, h, kernel), blocks, threads)
    for block, values in zip(blocks, parts):
        out[block] = values
    return out
