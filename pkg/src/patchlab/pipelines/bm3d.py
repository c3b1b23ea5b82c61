"""BM3D-lite: separable 3D transform (2D DCT x 1D Haar) collaborative filtering.

Stage 1 hard-thresholds the 3D spectrum of each group of noisy patches.
Stage 2 regroups on the stage-1 estimate and applies empirical Wiener
weights (stage-1 spectrum as signal power, ``sigma^2`` as noise power) to
the noisy spectrum.
"""

from __future__ import annotations

import numpy as np

from ..imagecore import as_image
from ..shrinkage import hard_threshold, wiener_weights
from ..transforms import dct2_matrix, haar_matrix, next_pow2, reflect_pad_indices
from .aggregate import (
    Accumulator,
    aggregate_finalize,
    deposit_patches,
    reference_grid,
    run_row_blocks,
)
from .config import DenoiseConfig
from .lowrank import gather, match_top_m


class Transform3D:
    """Forward/inverse 3D transform for ``(N, m, n)`` groups of patch rows."""

    def __init__(self, side: int, m: int):
        self.m = m
        self.length = next_pow2(m)
        self.pad = reflect_pad_indices(m)
        self.dct = dct2_matrix(side)
        self.haar = haar_matrix(self.length)

    def forward(self, X):
        Xp = X[:, self.pad, :]
        return np.matmul(self.haar, np.matmul(Xp, self.dct.T))

    def inverse(self, C):
        Xp = np.matmul(self.haar.T, np.matmul(C, self.dct))
        return Xp[:, : self.m, :]


def bm3d_stage1(noisy, config: DenoiseConfig, sigma: float, threads=None) -> np.ndarray:
    img = as_image(noisy)
    g = config.grouping
    if g.top_m is None:
        raise ValueError("bm3d_lite needs top_m selection")
    T = Transform3D(g.patch_side, g.top_m)
    lam = config.shrink.lambda_ * sigma
    rows = reference_grid(img.shape[0], config.step)
    cols = reference_grid(img.shape[1], config.step)

    def work(block):
        acc = Accumulator(img.shape)
        _, centers, _ = match_top_m(img, block, cols, g)
        X = gather(img, centers, g.patch_side)
        C = hard_threshold(T.forward(X), lam)
        kept = np.count_nonzero(C.reshape(len(C), -1), axis=1)
        est = T.inverse(C)
        w = np.repeat(1.0 / (1.0 + kept), g.top_m)
        deposit_patches(acc, centers.reshape(-1, 2), est.reshape(-1, g.n), g.patch_side, w)
        return acc

    return aggregate_finalize(run_row_blocks(work, rows, img.shape, threads))


def bm3d_stage2(noisy, basic, config: DenoiseConfig, sigma: float, threads=None) -> np.ndarray:
    img = as_image(noisy)
    basic = as_image(basic)
    g = config.stage2_grouping or config.grouping
    if g.top_m is None:
        raise ValueError("bm3d_lite needs top_m selection")
    T = Transform3D(g.patch_side, g.top_m)
    rows = reference_grid(img.shape[0], config.step)
    cols = reference_grid(img.shape[1], config.step)
    noise = sigma * sigma

    def work(block):
        acc = Accumulator(img.shape)
        _, centers, _ = match_top_m(basic, block, cols, g)
        Cb = T.forward(gather(basic, centers, g.patch_side))
        Cn = T.forward(gather(img, centers, g.patch_side))
        w = wiener_weights(Cb * Cb, noise)
        est = T.inverse(w * Cn)
        energy = np.sum(w.reshape(len(w), -1) ** 2, axis=1)
        weights = np.repeat(1.0 / (1.0 + energy), g.top_m)
        deposit_patches(acc, centers.reshape(-1, 2), est.reshape(-1, g.n), g.patch_side, weights)
        return acc

    return aggregate_finalize(run_row_blocks(work, rows, img.shape, threads))


def bm3d_lite_denoise(image, config: DenoiseConfig, sigma: float, threads=None, stages=None):
    """Run stage 1 and, unless disabled, stage 2."""
    basic = bm3d_stage1(image, config, sigma, threads)
    if stages is None:
        stages = 2 if config.two_stage else 1
    if stages < 2:
        return basic
    return bm3d_stage2(image, basic, config, sigma, threads)
