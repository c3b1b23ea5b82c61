"""Reference denoisers assembled from grouping, basis, shrinkage, aggregation and boosting."""

from __future__ import annotations

from dataclasses import replace
from functools import partial

import numpy as np

from ..imagecore import as_image, estimate_noise_sigma
from .aggregate import Accumulator, CoverageError, aggregate_finalize, deposit_patches
from .bm3d import bm3d_lite_denoise, bm3d_stage1, bm3d_stage2
from .boosting import boost_back_projection, boost_sos, boost_twicing
from .config import BOOSTS, METHODS, BoostSpec, DenoiseConfig, default_config
from .lowrank import lpg_pca_denoise, lra_svd_once, svd_group_estimate
from .nlm import nlm_denoise, nlm_weights

__all__ = [
    "Accumulator",
    "BOOSTS",
    "BoostSpec",
    "CoverageError",
    "DenoiseConfig",
    "METHODS",
    "aggregate_finalize",
    "bm3d_lite_denoise",
    "bm3d_stage1",
    "bm3d_stage2",
    "boost_back_projection",
    "boost_sos",
    "boost_twicing",
    "default_config",
    "denoise",
    "deposit_patches",
    "lpg_pca_denoise",
    "lra_svd_denoise",
    "nlm_denoise",
    "nlm_weights",
    "svd_group_estimate",
]


def _single_pass(image, config: DenoiseConfig, sigma: float, threads=None):
    if config.method == "identity":
        return as_image(image).copy()
    if config.method == "nlm":
        return nlm_denoise(image, config, sigma, threads)
    if config.method == "lra_svd":
        return lra_svd_once(image, config, sigma, threads)
    if config.method == "lpg_pca":
        return lpg_pca_denoise(image, config, sigma, threads)
    if config.method == "bm3d_lite":
        return bm3d_lite_denoise(image, config, sigma, threads)
    raise ValueError(f"unknown method {config.method!r}")


def apply_boost(noisy, estimate, boost: BoostSpec, denoiser):
    """Run ``boost.iterations`` rounds of the configured boosting scheme."""
    z = estimate
    for _ in range(boost.iterations if boost.kind != "none" else 0):
        if boost.kind == "twicing":
            z = boost_twicing(noisy, z, denoiser)
        elif boost.kind == "back_projection":
            z = denoiser(boost_back_projection(noisy, z, boost.delta))
        elif boost.kind == "sos":
            z = boost_sos(noisy, z, denoiser)
    return z


def denoise(image, config: DenoiseConfig, threads=None) -> np.ndarray:
    """Denoise ``image`` with ``config``; ``noise_sigma=None`` is estimated first."""
    y = as_image(image)
    sigma = config.noise_sigma
    if sigma is None:
        sigma = estimate_noise_sigma(y)
    base = partial(_single_pass, config=config, sigma=sigma, threads=threads)
    return apply_boost(y, base(y), config.boost, base)


def lra_svd_denoise(image, config: DenoiseConfig, threads=None) -> np.ndarray:
    """Grouped truncated-SVD denoiser including its configured boosting."""
    if config.method != "lra_svd":
        config = replace(config, method="lra_svd")
    return denoise(image, config, threads)
