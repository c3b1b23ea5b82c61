"""Residual boosting of a denoised estimate.

``denoiser`` arguments are pure callables ``image -> image``.
"""

from __future__ import annotations

import numpy as np


def _pair(noisy, estimate):
    y = np.asarray(noisy, dtype=np.float64)
    z = np.asarray(estimate, dtype=np.float64)
    if y.shape != z.shape:
        raise ValueError(f"dimension mismatch: {y.shape} vs {z.shape}")
    return y, z


def boost_twicing(noisy, estimate, denoiser) -> np.ndarray:
    """Add back the signal recovered from the residual: ``z + f(y - z)``."""
    y, z = _pair(noisy, estimate)
    residual = y - z
    # algebraically z + f(r); this form keeps an identity f bit-exact
    return y - (residual - denoiser(residual))


def boost_back_projection(noisy, estimate, delta: float) -> np.ndarray:
    """Blend a fraction of the residual back in: ``z + delta * (y - z)``.

    The result is the input of the next denoising pass, not a final estimate.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    y, z = _pair(noisy, estimate)
    if delta == 0.0:
        return z.copy()
    if delta == 1.0:
        return y.copy()
    return z + delta * (y - z)


def boost_sos(noisy, estimate, denoiser) -> np.ndarray:
    """Strengthen, operate, subtract: ``f(y + z) - z``."""
    y, z = _pair(noisy, estimate)
    strengthened = y + z
    # algebraically f(y + z) - z; this form keeps an identity f bit-exact
    return y + (denoiser(strengthened) - strengthened)
