"""Coefficient shrinkage rules and the truncated-SVD rank criterion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHRINK_KINDS = ("hard", "soft_sv", "wiener", "tikhonov", "rank_select")


@dataclass(frozen=True)
class ShrinkSpec:
    """Shrinkage choice and its parameters.

    ``lambda_`` is the hard threshold in units of the noise sigma (the
    applied threshold is ``lambda_ * noise_sigma``). ``tau_sq_coeff`` is the
    ``c`` in the residual budget ``tau^2 = c * n * m * sigma^2``.
    ``soft_coeff`` scales the singular-value soft threshold
    ``soft_coeff * sigma * sqrt(m)``.
    """

    kind: str = "rank_select"
    lambda_: float = 2.7
    mu: float = 0.0
    tau_sq_coeff: float = 1.0
    soft_coeff: float = 1.3
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in SHRINK_KINDS:
            raise ValueError(f"unknown shrink kind {self.kind!r}; expected one of {SHRINK_KINDS}")
        for name in ("lambda_", "mu", "tau_sq_coeff", "soft_coeff", "noise_sigma"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")


def hard_threshold(coeffs, lam: float) -> np.ndarray:
    """Keep coefficients with ``|c| > lam``; zero the rest."""
    if not lam >= 0:
        raise ValueError("lambda must be >= 0")
    c = np.asarray(coeffs, dtype=np.float64)
    return np.where(np.abs(c) > lam, c, 0.0)


def soft_threshold_sv(sigma_values, tau: float) -> np.ndarray:
    if not tau >= 0:
        raise ValueError("tau must be >= 0")
    return np.maximum(np.asarray(sigma_values, dtype=np.float64) - tau, 0.0)


def wiener_weights(signal_psd, noise_psd) -> np.ndarray:
    """``S / (S + N)`` elementwise, with 0/0 taken as 0."""
    s = np.asarray(signal_psd, dtype=np.float64)
    n = np.asarray(noise_psd, dtype=np.float64)
    if np.any(s < 0) or np.any(n < 0):
        raise ValueError("power spectra must be nonnegative")
    den = s + n
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(den > 0, s / np.where(den > 0, den, 1.0), 0.0)
    return w


def tikhonov_shrink(coeffs, mu: float, energies=None) -> np.ndarray:
    """Closed-form ridge solution in an orthonormal basis.

    Without ``energies`` every coefficient is scaled by ``1 / (1 + mu^2)``;
    with per-mode energies ``e`` the factor is ``e / (e + mu^2)``.
    """
    if not mu >= 0:
        raise ValueError("mu must be >= 0")
    c = np.asarray(coeffs, dtype=np.float64)
    if energies is None:
        return c / (1.0 + mu * mu)
    return wiener_weights(energies, mu * mu) * c


def suffix_energy(sigma_values) -> np.ndarray:
    """``E[i] = sum_{j >= i} sigma_j^2`` (0-based), with a trailing 0."""
    s2 = np.asarray(sigma_values, dtype=np.float64) ** 2
    out = np.zeros(s2.shape[:-1] + (s2.shape[-1] + 1,))
    out[..., :-1] = np.cumsum(s2[..., ::-1], axis=-1)[..., ::-1]
    return out


def select_rank(sigma_values, tau_sq):
    """Smallest rank whose discarded tail energy fits inside ``tau_sq``.

    With 1-based ranks this is the ``r`` satisfying
    ``sum_{i>=r} s_i^2 > tau_sq >= sum_{i>r} s_i^2``, or 0 when the total
    energy is within budget. Works on ``(..., k)`` batches.
    """
    tail = suffix_energy(sigma_values)[..., :-1]
    tau_sq = np.asarray(tau_sq, dtype=np.float64)
    if np.any(tau_sq < 0):
        raise ValueError("tau_sq must be >= 0")
    r = np.count_nonzero(tail > tau_sq[..., None], axis=-1)
    return int(r) if np.ndim(r) == 0 else r


def noise_tau_sq(n: int, m: int, sigma: float, c: float = 1.0) -> float:
    """Expected noise energy budget ``c * n * m * sigma^2``."""
    if min(n, m, sigma, c) < 0:
        raise ValueError("arguments must be >= 0")
    return float(c * n * m * sigma * sigma)
