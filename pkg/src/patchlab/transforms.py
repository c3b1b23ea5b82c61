"""Orthonormal bases for patch groups: 2D DCT-II, 1D Haar, PCA and SVD."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft

from .grouping import Patch, PatchGroup


@dataclass
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray


@dataclass
class SvdFactors:
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def k(self) -> int:
        return len(self.sigma)


# ---------------------------------------------------------------------------
# DCT


def _as_block(x):
    if isinstance(x, Patch):
        return x.values.reshape(x.side, x.side)
    block = np.asarray(x, dtype=np.float64)
    if block.ndim == 1:
        side = int(round(np.sqrt(block.size)))
        if side * side != block.size:
            raise ValueError("patch vector length is not a square")
        block = block.reshape(side, side)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValueError(f"expected a square block, got shape {block.shape}")
    return block


def dct2_forward(patch) -> np.ndarray:
    """Orthonormal 2D DCT-II coefficient block of a square patch."""
    return fft.dctn(_as_block(patch), type=2, norm="ortho")


def dct2_inverse(coeffs) -> np.ndarray:
    """Inverse of :func:`dct2_forward` (returns the square sample block)."""
    return fft.idctn(_as_block(coeffs), type=2, norm="ortho")


@lru_cache(maxsize=32)
def dct_matrix(size: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` with ``coeffs = C @ x``."""
    return fft.dct(np.eye(size), type=2, norm="ortho", axis=0)


@lru_cache(maxsize=32)
def dct2_matrix(side: int) -> np.ndarray:
    """``(n, n)`` matrix of the 2D DCT acting on row-major patch vectors."""
    c = dct_matrix(side)
    return np.kron(c, c)


# ---------------------------------------------------------------------------
# Haar


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def haar1d_forward(values) -> np.ndarray:
    """Full orthonormal Haar decomposition; output ``[approx, coarse..fine details]``."""
    x = np.asarray(values, dtype=np.float64)
    if not _is_pow2(x.shape[0]):
        raise ValueError(f"Haar length must be a power of two, got {x.shape[0]}")
    return haar_matrix(x.shape[0]) @ x


def haar1d_inverse(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    if not _is_pow2(c.shape[0]):
        raise ValueError(f"Haar length must be a power of two, got {c.shape[0]}")
    return haar_matrix(c.shape[0]).T @ c


@lru_cache(maxsize=32)
def haar_matrix(length: int) -> np.ndarray:
    """Orthonormal Haar analysis matrix of a power-of-two ``length``."""
    if not _is_pow2(length):
        raise ValueError(f"Haar length must be a power of two, got {length}")
    if length == 1:
        return np.ones((1, 1))
    half = haar_matrix(length // 2)
    s = 1.0 / np.sqrt(2.0)
    top = np.kron(half, [s, s])
    bottom = np.kron(np.eye(length // 2), [s, -s])
    return np.vstack([top, bottom])


def reflect_pad_indices(m: int) -> np.ndarray:
    """Column indices that extend a group of ``m`` to the next power of two.

    Extra columns repeat the group in reflected order (m-1, m-2, ...).
    """
    target = next_pow2(m)
    idx = list(range(m))
    j, step = m - 1, -1
    while len(idx) < target:
        idx.append(j)
        if m == 1:
            continue
        if j + step < 0 or j + step >= m:
            step = -step
        j += step
    return np.array(idx, dtype=np.intp)


# ---------------------------------------------------------------------------
# PCA / SVD


def _fix_signs(u: np.ndarray, *others):
    """Flip columns so the largest-magnitude entry of each ``u`` column is >= 0."""
    if u.size == 0:
        return (u,) + others
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivot, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return (u * signs,) + tuple(o * signs for o in others)


def pca_fit(group) -> PcaModel:
    """Eigendecomposition of the covariance ``(1/m) Xc Xc^T`` of a patch group."""
    X = group.columns if isinstance(group, PatchGroup) else np.asarray(group, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("PCA needs a group of at least two patches")
    m = X.shape[1]
    mean = X.mean(axis=1)
    Xc = X - mean[:, None]
    omega = (Xc @ Xc.T) / m
    omega = 0.5 * (omega + omega.T)
    evals, evecs = np.linalg.eigh(omega)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    floor = 1e-10 * max(float(np.trace(omega)), 0.0)
    evals[evals < floor] = 0.0
    (evecs,) = _fix_signs(evecs)
    return PcaModel(mean=mean, basis=evecs, eigenvalues=evals)


def pca_project(model: PcaModel, X) -> np.ndarray:
    return model.basis.T @ (np.asarray(X, dtype=np.float64) - model.mean[:, None])


def pca_reconstruct(model: PcaModel, Y) -> np.ndarray:
    return model.basis @ np.asarray(Y, dtype=np.float64) + model.mean[:, None]


def svd_decompose(matrix) -> SvdFactors:
    """Thin SVD with ``k = min(n, m)``, spectra nonincreasing and signs fixed."""
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2 or min(X.shape) < 1:
        raise ValueError(f"expected a non-empty 2D matrix, got shape {X.shape}")
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    u, v = _fix_signs(u, vt.T)
    return SvdFactors(u=u, sigma=s, v=v)


def low_rank_approx(factors: SvdFactors, r: int) -> np.ndarray:
    """Sum of the ``r`` leading rank-one terms."""
    if not 0 <= r <= factors.k:
        raise ValueError(f"rank {r} outside [0, {factors.k}]")
    return (factors.u[:, :r] * factors.sigma[:r]) @ factors.v[:, :r].T
