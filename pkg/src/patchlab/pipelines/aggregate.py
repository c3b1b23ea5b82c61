"""Per-pixel accumulation of overlapping patch estimates, and the chunk runner."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

# reference rows per work unit; fixed so results never depend on the worker count
ROW_BLOCK = 6


class CoverageError(ValueError):
    """A pixel received no patch estimate."""


class Accumulator:
    """Weighted sums of estimates (numerator) and of weights (denominator)."""

    def __init__(self, shape):
        self.shape = tuple(shape)
        self.numerator = np.zeros(self.shape)
        self.denominator = np.zeros(self.shape)

    def deposit(self, rows, cols, values, weights=1.0):
        """Add ``weights * values`` at pixels ``(rows, cols)``; off-image pixels are dropped."""
        rows = np.asarray(rows, dtype=np.intp).ravel()
        cols = np.asarray(cols, dtype=np.intp).ravel()
        values = np.asarray(values, dtype=np.float64)
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), values.shape).ravel()
        values = values.ravel()
        H, W = self.shape
        keep = (rows >= 0) & (rows < H) & (cols >= 0) & (cols < W)
        flat = rows[keep] * W + cols[keep]
        w = weights[keep]
        self.numerator += np.bincount(flat, weights=w * values[keep], minlength=H * W).reshape(H, W)
        self.denominator += np.bincount(flat, weights=w, minlength=H * W).reshape(H, W)

    def merge(self, other: Accumulator):
        self.numerator += other.numerator
        self.denominator += other.denominator


def deposit_patches(acc: Accumulator, centers, patches, side: int, weights=1.0):
    """Deposit ``(N, n)`` patch estimates centered at ``(N, 2)`` pixel centers.

    ``weights`` is a scalar or one weight per patch. Samples that fall
    outside the image are dropped.
    """
    centers = np.asarray(centers, dtype=np.intp).reshape(-1, 2)
    patches = np.asarray(patches, dtype=np.float64).reshape(len(centers), side * side)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64).ravel(), (len(centers),))
    H, W = acc.shape
    half = side // 2
    # scatter onto a canvas padded by half a patch, one patch pixel at a time
    Hp, Wp = H + 2 * half, W + 2 * half
    flat = (centers[:, 0] + half) * Wp + centers[:, 1] + half
    num = np.zeros((Hp, Wp))
    den = np.bincount(flat, weights=w, minlength=Hp * Wp).reshape(Hp, Wp)
    den_sum = np.zeros((Hp, Wp))
    for t in range(side * side):
        dy, dx = divmod(t, side)
        dy -= half
        dx -= half
        layer = np.bincount(flat, weights=w * patches[:, t], minlength=Hp * Wp).reshape(Hp, Wp)
        # a patch pixel at offset (dy, dx) lands at center + (dy, dx)
        num[half + dy : Hp - half + dy, half + dx : Wp - half + dx] += layer[half : Hp - half, half : Wp - half]
        den_sum[half + dy : Hp - half + dy, half + dx : Wp - half + dx] += den[half : Hp - half, half : Wp - half]
    acc.numerator += num[half : half + H, half : half + W]
    acc.denominator += den_sum[half : half + H, half : half + W]


def aggregate_finalize(acc: Accumulator) -> np.ndarray:
    """Per-pixel weighted mean; raises :class:`CoverageError` on an empty pixel."""
    empty = acc.denominator <= 0
    if np.any(empty):
        r, c = np.argwhere(empty)[0]
        raise CoverageError(f"pixel ({r}, {c}) is not covered by any patch")
    return acc.numerator / acc.denominator


def reference_grid(length: int, step: int) -> np.ndarray:
    """Reference coordinates ``0, step, 2*step, ...`` plus the last index."""
    g = np.arange(0, length, step)
    if g[-1] != length - 1:
        g = np.append(g, length - 1)
    return g


def resolve_threads(threads=None) -> int:
    if threads is None:
        threads = os.environ.get("PATCHLAB_THREADS", 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def map_ordered(work, items, threads=None):
    """``[work(x) for x in items]``, optionally on a thread pool; order is kept."""
    threads = resolve_threads(threads)
    if threads == 1:
        return [work(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, items))


def row_blocks(rows, size: int = ROW_BLOCK):
    return [rows[i : i + size] for i in range(0, len(rows), size)]


def run_row_blocks(work, ref_rows, shape, threads=None) -> Accumulator:
    """Run ``work(rows) -> Accumulator`` over fixed row blocks and reduce in order."""
    total = Accumulator(shape)
    for part in map_ordered(work, row_blocks(ref_rows), threads):
        total.merge(part)
    return total

