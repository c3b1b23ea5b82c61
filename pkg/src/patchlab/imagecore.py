"""Grayscale image plumbing: PGM I/O, AWGN synthesis, noise estimation, PSNR/SSIM.

Images are plain 2D ``float64`` numpy arrays (rows x cols) in the nominal
luminance range [0, 255]. Noisy images are never clamped in memory; clamping
only happens when writing 8-bit files.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

#: Value returned by :func:`psnr` when the two images are identical (MSE = 0).
PSNR_INF = sys.float_info.max

PEAK = 255.0

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WIN = 11
SSIM_SIGMA = 1.5


class PgmError(ValueError):
    """Malformed or truncated PGM/PPM data."""


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def as_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2D image, got shape {img.shape}")
    return img


def noise_rng(seed: int) -> np.random.Generator:
    """The pinned noise stream: numpy PCG64 seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(seed: int, *keys) -> int:
    """Stable 63-bit seed from a base seed and integer keys."""
    ss = np.random.SeedSequence([int(seed)] + [int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# PGM / PPM


def _read_header(data: bytes, n_fields: int):
    """Parse ``n_fields`` whitespace separated header tokens after the magic.

    Returns the integer fields and the offset just past the single whitespace
    byte that terminates the last field.
    """
    fields = []
    pos = 2
    size = len(data)
    while len(fields) < n_fields:
        while pos < size and data[pos : pos + 1].isspace():
            pos += 1
        if pos < size and data[pos : pos + 1] == b"#":
            while pos < size and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < size and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PgmError(f"malformed header at byte offset {pos}")
        fields.append(int(data[start:pos]))
    if pos >= size or not data[pos : pos + 1].isspace():
        raise PgmError(f"malformed header at byte offset {pos}")
    return fields, pos + 1


def load_pgm(path) -> np.ndarray:
    """Read a P2 or P5 PGM file, scaling ``maxval`` to 255.0.

    16-bit files keep their full precision after the scaling.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_pgm(data)


def parse_pgm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PgmError("malformed header at byte offset 0: expected P2 or P5")
    (width, height, maxval), offset = _read_header(data, 3)
    if width < 1 or height < 1:
        raise PgmError(f"malformed header at byte offset {offset}: empty image")
    if not 0 < maxval < 65536:
        raise PgmError(f"malformed header at byte offset {offset}: maxval {maxval}")
    count = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        payload = data[offset:]
        if len(payload) < count * dtype.itemsize:
            raise PgmError(
                f"size mismatch: expected {count * dtype.itemsize} payload bytes, "
                f"got {len(payload)}"
            )
        raw = np.frombuffer(payload, dtype=dtype, count=count)
    else:
        tokens = data[offset:].split()
        if len(tokens) != count:
            raise PgmError(f"size mismatch: expected {count} samples, got {len(tokens)}")
        try:
            raw = np.array([int(t) for t in tokens], dtype=np.int64)
        except ValueError as exc:
            raise PgmError(f"malformed sample in P2 payload: {exc}") from None
    img = raw.astype(np.float64).reshape(height, width)
    if maxval != 255:
        img *= PEAK / maxval
    return img


def to_bytes8(image) -> np.ndarray:
    """Clamp to [0, 255] and round half-up to ``uint8``."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, PEAK)
    return np.floor(img + 0.5).astype(np.uint8)


def save_pgm(image, path) -> None:
    """Write a binary P5 PGM (maxval 255)."""
    img = as_image(image)
    payload = to_bytes8(img)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + payload.tobytes())


def save_pgm16(image, path, maxval: int = 65535) -> None:
    """Write a 16-bit P5 PGM; samples are scaled from [0, 255] to [0, maxval]."""
    img = as_image(image)
    scaled = np.clip(np.floor(img * (maxval / PEAK) + 0.5), 0, maxval).astype(">u2")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + scaled.tobytes())


def save_ppm(rgb, path) -> None:
    """Write a binary P6 PPM from an (H, W, 3) array in [0, 255]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got {rgb.shape}")
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + to_bytes8(rgb).tobytes())


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6":
        raise PgmError("malformed header at byte offset 0: expected P6")
    (width, height, maxval), offset = _read_header(data, 3)
    if maxval != 255:
        raise PgmError(f"unsupported PPM maxval {maxval}")
    count = width * height * 3
    if len(data) - offset < count:
        raise PgmError(f"size mismatch: expected {count} payload bytes")
    raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)
    return raw.reshape(height, width, 3).astype(np.float64)


def list_pgms(directory) -> list[str]:
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".pgm"))
    return [os.path.join(directory, n) for n in names]


# ---------------------------------------------------------------------------
# Noise


def add_awgn(image, spec: NoiseSpec) -> np.ndarray:
    """Add seeded white Gaussian noise; the result is not clamped."""
    img = as_image(image)
    if spec.sigma == 0:
        return img.copy()
    return img + spec.sigma * noise_rng(spec.seed).standard_normal(img.shape)


_LAPLACE4 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def estimate_noise_sigma(image) -> float:
    """Robust AWGN level from the MAD of the 4-neighbour Laplacian response."""
    img = as_image(image)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError("noise estimation needs an image of at least 3x3")
    lap = ndimage.correlate(img, _LAPLACE4, mode="nearest")[1:-1, 1:-1]
    mad = np.median(np.abs(lap - np.median(lap)))
    return float(mad / (0.6745 * np.sqrt(20.0)))


# ---------------------------------------------------------------------------
# Full-reference metrics


def _check_pair(reference, test):
    ref = as_image(reference)
    tst = as_image(test)
    if ref.shape != tst.shape:
        raise ValueError(f"dimension mismatch: {ref.shape} vs {tst.shape}")
    return ref, tst


def mse(reference, test) -> float:
    ref, tst = _check_pair(reference, test)
    return float(np.mean((ref - tst) ** 2))


def psnr_from_mse(err: float) -> float:
    if err == 0:
        return PSNR_INF
    return float(10.0 * np.log10(PEAK**2 / err))


def psnr(reference, test) -> float:
    """PSNR in dB with a fixed 255 peak; identical inputs give :data:`PSNR_INF`."""
    return psnr_from_mse(mse(reference, test))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (coords / sigma) ** 2)
    g /= g.sum()
    return g


def _valid_filter(img, g):
    # separable Gaussian, 'valid' region only
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    h = len(g) // 2
    return out[h : img.shape[0] - h, h : img.shape[1] - h]


def ssim_map(reference, test) -> np.ndarray:
    ref, tst = _check_pair(reference, test)
    if min(ref.shape) < SSIM_WIN:
        raise ValueError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    g = gaussian_window()
    mu_x = _valid_filter(ref, g)
    mu_y = _valid_filter(tst, g)
    mu_xy = mu_x * mu_y
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    var_x = _valid_filter(ref * ref, g) - mu_xx
    var_y = _valid_filter(tst * tst, g) - mu_yy
    cov = _valid_filter(ref * tst, g) - mu_xy
    num = (2 * mu_xy + c1) * (2 * cov + c2)
    den = (mu_xx + mu_yy + c1) * (var_x + var_y + c2)
    return num / den


def ssim(reference, test) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, L=255)."""
    return float(np.mean(ssim_map(reference, test)))
