"""Patch extraction, patch distances and neighbourhood block matching.

Two search paths share the same semantics:

* a per-center path (:func:`gather_group`, :func:`candidate_distances`) used by
  the statistics experiments and as the readable reference;
* a grid path (:func:`grid_distances`, :func:`iter_offset_distances`) that
  evaluates every search offset for a whole lattice of reference pixels at
  once with separable box sums. The pipelines use this one.

Candidates are the patches whose *centers* lie in the ``(2r+1)^2`` search
window and inside the image. Patch samples falling outside the image are
mirror padded (``numpy`` ``reflect`` mode). Candidate order is raster order
of the offsets, which is also the tie-break order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import as_image


@dataclass(frozen=True)
class Patch:
    values: np.ndarray
    center: tuple[int, int]
    side: int

    @property
    def n(self) -> int:
        return self.side * self.side


@dataclass
class PatchGroup:
    """Similar patches as the columns of an ``n x m`` matrix."""

    columns: np.ndarray
    centers: np.ndarray
    reference_index: int
    distances: np.ndarray
    rare: bool = False

    @property
    def m(self) -> int:
        return self.columns.shape[1]

    @property
    def reference(self) -> np.ndarray:
        return self.columns[:, self.reference_index]


@dataclass(frozen=True)
class GroupingConfig:
    """Block matching parameters.

    Exactly one of ``top_m`` / ``threshold`` selects the group. ``normalized``
    divides distances by the patch length ``n``.
    """

    patch_side: int = 5
    search_radius: int = 4
    top_m: int | None = 15
    threshold: float | None = None
    normalized: bool = False
    border_policy: str = field(default="mirror")

    def __post_init__(self):
        if self.patch_side < 1 or self.patch_side % 2 == 0:
            raise ValueError(f"patch_side must be a positive odd number, got {self.patch_side}")
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")
        if (self.top_m is None) == (self.threshold is None):
            raise ValueError("set exactly one of top_m and threshold")
        if self.top_m is not None and self.top_m < 1:
            raise ValueError("top_m must be >= 1")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.border_policy != "mirror":
            raise ValueError("only the 'mirror' border policy is supported")

    @property
    def n(self) -> int:
        return self.patch_side**2

    @property
    def candidates(self) -> int:
        return (2 * self.search_radius + 1) ** 2


def search_offsets(radius: int) -> np.ndarray:
    """``(K, 2)`` array of (drow, dcol) offsets in raster order."""
    d = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    return np.stack([dy.ravel(), dx.ravel()], axis=1)


def center_offset_index(radius: int) -> int:
    """Index of the (0, 0) offset in :func:`search_offsets`."""
    width = 2 * radius + 1
    return radius * width + radius


def gaussian_patch_kernel(side: int, kernel_sigma: float) -> np.ndarray:
    """1D factor of the centered, sum-normalized 2D Gaussian patch weights."""
    if not kernel_sigma > 0:
        raise ValueError("kernel_sigma must be > 0")
    t = np.arange(side, dtype=np.float64) - side // 2
    g = np.exp(-0.5 * (t / kernel_sigma) ** 2)
    return g / g.sum()


def _check_center(shape, center):
    r, c = int(center[0]), int(center[1])
    if not (0 <= r < shape[0] and 0 <= c < shape[1]):
        raise ValueError(f"center {center} outside image of shape {shape}")
    return r, c


def _patch_view(img, side):
    half = side // 2
    padded = np.pad(img, half, mode="reflect")
    return sliding_window_view(padded, (side, side))


def extract_patch(image, center, side: int) -> Patch:
    """Row-major ``side x side`` window around ``center`` (mirror padded)."""
    if side < 1 or side % 2 == 0:
        raise ValueError(f"side must be a positive odd number, got {side}")
    img = as_image(image)
    r, c = _check_center(img.shape, center)
    values = _patch_view(img, side)[r, c].reshape(-1).copy()
    return Patch(values, (r, c), side)


def patch_matrix(image, centers, side: int) -> np.ndarray:
    """``(N, n)`` patch vectors for an ``(N, 2)`` array of centers."""
    img = as_image(image)
    centers = np.asarray(centers, dtype=np.intp).reshape(-1, 2)
    view = _patch_view(img, side)
    return view[centers[:, 0], centers[:, 1]].reshape(len(centers), side * side)


def _pair(a, b):
    va = a.values if isinstance(a, Patch) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, Patch) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"patch size mismatch: {va.shape} vs {vb.shape}")
    return va, vb


def patch_distance(a, b) -> float:
    """Unnormalized squared Euclidean distance."""
    va, vb = _pair(a, b)
    return float(np.sum((va - vb) ** 2))


def gaussian_weighted_distance(a, b, kernel_sigma: float) -> float:
    """Squared differences weighted by a sum-normalized Gaussian over the patch grid."""
    va, vb = _pair(a, b)
    side = int(round(np.sqrt(va.size)))
    if side * side != va.size:
        raise ValueError("weighted distance needs square patches")
    g = gaussian_patch_kernel(side, kernel_sigma)
    w = np.outer(g, g).reshape(-1)
    return float(np.sum(w * (va - vb) ** 2))


def patch_complexity(patch) -> float:
    """Sample standard deviation (n - 1 denominator) of the patch values."""
    values = patch.values if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1))


# ---------------------------------------------------------------------------
# Per-center search


def candidate_distances(image, center, config: GroupingConfig, kernel_sigma=None):
    """Distances from the patch at ``center`` to every candidate in its window.

    Returns ``(centers, distances)`` for the in-image candidates only, in
    raster order.
    """
    img = as_image(image)
    r, c = _check_center(img.shape, center)
    offsets = search_offsets(config.search_radius)
    cand = offsets + np.array([r, c])
    valid = (
        (cand[:, 0] >= 0)
        & (cand[:, 0] < img.shape[0])
        & (cand[:, 1] >= 0)
        & (cand[:, 1] < img.shape[1])
    )
    cand = cand[valid]
    view = _patch_view(img, config.patch_side)
    ref = view[r, c].reshape(-1)
    patches = view[cand[:, 0], cand[:, 1]].reshape(len(cand), -1)
    diff2 = (patches - ref) ** 2
    if kernel_sigma is not None:
        g = gaussian_patch_kernel(config.patch_side, kernel_sigma)
        dist = diff2 @ np.outer(g, g).reshape(-1)
    else:
        dist = diff2.sum(axis=1)
        if config.normalized:
            dist = dist / config.n
    return cand, dist


def select_top_m(dist: np.ndarray, m: int, ref_index) -> np.ndarray:
    """Indices of the ``m`` nearest candidates per row, reference forced in.

    ``dist`` is ``(..., K)``; ``ref_index`` is a scalar or per-row array. The
    returned indices are ordered by (distance, raster index).
    """
    dist = np.asarray(dist)
    key = dist.copy()
    ref_index = np.broadcast_to(np.asarray(ref_index), dist.shape[:-1])
    np.put_along_axis(key, ref_index[..., None], -1.0, axis=-1)
    chosen = np.argsort(key, axis=-1, kind="stable")[..., :m]
    chosen = np.sort(chosen, axis=-1)
    picked = np.take_along_axis(dist, chosen, axis=-1)
    order = np.argsort(picked, axis=-1, kind="stable")
    return np.take_along_axis(chosen, order, axis=-1)


def gather_group(image, center, config: GroupingConfig) -> PatchGroup:
    """Collect the patches similar to the one at ``center``."""
    img = as_image(image)
    r, c = _check_center(img.shape, center)
    cand, dist = candidate_distances(img, (r, c), config)
    ref_k = int(np.flatnonzero((cand[:, 0] == r) & (cand[:, 1] == c))[0])
    if config.top_m is not None:
        if config.top_m > len(cand):
            raise ValueError(
                f"top_m={config.top_m} exceeds the {len(cand)} candidates at {center}"
            )
        idx = select_top_m(dist, config.top_m, ref_k)
    else:
        keep = np.flatnonzero(dist <= config.threshold)
        keep = np.union1d(keep, [ref_k])
        idx = keep[np.argsort(dist[keep], kind="stable")]
    centers = cand[idx]
    cols = patch_matrix(img, centers, config.patch_side).T
    ref_pos = int(np.flatnonzero(idx == ref_k)[0])
    return PatchGroup(
        columns=np.ascontiguousarray(cols),
        centers=centers,
        reference_index=ref_pos,
        distances=dist[idx],
        rare=len(idx) == 1,
    )


def similarity_threshold(image, center, m: int = 15, config: GroupingConfig | None = None) -> float:
    """Distance of the ``m``-th nearest candidate (reference included)."""
    config = config or GroupingConfig()
    if m < 2:
        raise ValueError("m must be >= 2")
    _, dist = candidate_distances(image, center, config)
    if m > len(dist):
        raise ValueError(f"m={m} exceeds the {len(dist)} candidates at {center}")
    return float(np.partition(dist, m - 1)[m - 1])


def count_similar(image, center, theta: float, config: GroupingConfig | None = None) -> int:
    """Number of candidates other than the reference with distance <= theta."""
    config = config or GroupingConfig()
    if theta < 0:
        raise ValueError("theta must be >= 0")
    _, dist = candidate_distances(image, center, config)
    return int(np.count_nonzero(dist <= theta)) - 1


# ---------------------------------------------------------------------------
# Grid search


def iter_offset_distances(image, rows, cols, side: int, radius: int, kernel1d=None):
    """Yield ``(k, dy, dx, dist, valid)`` for every search offset.

    ``dist`` holds the patch distance between reference ``(rows[i], cols[j])``
    and the candidate displaced by ``(dy, dx)``; ``valid`` marks candidates
    whose center is inside the image. ``kernel1d`` is an optional separable
    weight (e.g. :func:`gaussian_patch_kernel`); ``None`` means a plain sum.
    """
    img = as_image(image)
    H, W = img.shape
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    half = side // 2
    pad = half + radius
    P = np.pad(img, pad, mode="reflect")
    # only the band of padded rows touched by these references
    lo = int(rows.min())
    hi = int(rows.max()) + side
    local = rows - lo
    base = P[radius + lo : radius + hi, radius : radius + W + 2 * half]
    for k, (dy, dx) in enumerate(search_offsets(radius)):
        shifted = P[
            radius + dy + lo : radius + dy + hi,
            radius + dx : radius + dx + W + 2 * half,
        ]
        d2 = (base - shifted) ** 2
        vert = np.zeros((len(rows), d2.shape[1]))
        for t in range(side):
            if kernel1d is None:
                vert += d2[local + t]
            else:
                vert += kernel1d[t] * d2[local + t]
        dist = np.zeros((len(rows), len(cols)))
        for t in range(side):
            if kernel1d is None:
                dist += vert[:, cols + t]
            else:
                dist += kernel1d[t] * vert[:, cols + t]
        vr = (rows + dy >= 0) & (rows + dy < H)
        vc = (cols + dx >= 0) & (cols + dx < W)
        yield k, int(dy), int(dx), dist, np.outer(vr, vc)


def grid_distances(image, rows, cols, config: GroupingConfig) -> np.ndarray:
    """``(len(rows), len(cols), K)`` distances; invalid candidates are ``inf``."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = np.empty((len(rows), len(cols), config.candidates))
    for k, _, _, dist, valid in iter_offset_distances(
        image, rows, cols, config.patch_side, config.search_radius
    ):
        if config.normalized:
            dist = dist / config.n
        out[:, :, k] = np.where(valid, dist, np.inf)
    return out


def similarity_threshold_map(image, m: int = 15, config: GroupingConfig | None = None,
                             row_block: int = 64) -> np.ndarray:
    """:func:`similarity_threshold` evaluated at every pixel."""
    config = config or GroupingConfig()
    img = as_image(image)
    out = np.empty(img.shape)
    cols = np.arange(img.shape[1])
    for r0 in range(0, img.shape[0], row_block):
        rows = np.arange(r0, min(r0 + row_block, img.shape[0]))
        d = grid_distances(img, rows, cols, config)
        out[rows] = np.partition(d, m - 1, axis=-1)[..., m - 1]
    return out


def count_similar_map(image, thetas, config: GroupingConfig | None = None,
                      row_block: int = 64) -> np.ndarray:
    """:func:`count_similar` at every pixel for each theta: ``(len(thetas), H, W)``."""
    config = config or GroupingConfig()
    img = as_image(image)
    thetas = np.asarray(thetas, dtype=np.float64)
    out = np.empty((len(thetas),) + img.shape, dtype=np.int64)
    cols = np.arange(img.shape[1])
    for r0 in range(0, img.shape[0], row_block):
        rows = np.arange(r0, min(r0 + row_block, img.shape[0]))
        d = grid_distances(img, rows, cols, config)
        for i, theta in enumerate(thetas):
            out[i, rows] = np.count_nonzero(d <= theta, axis=-1) - 1
    return out
