from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..grouping import GroupingConfig
from ..shrinkage import ShrinkSpec

METHODS = ("nlm", "lra_svd", "lpg_pca", "bm3d_lite", "identity")
BOOSTS = ("none", "twicing", "back_projection", "sos")


@dataclass(frozen=True)
class BoostSpec:
    kind: str = "none"
    iterations: int = 1
    delta: float = 0.5

    def __post_init__(self):
        if self.kind not in BOOSTS:
            raise ValueError(f"unknown boost {self.kind!r}; expected one of {BOOSTS}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")


@dataclass(frozen=True)
class DenoiseConfig:
    """Everything a pipeline needs besides the image.

    ``noise_sigma=None`` means "estimate from the input". ``nlm_h=None``
    resolves to ``0.3 * sigma * sqrt(n)``. ``stage2_grouping`` is the
    block matching used by the second BM3D-lite stage. For ``lpg_pca`` the
    distance threshold is ``lpg_theta_noise * n * sigma^2 + lpg_theta_floor * n``
    and is recomputed per stage.
    """

    method: str = "lra_svd"
    grouping: GroupingConfig = field(default_factory=GroupingConfig)
    shrink: ShrinkSpec = field(default_factory=ShrinkSpec)
    noise_sigma: float | None = None
    nlm_h: float | None = None
    nlm_kernel_sigma: float = 1.0
    step: int = 3
    boost: BoostSpec = field(default_factory=BoostSpec)
    two_stage: bool = True
    stage2_coeff: float = 0.35
    stage2_grouping: GroupingConfig | None = None
    lpg_theta_noise: float = 2.0
    lpg_theta_floor: float = 25.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.noise_sigma is not None and not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.nlm_h is not None and not self.nlm_h > 0:
            raise ValueError("nlm_h must be > 0")
        if not self.nlm_kernel_sigma > 0:
            raise ValueError("nlm_kernel_sigma must be > 0")
        if not self.stage2_coeff >= 0:
            raise ValueError("stage2_coeff must be >= 0")

    def with_sigma(self, sigma: float) -> DenoiseConfig:
        return replace(self, noise_sigma=float(sigma))


def default_config(method: str, sigma: float | None = None, **overrides) -> DenoiseConfig:
    """Per-method defaults.

    ====================  =====================================================
    ``nlm``               5x5 patch, 21x21 window, kernel sigma 1
    ``lra_svd``           5x5 patch, 21x21 window, 85 nearest, rank rule, twicing
    ``lpg_pca``           5x5 patch, 17x17 window, threshold, two stages
    ``bm3d_lite``         7x7 patch, 21x21 window, 16 / 32 nearest, two stages
    ====================  =====================================================
    """
    if method == "nlm":
        cfg = DenoiseConfig(
            method="nlm",
            grouping=GroupingConfig(patch_side=5, search_radius=10, top_m=441),
            shrink=ShrinkSpec(kind="wiener"),
        )
    elif method == "lra_svd":
        cfg = DenoiseConfig(
            method="lra_svd",
            grouping=GroupingConfig(patch_side=5, search_radius=10, top_m=85),
            shrink=ShrinkSpec(kind="rank_select", tau_sq_coeff=1.0),
            boost=BoostSpec(kind="twicing", iterations=1),
        )
    elif method == "lpg_pca":
        cfg = DenoiseConfig(
            method="lpg_pca",
            grouping=GroupingConfig(patch_side=5, search_radius=8, top_m=None, threshold=0.0),
            shrink=ShrinkSpec(kind="wiener"),
        )
    elif method == "bm3d_lite":
        cfg = DenoiseConfig(
            method="bm3d_lite",
            grouping=GroupingConfig(patch_side=7, search_radius=10, top_m=16),
            stage2_grouping=GroupingConfig(patch_side=7, search_radius=10, top_m=32),
            shrink=ShrinkSpec(kind="hard", lambda_=2.7),
        )
    elif method == "identity":
        cfg = DenoiseConfig(method="identity")
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if sigma is not None:
        cfg = cfg.with_sigma(sigma)
    return replace(cfg, **overrides) if overrides else cfg
