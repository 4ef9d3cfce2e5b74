"""Spatial and channel interaction-and-aggregation modules and the IA block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops, relation
from .errors import ConfigurationError, DimensionError
from .ops import BatchNorm
from .tensor import Tensor, as_tensor

ARRANGEMENTS = ("SIA_THEN_CIA", "CIA_THEN_SIA", "PARALLEL", "SIA_ONLY", "CIA_ONLY")


@dataclass(frozen=True)
class IAConfig:
    patch_sizes: tuple = relation.DEFAULT_PATCH_SIZES
    fusion: str = "PROD"
    sigma1: float = 5.0
    sigma2: float = 10.0
    use_location: bool = True
    use_appearance: bool = True
    arrangement: str = "SIA_THEN_CIA"

    def __post_init__(self):
        object.__setattr__(self, "patch_sizes", tuple(sorted(set(int(k) for k in self.patch_sizes))))
        object.__setattr__(self, "fusion", relation.check_fusion(self.fusion))
        object.__setattr__(self, "arrangement", self.arrangement.upper())
        if self.arrangement not in ARRANGEMENTS:
            raise ConfigurationError(
                f"unknown arrangement {self.arrangement!r}; expected one of {ARRANGEMENTS}"
            )
        if not (self.use_location or self.use_appearance):
            raise ConfigurationError("at least one of use_location / use_appearance must be true")
        if self.use_appearance and not self.patch_sizes:
            raise ConfigurationError("patch_sizes must be nonempty when use_appearance is set")
        if any(k < 1 for k in self.patch_sizes):
            raise ConfigurationError(f"patch sizes must be positive: {self.patch_sizes}")
        if self.use_location and not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ConfigurationError(f"sigma1/sigma2 must be positive, got {self.sigma1}, {self.sigma2}")

    @property
    def variant(self) -> str:
        if self.use_appearance and self.use_location:
            return "semantic"
        return "appearance" if self.use_appearance else "location"


@dataclass(frozen=True)
class ChannelRelationMap:
    matrix: Tensor  # [C, C] or [B, C, C], rows sum to one


@dataclass
class IABlockParams:
    """Batch-norm parameters of the two residual branches, zero-initialized."""

    bn_sia: BatchNorm
    bn_cia: BatchNorm

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64) -> "IABlockParams":
        return cls(
            BatchNorm(channels, dtype, gamma=0.0, beta=0.0),
            BatchNorm(channels, dtype, gamma=0.0, beta=0.0),
        )

    def trainable(self) -> list[Tensor]:
        return [self.bn_sia.gamma, self.bn_sia.beta, self.bn_cia.gamma, self.bn_cia.beta]

    def tensors(self, prefix: str) -> dict:
        return {**self.bn_sia.tensors(prefix + "sia_bn."), **self.bn_cia.tensors(prefix + "cia_bn.")}

    def load(self, prefix: str, tensors: dict, dtype) -> None:
        self.bn_sia.load(prefix + "sia_bn.", tensors, dtype)
        self.bn_cia.load(prefix + "cia_bn.", tensors, dtype)


def _flatten(F: Tensor) -> tuple[Tensor, tuple]:
    if F.ndim != 4:
        raise DimensionError(f"expected [B,C,H,W] feature map, got {F.shape}")
    B, C, H, W = F.shape
    if H * W == 0:
        raise DimensionError(f"empty spatial grid {H}x{W}")
    return ops.reshape(F, (B, C, H * W)), (H, W)


def sia_scores(F: Tensor, cfg: IAConfig) -> Tensor:
    """Batched log-scores ``[B, M, M]`` (``[1, M, M]`` for location-only) whose
    row softmax is the spatial relation map selected by ``cfg``."""
    Fm, grid = _flatten(as_tensor(F))
    log_loc = None
    if cfg.use_location:
        prior = relation.LocationPrior(cfg.sigma1, cfg.sigma2, grid)
        log_loc = Tensor(relation.location_log_map(prior).astype(Fm.dtype))
    if not cfg.use_appearance:
        return ops.reshape(log_loc, (1,) + log_loc.shape)
    scores = relation.appearance_scores(Fm, grid, cfg.patch_sizes, cfg.fusion)
    if log_loc is None:
        return scores
    return relation.semantic_scores(scores, log_loc, cfg.fusion)


def sia_relation(F: Tensor, cfg: IAConfig) -> relation.SpatialRelationMap:
    F = as_tensor(F)
    return relation.SpatialRelationMap(tuple(F.shape[2:]), ops.softmax_rows(sia_scores(F, cfg)))


def sia_forward(F: Tensor, cfg: IAConfig) -> Tensor:
    """Aggregate spatial features through the relation map: ``E = F S^T`` per item."""
    F = as_tensor(F)
    Fm, _ = _flatten(F)
    S = ops.softmax_rows(sia_scores(F, cfg))
    return ops.reshape(ops.matmul(Fm, ops.transpose(S)), F.shape)


def cia_relation(F: Tensor) -> ChannelRelationMap:
    Fm, _ = _flatten(as_tensor(F))
    return ChannelRelationMap(ops.softmax_rows(ops.matmul(Fm, ops.transpose(Fm))))


def cia_forward(F: Tensor) -> Tensor:
    """Aggregate channel features through the channel relation map: ``E = C F``."""
    F = as_tensor(F)
    Fm, _ = _flatten(F)
    Cmap = ops.softmax_rows(ops.matmul(Fm, ops.transpose(Fm)))
    return ops.reshape(ops.matmul(Cmap, Fm), F.shape)


def ia_residual(F: Tensor, inner: str, bn: BatchNorm, cfg: IAConfig | None, training: bool) -> Tensor:
    """``Y = BN(E) + F`` where ``E`` is the SIA or CIA aggregation of ``F``."""
    inner = inner.upper()
    if inner == "SIA":
        E = sia_forward(F, cfg)
    elif inner == "CIA":
        E = cia_forward(F)
    else:
        raise ConfigurationError(f"inner module must be SIA or CIA, got {inner!r}")
    return ops.add(bn(E, training), F)


def ia_block(F: Tensor, cfg: IAConfig, params: IABlockParams, training: bool) -> Tensor:
    F = as_tensor(F)
    a = cfg.arrangement
    if a == "SIA_THEN_CIA":
        return ia_residual(ia_residual(F, "SIA", params.bn_sia, cfg, training), "CIA", params.bn_cia, cfg, training)
    if a == "CIA_THEN_SIA":
        return ia_residual(ia_residual(F, "CIA", params.bn_cia, cfg, training), "SIA", params.bn_sia, cfg, training)
    if a == "SIA_ONLY":
        return ia_residual(F, "SIA", params.bn_sia, cfg, training)
    if a == "CIA_ONLY":
        return ia_residual(F, "CIA", params.bn_cia, cfg, training)
    spatial = params.bn_sia(sia_forward(F, cfg), training)
    channel = params.bn_cia(cia_forward(F), training)
    return ops.add(ops.add(F, spatial), channel)


def sia_flops(C: int, H: int, W: int, Ks=relation.DEFAULT_PATCH_SIZES) -> int:
    """Multiplies of one SIA pass: Gram ``C*M^2`` plus aggregation ``C*M^2``.

    Larger context patches reuse the Gram entries through shifted sums, so the
    count does not depend on ``Ks``.
    """
    if min(C, H, W) < 1:
        raise ConfigurationError(f"dimensions must be positive: C={C}, H={H}, W={W}")
    M = H * W
    return 2 * C * M * M


def cia_flops(C: int, H: int, W: int) -> int:
    """Multiplies of one CIA pass: channel Gram ``M*C^2`` plus aggregation ``M*C^2``."""
    if min(C, H, W) < 1:
        raise ConfigurationError(f"dimensions must be positive: C={C}, H={H}, W={W}")
    return 2 * H * W * C * C


def ia_block_flops(C: int, H: int, W: int, cfg: IAConfig) -> int:
    a = cfg.arrangement
    total = 0
    if a != "CIA_ONLY":
        total += sia_flops(C, H, W, cfg.patch_sizes) if cfg.use_appearance else C * (H * W) ** 2
    if a != "SIA_ONLY":
        total += cia_flops(C, H, W)
    return total
