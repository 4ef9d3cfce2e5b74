"""Spatial relation maps: appearance, Gaussian location, and their fusion.

All maps are over the ``M = H*W`` positions of a feature grid, with position
``i = y*W + x``. Fusion happens in log-domain and the outer softmax acts on
the fused log-scores, so PROD fusion is a sum of log-maps and its result is
the row-normalized product of the input maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import ops
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, as_tensor

FUSIONS = ("PROD", "SUM", "MAX")
DEFAULT_PATCH_SIZES = (1, 2, 3)


@dataclass(frozen=True)
class SpatialRelationMap:
    """Row-stochastic ``[M, M]`` (or batched ``[B, M, M]``) map on a grid."""

    grid: tuple[int, int]
    matrix: Tensor

    @property
    def M(self) -> int:
        return self.grid[0] * self.grid[1]

    def row(self, y: int, x: int, batch: int = 0) -> np.ndarray:
        """Relation weights of position (y, x) reshaped to ``[H, W]``."""
        H, W = self.grid
        m = self.matrix.data
        if m.ndim == 3:
            m = m[batch if m.shape[0] > 1 else 0]
        return m[y * W + x].reshape(H, W)


@dataclass(frozen=True)
class LocationPrior:
    sigma1: float  # horizontal (x, width) std-dev
    sigma2: float  # vertical (y, height) std-dev
    grid: tuple[int, int]

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ConfigurationError(
                f"location prior std-devs must be positive, got ({self.sigma1}, {self.sigma2})"
            )


def check_fusion(fusion: str) -> str:
    f = fusion.upper()
    if f not in FUSIONS:
        raise ConfigurationError(f"unknown fusion {fusion!r}; expected one of {FUSIONS}")
    return f


def _check_grid(Fmat: Tensor, grid) -> None:
    H, W = grid
    if H < 1 or W < 1 or Fmat.shape[-1] != H * W:
        raise DimensionError(f"feature matrix {Fmat.shape} does not match grid {H}x{W}")


def _unique_sizes(Ks: Iterable[int]) -> list[int]:
    Ks = sorted(set(int(k) for k in Ks))
    if not Ks:
        raise ConfigurationError("at least one context patch size is required")
    for k in Ks:
        if k < 1:
            raise ConfigurationError(f"patch sizes must be positive, got {k}")
    return Ks


# -- appearance relations --------------------------------------------------------------


def gram_logits(Fmat) -> Tensor:
    """Pairwise dot products ``f_i . f_j`` of the columns of ``[..., C, M]``."""
    Fmat = as_tensor(Fmat)
    return ops.matmul(ops.transpose(Fmat), Fmat)


def window_offsets(K: int) -> list[tuple[int, int]]:
    per_axis = ops.patch_offsets(K)
    return [(dy, dx) for dy in per_axis for dx in per_axis]


def patch_logits(G, grid, K: int) -> Tensor:
    """Context-patch logits from a Gram matrix by index-shifted accumulation.

    No extra multiplies: the KxK patch dot product between positions i and j
    is the sum of Gram entries ``G[i+d, j+d]`` over the window offsets.
    """
    return ops.shifted_patch_sum(as_tensor(G), tuple(grid), window_offsets(K))


def multi_patch_logits(G, grid, Ks) -> list[Tensor]:
    """Patch logits for every K in ``Ks`` (ascending), sharing partial sums.

    Windows nest (the K window lies inside the K+1 window), so each larger K
    only adds the offsets not already accumulated.
    """
    G = as_tensor(G)
    out = []
    prev, done = None, set()
    for K in _unique_sizes(Ks):
        offs = [d for d in window_offsets(K) if d not in done]
        prev = ops.shifted_patch_sum(G, tuple(grid), offs, base=prev)
        done.update(offs)
        out.append(prev)
    return out


def patch_logits_reference(Fmat, grid, K: int) -> np.ndarray:
    """Naive path: materialize zero-padded KxK patches and dot them."""
    F = np.asarray(Fmat.data if isinstance(Fmat, Tensor) else Fmat, dtype=np.float64)
    H, W = grid
    C, M = F.shape
    offs = ops.patch_offsets(K)
    lo = -offs[0]
    hi = offs[-1]
    padded = np.zeros((C, H + lo + hi, W + lo + hi))
    padded[:, lo : lo + H, lo : lo + W] = F.reshape(C, H, W)
    patches = np.empty((M, C * K * K))
    for y in range(H):
        for x in range(W):
            patches[y * W + x] = padded[:, y : y + K, x : x + K].reshape(-1)
    return patches @ patches.T


def _fuse_log(fusion: str, log_maps: Sequence[Tensor]) -> Tensor:
    out = log_maps[0]
    for m in log_maps[1:]:
        if fusion == "PROD":
            out = ops.add(out, m)
        elif fusion == "SUM":
            out = ops.logaddexp(out, m)
        else:
            out = ops.maximum(out, m)
    return out


def appearance_scores(Fmat, grid, Ks=DEFAULT_PATCH_SIZES, fusion: str = "PROD") -> Tensor:
    """Fused log-scores whose row softmax is the multi-context appearance map.

    PROD sums the raw patch logits: each per-context log-softmax constant is
    constant along a row and cancels under the outer softmax. SUM and MAX
    fuse the per-context log-maps.
    """
    Fmat = as_tensor(Fmat)
    _check_grid(Fmat, grid)
    fusion = check_fusion(fusion)
    logits = multi_patch_logits(gram_logits(Fmat), grid, Ks)
    if len(logits) == 1 or fusion == "PROD":
        return _fuse_log("PROD", logits)
    return _fuse_log(fusion, [ops.log_softmax(L) for L in logits])


def appearance_log_map(Fmat, grid, Ks=DEFAULT_PATCH_SIZES, fusion: str = "PROD") -> Tensor:
    """Log of the multi-context appearance map, differentiable in ``Fmat``."""
    return ops.log_softmax(appearance_scores(Fmat, grid, Ks, fusion))


def appearance_map_single(Fmat, grid, K: int) -> SpatialRelationMap:
    Fmat = as_tensor(Fmat)
    _check_grid(Fmat, grid)
    S = ops.softmax_rows(patch_logits(gram_logits(Fmat), grid, K))
    return SpatialRelationMap(tuple(grid), S)


def appearance_map_multi(Fmat, grid, Ks=DEFAULT_PATCH_SIZES, fusion: str = "PROD") -> SpatialRelationMap:
    return SpatialRelationMap(tuple(grid), ops.softmax_rows(appearance_scores(Fmat, grid, Ks, fusion)))


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _fuse_prob_np(fusion: str, maps: Sequence[np.ndarray]) -> np.ndarray:
    if fusion == "PROD":
        return np.prod(maps, axis=0)
    if fusion == "SUM":
        return np.sum(maps, axis=0)
    return np.max(maps, axis=0)


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    return m / m.sum(axis=-1, keepdims=True)


def appearance_map_literal(Fmat, grid, Ks=DEFAULT_PATCH_SIZES, fusion: str = "PROD") -> np.ndarray:
    """Reference multi-context map: softmax each context, fuse the probabilities,
    then apply the outer softmax to the log of the fused map (a row normalization)."""
    fusion = check_fusion(fusion)
    maps = [_softmax_np(patch_logits_reference(Fmat, grid, K)) for K in _unique_sizes(Ks)]
    return _normalize_rows(_fuse_prob_np(fusion, maps))


# -- location relations -----------------------------------------------------------------


def _offsets(grid) -> tuple[np.ndarray, np.ndarray]:
    H, W = grid
    idx = np.arange(H * W)
    x, y = idx % W, idx // W
    return x[None, :] - x[:, None], y[None, :] - y[:, None]


def location_weights(prior: LocationPrior) -> np.ndarray:
    """Unnormalized 2-D Gaussian ``l_ij`` over coordinate offsets."""
    dx, dy = _offsets(prior.grid)
    z = 2 * math.pi * prior.sigma1 * prior.sigma2
    return np.exp(-0.5 * (dx**2 / prior.sigma1**2 + dy**2 / prior.sigma2**2)) / z


def location_log_map(prior: LocationPrior) -> np.ndarray:
    """Log of the row-normalized location map, computed without underflow."""
    dx, dy = _offsets(prior.grid)
    logits = -0.5 * (dx**2 / prior.sigma1**2 + dy**2 / prior.sigma2**2)
    logits -= math.log(2 * math.pi * prior.sigma1 * prior.sigma2)
    return logits - ops._logsumexp_rows(logits)


def location_map(prior: LocationPrior) -> SpatialRelationMap:
    return SpatialRelationMap(tuple(prior.grid), Tensor(np.exp(location_log_map(prior))))


# -- semantic fusion ----------------------------------------------------------------------


def semantic_scores(appearance_scores: Tensor, log_location, fusion: str = "PROD") -> Tensor:
    """Fused log-scores of appearance and location; row softmax gives the semantic map.

    ``appearance_scores`` may be unnormalized (row constants cancel under
    PROD); for SUM and MAX it is normalized first.
    """
    fusion = check_fusion(fusion)
    log_location = as_tensor(log_location, dtype=appearance_scores.dtype)
    if fusion == "PROD":
        return ops.add(appearance_scores, log_location)
    return _fuse_log(fusion, [ops.log_softmax(appearance_scores), log_location])


def semantic_map(
    appearance: SpatialRelationMap, location: SpatialRelationMap, fusion: str = "PROD"
) -> SpatialRelationMap:
    """Fuse appearance and location maps and renormalize each row."""
    if tuple(appearance.grid) != tuple(location.grid):
        raise DimensionError(f"grid mismatch: {appearance.grid} vs {location.grid}")
    with np.errstate(divide="ignore"):
        la = Tensor(np.log(appearance.matrix.data))
        ll = np.log(location.matrix.data).astype(la.dtype)
    return SpatialRelationMap(tuple(appearance.grid), ops.softmax_rows(semantic_scores(la, ll, fusion)))


def semantic_map_literal(appearance: np.ndarray, location: np.ndarray, fusion: str = "PROD") -> np.ndarray:
    return _normalize_rows(_fuse_prob_np(check_fusion(fusion), [appearance, location]))


def row_sums_ok(matrix, tol: float = 1e-6) -> bool:
    m = np.asarray(matrix.data if isinstance(matrix, Tensor) else matrix)
    return bool(np.all(m >= 0) and np.all(np.abs(m.sum(axis=-1) - 1) <= tol))
