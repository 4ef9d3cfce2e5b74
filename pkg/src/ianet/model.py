"""Toy convolutional backbone with IA blocks at stage outputs.

Layout for a ``3x64x32`` input: a 3x3 stem, then four single-conv stages of
widths ``[16, 32, 64, 128]``. Stage 1 keeps resolution, stages 2-4 halve it,
except stage 4 when ``remove_last_stride`` is set. Stage grids are then
64x32, 32x16, 16x8 and 16x8 (8x4 with the last stride kept).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .block import IABlockParams, IAConfig, ia_block
from .errors import ConfigurationError, DimensionError
from .ops import BatchNorm
from .tensor import Tensor

STAGES = (1, 2, 3, 4)
EMBED_BATCH = 64


def default_sigmas(grid: tuple[int, int]) -> tuple[float, float]:
    """Std-devs proportional to the stage grid: (5, 10) at 16x8 and (10, 20) at 32x16."""
    H, W = grid
    return 5.0 * W / 8.0, 10.0 * H / 16.0


@dataclass(frozen=True)
class BackboneConfig:
    num_ids: int = 2
    input_shape: tuple = (3, 64, 32)
    widths: tuple = (16, 32, 64, 128)
    ia_placement: tuple = (2, 3)
    remove_last_stride: bool = True
    ia: IAConfig = field(default_factory=IAConfig)
    # None means scale with the stage grid
    sigma1: float | None = None
    sigma2: float | None = None
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "ia_placement", tuple(sorted(set(int(s) for s in self.ia_placement))))
        if len(self.widths) != len(STAGES) or min(self.widths) < 1:
            raise ConfigurationError(f"need {len(STAGES)} positive stage widths, got {self.widths}")
        bad = [s for s in self.ia_placement if s not in STAGES]
        if bad:
            raise ConfigurationError(f"ia_placement entries must be in {STAGES}, got {bad}")
        if self.num_ids < 1:
            raise ConfigurationError(f"num_ids must be positive, got {self.num_ids}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        for s, (h, w) in enumerate(self.stage_grids(), 1):
            if h < 1 or w < 1:
                raise ConfigurationError(f"stage {s} grid collapses to {h}x{w}")

    def stage_strides(self) -> tuple:
        return (1, 2, 2, 1 if self.remove_last_stride else 2)

    def stage_grids(self) -> list[tuple[int, int]]:
        _, H, W = self.input_shape
        grids = []
        for s in self.stage_strides():
            H = ops.conv_output_extent(H, 3, s, 1, allow_truncation=True)
            W = ops.conv_output_extent(W, 3, s, 1, allow_truncation=True)
            grids.append((H, W))
        return grids

    def ia_config(self, stage: int) -> IAConfig:
        s1, s2 = default_sigmas(self.stage_grids()[stage - 1])
        return replace(
            self.ia,
            sigma1=self.sigma1 if self.sigma1 is not None else s1,
            sigma2=self.sigma2 if self.sigma2 is not None else s2,
        )

    @property
    def embed_dim(self) -> int:
        return self.widths[-1]


class IANet:
    """Backbone parameters, IA block parameters and the forward pass."""

    def __init__(self, cfg: BackboneConfig, seed: int = 0):
        self.cfg = cfg
        dt = np.dtype(cfg.dtype)
        self.dtype = dt
        rng = np.random.default_rng(seed)

        def he(cout, cin, k=3):
            std = np.sqrt(2.0 / (cin * k * k))
            return Tensor(rng.normal(0.0, std, size=(cout, cin, k, k)).astype(dt))

        cin = cfg.input_shape[0]
        w0 = cfg.widths[0]
        self.stem_w = he(w0, cin)
        self.stem_bn = BatchNorm(w0, dt)
        self.stage_w, self.stage_bn = {}, {}
        prev = w0
        for s, width in zip(STAGES, cfg.widths):
            self.stage_w[s] = he(width, prev)
            self.stage_bn[s] = BatchNorm(width, dt)
            prev = width
        self.ia = {s: IABlockParams.fresh(cfg.widths[s - 1], dt) for s in cfg.ia_placement}
        self.ia_cfg = {s: cfg.ia_config(s) for s in cfg.ia_placement}
        self.fc_w = Tensor(rng.normal(0.0, 0.01, size=(cfg.num_ids, cfg.embed_dim)).astype(dt))
        self.fc_b = Tensor(np.zeros(cfg.num_ids, dtype=dt))

    # -- parameters --------------------------------------------------------------

    def trainable(self) -> list[Tensor]:
        out = [self.stem_w, self.stem_bn.gamma, self.stem_bn.beta]
        for s in STAGES:
            out += [self.stage_w[s], self.stage_bn[s].gamma, self.stage_bn[s].beta]
        for s in sorted(self.ia):
            out += self.ia[s].trainable()
        out += [self.fc_w, self.fc_b]
        return out

    def set_trainable(self, values: list[Tensor]) -> None:
        """Swap in new parameter tensors in :meth:`trainable` order."""
        it = iter(values)
        self.stem_w, self.stem_bn.gamma, self.stem_bn.beta = next(it), next(it), next(it)
        for s in STAGES:
            self.stage_w[s] = next(it)
            self.stage_bn[s].gamma, self.stage_bn[s].beta = next(it), next(it)
        for s in sorted(self.ia):
            p = self.ia[s]
            p.bn_sia.gamma, p.bn_sia.beta, p.bn_cia.gamma, p.bn_cia.beta = (next(it) for _ in range(4))
        self.fc_w, self.fc_b = next(it), next(it)

    def state_dict(self) -> dict:
        out = {"stem.weight": self.stem_w.data, **self.stem_bn.tensors("stem.bn.")}
        for s in STAGES:
            out[f"stage{s}.weight"] = self.stage_w[s].data
            out.update(self.stage_bn[s].tensors(f"stage{s}.bn."))
        for s, p in self.ia.items():
            out.update(p.tensors(f"ia{s}."))
        out["classifier.weight"] = self.fc_w.data
        out["classifier.bias"] = self.fc_b.data
        return out

    def load_state_dict(self, tensors: dict) -> None:
        dt = self.dtype
        expected = set(self.state_dict())
        missing = expected - set(tensors)
        if missing:
            raise ConfigurationError(f"checkpoint is missing tensors: {sorted(missing)}")

        def t(name):
            arr = np.asarray(tensors[name], dtype=dt)
            if arr.shape != self.state_dict()[name].shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} vs model {self.state_dict()[name].shape}")
            return Tensor(arr.copy())

        self.stem_w = t("stem.weight")
        self.stem_bn.load("stem.bn.", tensors, dt)
        for s in STAGES:
            self.stage_w[s] = t(f"stage{s}.weight")
            self.stage_bn[s].load(f"stage{s}.bn.", tensors, dt)
        for s, p in self.ia.items():
            p.load(f"ia{s}.", tensors, dt)
        self.fc_w = t("classifier.weight")
        self.fc_b = t("classifier.bias")

    # -- forward -------------------------------------------------------------------

    def features(self, images, training: bool, capture: dict | None = None) -> Tensor:
        """Pooled embedding ``[B, embed_dim]``.

        ``capture`` (if given) receives each stage output before its IA block
        under the key ``stage{s}``.
        """
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.cfg.input_shape):
            raise DimensionError(f"images must be [B,{','.join(map(str, self.cfg.input_shape))}], got {x.shape}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        x = ops.relu(self.stem_bn(ops.conv2d(x, self.stem_w, 1, 1), training))
        for s, stride in zip(STAGES, self.cfg.stage_strides()):
            x = ops.conv2d(x, self.stage_w[s], stride, 1, allow_truncation=True)
            x = ops.relu(self.stage_bn[s](x, training))
            if capture is not None:
                capture[f"stage{s}"] = x
            if s in self.ia:
                x = ia_block(x, self.ia_cfg[s], self.ia[s], training)
        return ops.global_avg_pool(x)

    def forward(self, images, training: bool = False, capture: dict | None = None):
        emb = self.features(images, training, capture)
        logits = ops.linear(emb, self.fc_w, self.fc_b)
        return emb, logits

    __call__ = forward

    def embed(self, images, batch_size: int = EMBED_BATCH) -> np.ndarray:
        """Eval-mode embeddings, computed in fixed-size chunks."""
        images = np.asarray(images.data if isinstance(images, Tensor) else images)
        chunks = [
            self.features(images[i : i + batch_size], training=False).data
            for i in range(0, len(images), batch_size)
        ]
        if not chunks:
            return np.zeros((0, self.cfg.embed_dim), dtype=self.dtype)
        return np.concatenate(chunks)


def loss(logits: Tensor, labels) -> Tensor:
    return ops.cross_entropy(logits, labels)
