"""Identity-classification training and retrieval evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, TrainingError
from ..model import BackboneConfig, IANet, loss as ce_loss
from ..tensor import GradTape, Tensor
from .data import Dataset, Split
from .metrics import RetrievalReport, cmc_map, distance_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    batch: int = 32
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0 or self.batch < 1 or self.epochs < 0:
            raise ConfigurationError(f"bad hyperparameters lr={self.lr} batch={self.batch} epochs={self.epochs}")


class Adam:
    def __init__(self, params: list[Tensor], lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, params: list[Tensor], grads: list[np.ndarray]) -> list[Tensor]:
        """Return updated parameter tensors; inputs are left untouched."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            g = g.astype(p.dtype, copy=False)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            upd = (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)
            out.append(Tensor(p.data - upd))
        return out


@dataclass
class TrainResult:
    model: IANet
    losses: list = field(default_factory=list)  # mean training loss per epoch


def train_model(model: IANet, data: Split, hp: TrainConfig) -> TrainResult:
    """Run ``hp.epochs`` epochs of mini-batch Adam on cross-entropy."""
    if len(data) == 0:
        raise ConfigurationError("training split is empty")
    rng = np.random.default_rng([hp.seed, 1])
    params = model.trainable()
    opt = Adam(params, hp.lr, hp.beta1, hp.beta2, hp.eps)
    images = data.images.astype(model.dtype, copy=False)
    n = len(data)
    losses = []
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch):
            idx = order[start : start + hp.batch]
            for p in params:
                p.requires_grad = True
            with GradTape() as tape:
                _, logits = model.forward(Tensor(images[idx]), training=True)
                loss = ce_loss(logits, data.labels[idx])
            grads = tape.backward(loss, wrt=params)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"loss became {value} in epoch {epoch}", epoch=epoch)
            total += value * len(idx)
            params = opt.step(params, grads)
            model.set_trainable(params)
        losses.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, losses[-1])
    for p in params:
        p.requires_grad = False
    return TrainResult(model, losses)


def train(cfg: BackboneConfig, data: Split, hp: TrainConfig) -> TrainResult:
    """Build a fresh model from ``hp.seed`` and train it."""
    return train_model(IANet(cfg, seed=hp.seed), data, hp)


def evaluate(model: IANet, ds: Dataset) -> RetrievalReport:
    q = model.embed(ds.query.images)
    g = model.embed(ds.gallery.images)
    return cmc_map(distance_matrix(q, g), ds.query.labels, ds.gallery.labels)
