"""Regenerate the golden embedding used by the model tests.

Run after any intentional change to the forward pass or parameter layout:

    python3 scripts/freeze_golden.py
"""

from pathlib import Path

import numpy as np

from ianet import iatn
from ianet.model import BackboneConfig, IANet

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden" / "embedding.iatn"


def golden_model() -> IANet:
    model = IANet(BackboneConfig(num_ids=4, dtype="float64"), seed=11)
    # nonzero IA scales so the golden covers the block, not just the backbone
    rng = np.random.default_rng(3)
    for p in model.ia.values():
        for t in p.trainable():
            t.data[:] = rng.uniform(0.2, 0.8, t.shape)
    return model


def golden_images() -> np.ndarray:
    return np.random.default_rng(5).uniform(0.0, 1.0, size=(2, 3, 64, 32))


def golden_embedding() -> np.ndarray:
    return golden_model().embed(golden_images())


def main() -> None:
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    emb = golden_embedding()
    iatn.save(GOLDEN, emb)
    print(f"wrote {GOLDEN} shape={emb.shape}")


if __name__ == "__main__":
    main()
