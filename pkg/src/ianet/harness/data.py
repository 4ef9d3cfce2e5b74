"""Synthetic pedestrian images with identity colors and pose/scale nuisances."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import iatn
from ..errors import ConfigurationError

# RGB in [0, 1]; the first ``palette_size`` entries are used.
PALETTE = np.array(
    [
        [0.85, 0.10, 0.10],
        [0.10, 0.55, 0.15],
        [0.15, 0.25, 0.85],
        [0.95, 0.85, 0.15],
        [0.60, 0.15, 0.70],
        [0.10, 0.75, 0.80],
        [0.95, 0.55, 0.10],
        [0.95, 0.95, 0.95],
        [0.05, 0.05, 0.05],
        [0.55, 0.35, 0.20],
    ]
)
ACCESSORY_STATES = 3  # none, left, right
ACCESSORY_COLOR = np.array([0.30, 0.20, 0.10])
BACKGROUND = 0.5

# Canonical figure, centered at the origin, y pointing down: (y0, y1, x0, x1).
HEAD = (-24.0, -14.0, -4.0, 4.0)
TORSO = (-14.0, 6.0, -7.0, 7.0)
LEGS = ((6.0, 24.0, -6.0, -1.0), (6.0, 24.0, 1.0, 6.0))
BAG = {1: (-6.0, 4.0, -11.0, -7.0), 2: (-6.0, 4.0, 7.0, 11.0)}
HALF_HEIGHT = 24.0
HALF_WIDTH = 11.0

SPLITS = ("train", "query", "gallery")


@dataclass(frozen=True)
class SyntheticSpec:
    num_ids: int = 20
    images_per_id: int = 24
    canvas: tuple = (64, 32)
    palette_size: int = 6
    translation: float = 6.0
    scale_range: tuple = (0.7, 1.3)
    noise_range: tuple = (0.0, 0.05)
    train_per_id: int | None = None  # default: half of images_per_id
    queries_per_id: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_ids < 2:
            raise ConfigurationError(f"num_ids must be >= 2, got {self.num_ids}")
        if not 1 <= self.palette_size <= len(PALETTE):
            raise ConfigurationError(f"palette_size must be in [1, {len(PALETTE)}]")
        if self.num_ids > self.identity_space:
            raise ConfigurationError(
                f"{self.num_ids} identities exceed the {self.identity_space} distinct factor combinations"
            )
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigurationError(f"bad scale range {self.scale_range}")
        if not 0 <= self.noise_range[0] <= self.noise_range[1]:
            raise ConfigurationError(f"bad noise range {self.noise_range}")
        H, W = self.canvas
        if HALF_HEIGHT * hi > H / 2 or HALF_WIDTH * hi > W / 2:
            raise ConfigurationError(
                f"canvas {H}x{W} too small for figure at scale {hi} "
                f"(needs {2 * HALF_HEIGHT * hi:.1f}x{2 * HALF_WIDTH * hi:.1f})"
            )
        if self.gallery_per_id < 2:
            raise ConfigurationError(
                f"{self.images_per_id} images per id leave {self.gallery_per_id} gallery images; need >= 2"
            )
        if self.queries_per_id < 1 or self.n_train < 1:
            raise ConfigurationError("need at least one train and one query image per identity")

    @property
    def identity_space(self) -> int:
        return self.palette_size**3 * ACCESSORY_STATES

    @property
    def n_train(self) -> int:
        return self.images_per_id // 2 if self.train_per_id is None else self.train_per_id

    @property
    def gallery_per_id(self) -> int:
        return self.images_per_id - self.n_train - self.queries_per_id


@dataclass(frozen=True)
class Identity:
    head: int
    torso: int
    legs: int
    accessory: int


@dataclass
class Split:
    images: np.ndarray  # [N, 3, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] int64

    def __len__(self):
        return len(self.labels)


@dataclass
class Dataset:
    train: Split
    query: Split
    gallery: Split
    identities: list

    def split(self, name: str) -> Split:
        return getattr(self, name)


def sample_identities(spec: SyntheticSpec, rng: np.random.Generator) -> list[Identity]:
    """Distinct (head, torso, legs, accessory) tuples, drawn without replacement."""
    P = spec.palette_size
    codes = rng.choice(spec.identity_space, size=spec.num_ids, replace=False)
    out = []
    for c in codes:
        c = int(c)
        acc, c = c % ACCESSORY_STATES, c // ACCESSORY_STATES
        legs, c = c % P, c // P
        torso, head = c % P, c // P
        out.append(Identity(head, torso, legs, acc))
    return out


def render(ident: Identity, canvas, shift=(0.0, 0.0), scale: float = 1.0) -> np.ndarray:
    """Draw one figure into a ``[3, H, W]`` image by inverse-mapping pixel centers."""
    H, W = canvas
    py, px = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    u = (py - H / 2 - shift[0]) / scale
    v = (px - W / 2 - shift[1]) / scale
    img = np.full((3, H, W), BACKGROUND)

    def paint(box, color):
        y0, y1, x0, x1 = box
        mask = (u >= y0) & (u < y1) & (v >= x0) & (v < x1)
        img[:, mask] = np.asarray(color)[:, None]

    paint(TORSO, PALETTE[ident.torso])
    paint(HEAD, PALETTE[ident.head])
    for leg in LEGS:
        paint(leg, PALETTE[ident.legs])
    if ident.accessory:
        paint(BAG[ident.accessory], ACCESSORY_COLOR)
    return img


def generate(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    idents = sample_identities(spec, rng)
    H, W = spec.canvas
    n = spec.images_per_id
    images = np.empty((spec.num_ids, n, 3, H, W), dtype=np.float32)
    for i, ident in enumerate(idents):
        for j in range(n):
            ty, tx = rng.uniform(-spec.translation, spec.translation, size=2)
            s = rng.uniform(*spec.scale_range)
            sd = rng.uniform(*spec.noise_range)
            img = render(ident, spec.canvas, (ty, tx), s)
            if sd > 0:
                img = img + rng.normal(0.0, sd, size=img.shape)
            images[i, j] = np.clip(img, 0.0, 1.0)
    bounds = {
        "train": (0, spec.n_train),
        "query": (spec.n_train, spec.n_train + spec.queries_per_id),
        "gallery": (spec.n_train + spec.queries_per_id, n),
    }
    splits = {}
    for name, (a, b) in bounds.items():
        imgs = images[:, a:b].reshape(-1, 3, H, W)
        labels = np.repeat(np.arange(spec.num_ids, dtype=np.int64), b - a)
        splits[name] = Split(np.ascontiguousarray(imgs), labels)
    return Dataset(identities=idents, **splits)


def save_dataset(ds: Dataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        split = ds.split(name)
        iatn.save(directory / f"{name}_images.iatn", split.images)
        (directory / f"{name}_labels.txt").write_text(
            "".join(f"{int(l)}\n" for l in split.labels), encoding="utf-8"
        )


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    splits = {}
    for name in SPLITS:
        images = iatn.load(directory / f"{name}_images.iatn")
        text = (directory / f"{name}_labels.txt").read_text(encoding="utf-8")
        labels = np.array([int(t) for t in text.split()], dtype=np.int64)
        if len(labels) != len(images):
            raise ValueError(f"{name}: {len(images)} images but {len(labels)} labels")
        splits[name] = Split(images, labels)
    return Dataset(identities=[], **splits)
