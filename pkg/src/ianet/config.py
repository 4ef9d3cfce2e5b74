"""Plain-text experiment configs: UTF-8 ``key = value`` lines.

Blank lines and ``#`` comments are ignored. Every key has a default, so an
empty file is a valid config. Overrides use the same ``key=value`` syntax.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .block import IAConfig
from .errors import ConfigurationError
from .harness.data import SyntheticSpec
from .harness.train import TrainConfig
from .model import STAGES, BackboneConfig


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _ints(v: str) -> tuple:
    body = v.strip().strip("()[]{}")
    if body.lower() in ("", "none"):
        return ()
    return tuple(int(t) for t in body.replace(",", " ").split())


def _word(v: str) -> str:
    return v.strip().upper()


def _opt_float(v: str):
    return None if v.lower() in ("auto", "none") else float(v)


def _dtype(v: str) -> str:
    if v not in ("float32", "float64"):
        raise ValueError(f"expected float32 or float64, got {v!r}")
    return v


# key -> (parser, default)
KEYS: dict[str, tuple[Callable[[str], object], object]] = {
    "stages": (_int, len(STAGES)),
    "widths": (_ints, (16, 32, 64, 128)),
    "ia_placement": (_ints, (2, 3)),
    "patch_sizes": (_ints, (1, 2, 3)),
    "fusion": (_word, "PROD"),
    "sigma1": (_opt_float, None),
    "sigma2": (_opt_float, None),
    "arrangement": (_word, "SIA_THEN_CIA"),
    "remove_last_stride": (_bool, True),
    "seed": (_int, 0),
    "lr": (_float, 3e-4),
    "batch": (_int, 32),
    "epochs": (_int, 20),
    "use_location": (_bool, True),
    "use_appearance": (_bool, True),
    "dtype": (_dtype, "float32"),
    "num_ids": (_int, 20),
    "images_per_id": (_int, 24),
    "train_per_id": (_int, 0),  # 0: half of images_per_id
    "queries_per_id": (_int, 2),
    "palette_size": (_int, 6),
    "translation": (_float, 6.0),
    "scale_min": (_float, 0.7),
    "scale_max": (_float, 1.3),
    "noise_max": (_float, 0.05),
    "data_seed": (_int, 0),
}

VALID_KEYS = tuple(KEYS)


@dataclass(frozen=True)
class ExperimentConfig:
    model: BackboneConfig
    train: TrainConfig
    data: SyntheticSpec
    values: tuple  # sorted (key, value) pairs, for logging and ablation ids

    def get(self, key: str):
        return dict(self.values)[key]


def _unknown(key: str, where: str) -> ConfigurationError:
    return ConfigurationError(f"{where}: unknown key {key!r}; valid keys: {', '.join(VALID_KEYS)}")


def _split(line: str, where: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigurationError(f"{where}: expected 'key = value', got {line.strip()!r}")
    key, value = line.split("=", 1)
    return key.strip(), value.strip()


def _parse_value(key: str, raw: str, where: str):
    if key not in KEYS:
        raise _unknown(key, where)
    try:
        return KEYS[key][0](raw)
    except ValueError as exc:
        raise ConfigurationError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse config text into ``{key: value}``; errors carry ``source:line``."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{n}"
        key, raw = _split(body, where)
        if key in out:
            raise ConfigurationError(f"{where}: duplicate key {key!r}")
        out[key] = _parse_value(key, raw, where)
    return out


def parse_overrides(items: Iterable[str]) -> dict:
    out = {}
    for item in items:
        where = f"--set {item}"
        key, raw = _split(item, where)
        out[key] = _parse_value(key, raw, where)
    return out


def build(values: dict, source: str = "<config>") -> ExperimentConfig:
    """Turn a (partial) key map into validated model, training and data configs."""
    for key in values:
        if key not in KEYS:
            raise _unknown(key, source)
    v = {k: d for k, (_, d) in KEYS.items()}
    v.update(values)
    if v["stages"] != len(STAGES):
        raise ConfigurationError(f"{source}: the toy backbone has exactly {len(STAGES)} stages, got {v['stages']}")
    try:
        ia = IAConfig(
            patch_sizes=v["patch_sizes"],
            fusion=v["fusion"],
            arrangement=v["arrangement"],
            use_location=v["use_location"],
            use_appearance=v["use_appearance"],
        )
        model = BackboneConfig(
            num_ids=v["num_ids"],
            widths=v["widths"],
            ia_placement=v["ia_placement"],
            remove_last_stride=v["remove_last_stride"],
            ia=ia,
            sigma1=v["sigma1"],
            sigma2=v["sigma2"],
            dtype=v["dtype"],
        )
        # σ validity is checked per stage once the auto values are known
        for s in model.ia_placement:
            model.ia_config(s)
        train = TrainConfig(lr=v["lr"], batch=v["batch"], epochs=v["epochs"], seed=v["seed"])
        data = SyntheticSpec(
            num_ids=v["num_ids"],
            images_per_id=v["images_per_id"],
            train_per_id=v["train_per_id"] or None,
            queries_per_id=v["queries_per_id"],
            palette_size=v["palette_size"],
            translation=v["translation"],
            scale_range=(v["scale_min"], v["scale_max"]),
            noise_range=(0.0, v["noise_max"]),
            seed=v["data_seed"],
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    return ExperimentConfig(model, train, data, tuple(sorted(v.items())))


def load(path: str | Path | None = None, overrides: Iterable[str] = (), extra: dict | None = None) -> ExperimentConfig:
    """Read a config file (optional), then apply ``extra`` and ``--set`` overrides in that order."""
    values = {}
    source = "<defaults>"
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {p}: {exc.strerror}") from None
        source = str(p)
        values = parse_text(text, source)
    values.update(extra or {})
    values.update(parse_overrides(overrides))
    return build(values, source)


def with_values(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Rebuild ``cfg`` with some keys changed."""
    v = dict(cfg.values)
    v.update(changes)
    return build(v)


def dump(cfg: ExperimentConfig) -> str:
    """Serialize back to ``key = value`` text that :func:`load` reads identically."""

    def fmt(x):
        if isinstance(x, tuple):
            return ",".join(str(i) for i in x) if x else "none"
        if x is None:
            return "auto"
        if isinstance(x, bool):
            return "true" if x else "false"
        return repr(x) if isinstance(x, float) else str(x)

    return "".join(f"{k} = {fmt(val)}\n" for k, val in cfg.values)


__all__ = [
    "KEYS",
    "VALID_KEYS",
    "ExperimentConfig",
    "build",
    "dump",
    "load",
    "parse_overrides",
    "parse_text",
    "with_values",
]
