"""Ablation grids: train and evaluate config variants on one shared dataset."""

from __future__ import annotations

import itertools
import re
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .. import config as cfgmod
from ..errors import ConfigurationError
from .data import Dataset, generate
from .train import evaluate, train

# Pseudo-key values expand to real config keys.
VARIANTS = {
    "baseline": {"ia_placement": ()},
    "location": {"use_location": True, "use_appearance": False},
    "appearance": {"use_location": False, "use_appearance": True},
    "semantic": {"use_location": True, "use_appearance": True},
}

# One preset per ablation table; each starts with the plain backbone.
# (a)-(c) study SIA alone at stage 3, (d) the module arrangement, (e)-(f) placement.
PRESETS: dict[str, dict] = {
    "a": {
        "base": {"arrangement": "SIA_ONLY", "ia_placement": (3,), "variant": "appearance"},
        "grid": {"patch_sizes": [(1,), (2,), (3,), (5,)]},
    },
    "b": {
        "base": {"arrangement": "SIA_ONLY", "ia_placement": (3,), "variant": "appearance", "patch_sizes": (1, 2, 3)},
        "grid": {"fusion": ["MAX", "SUM", "PROD"]},
    },
    "c": {
        "base": {"arrangement": "SIA_ONLY", "ia_placement": (3,)},
        "grid": {"variant": ["location", "appearance", "semantic"]},
    },
    "d": {
        "base": {"ia_placement": (3,)},
        "grid": {"arrangement": ["CIA_ONLY", "PARALLEL", "CIA_THEN_SIA", "SIA_THEN_CIA"]},
    },
    "e": {"base": {}, "grid": {"ia_placement": [(1,), (2,), (3,), (4,)]}},
    "f": {"base": {}, "grid": {"ia_placement": [(2,), (3,), (2, 3)]}},
}

TSV_COLUMNS = ("config_id", "top1", "map", "loss_final", "seconds", "curve")


@dataclass
class AblationRow:
    config_id: str
    seed: int
    top1: float
    map: float
    losses: list
    seconds: float
    curve: str = ""
    settings: dict = field(default_factory=dict)

    @property
    def loss_final(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    def tsv(self) -> str:
        return (
            f"{self.config_id}\t{self.top1:.6f}\t{self.map:.6f}\t{self.loss_final:.6f}"
            f"\t{self.seconds:.3f}\t{self.curve}"
        )


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(map(str, v)) if v else "none"
    return str(v)


def expand_grid(grid: dict[str, Sequence]) -> list[dict]:
    """Cartesian product of the grid, keys in the given order, last key fastest."""
    keys = list(grid)
    for k in keys:
        if k != "variant" and k not in cfgmod.KEYS:
            raise ConfigurationError(
                f"unknown grid key {k!r}; valid keys: variant, {', '.join(cfgmod.VALID_KEYS)}"
            )
        if not len(grid[k]):
            raise ConfigurationError(f"grid key {k!r} has no values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def resolve(entry: dict) -> dict:
    """Replace the ``variant`` pseudo-key by the config keys it stands for."""
    out = {k: v for k, v in entry.items() if k != "variant"}
    if "variant" in entry:
        name = str(entry["variant"]).lower()
        if name not in VARIANTS:
            raise ConfigurationError(f"unknown variant {entry['variant']!r}; expected one of {sorted(VARIANTS)}")
        out.update(VARIANTS[name])
    return out


def config_id(entry: dict) -> str:
    return ";".join(f"{k}={_fmt(v)}" for k, v in entry.items()) or "default"


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", text)


def parse_grid(text: str, source: str = "<grid>") -> dict:
    """``key = v1 | v2 | ...`` lines; each value uses the config syntax."""
    grid = {}
    for n, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{n}"
        if "=" not in body:
            raise ConfigurationError(f"{where}: expected 'key = v1 | v2', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        values = [v.strip() for v in raw.split("|")]
        if key == "variant":
            grid[key] = [v.lower() for v in values]
        else:
            grid[key] = [cfgmod.parse_text(f"{key} = {v}", where)[key] for v in values]
    return grid


def _run_one(base_values: dict, entry: dict, seed: int, dataset: Dataset) -> AblationRow:
    values = dict(base_values)
    values.update(resolve(entry))
    values["seed"] = seed
    exp = cfgmod.build(values)
    start = time.perf_counter()
    result = train(exp.model, dataset.train, exp.train)
    report = evaluate(result.model, dataset)
    seconds = time.perf_counter() - start
    return AblationRow(config_id(entry), seed, report.top1, report.map, result.losses, seconds, settings=entry)


def run_grid(
    base: cfgmod.ExperimentConfig,
    grid: dict | str,
    seeds: Sequence[int] | None = None,
    out_dir: str | Path | None = None,
    include_baseline: bool = False,
    workers: int = 1,
    dataset: Dataset | None = None,
) -> list[AblationRow]:
    """Train every grid entry for every seed on one dataset generated from ``base``.

    ``grid`` is a key map or a preset name (``a``-``f``). Rows come back in
    grid order (seeds innermost) whatever ``workers`` is. With ``out_dir`` the
    table goes to ``results.tsv`` and loss curves to ``curves/<id>.tsv``.
    """
    base_values = dict(base.values)
    if isinstance(grid, str):
        if grid not in PRESETS:
            raise ConfigurationError(f"unknown preset {grid!r}; available: {', '.join(PRESETS)}")
        preset = PRESETS[grid]
        base_values.update(resolve(preset["base"]))
        grid = preset["grid"]
        include_baseline = True
    entries = expand_grid(grid)
    if include_baseline:
        entries = [{"variant": "baseline"}] + entries
    for e in entries:  # fail fast on invalid combinations
        cfgmod.build({**base_values, **resolve(e)})
    seeds = list(seeds) if seeds is not None else [base.train.seed]
    dataset = dataset if dataset is not None else generate(base.data)
    jobs = [(e, s) for e in entries for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, base_values, e, s, dataset) for e, s in jobs]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_one(base_values, e, s, dataset) for e, s in jobs]
    if len(seeds) > 1:
        for r in rows:
            r.config_id = f"{r.config_id};seed={r.seed}"
    if out_dir is not None:
        write_results(rows, out_dir)
    return rows


def write_results(rows: list[AblationRow], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    curves = out / "curves"
    curves.mkdir(parents=True, exist_ok=True)
    for r in rows:
        path = curves / f"{_slug(r.config_id)}.tsv"
        path.write_text("epoch\tloss\n" + "".join(f"{i}\t{v:.6f}\n" for i, v in enumerate(r.losses, 1)))
        r.curve = str(path.relative_to(out))
    table = out / "results.tsv"
    table.write_text("\t".join(TSV_COLUMNS) + "\n" + "".join(r.tsv() + "\n" for r in rows))
    return table


def summarize(rows: list[AblationRow]) -> dict[str, dict]:
    """Median top-1 / mAP / final loss per configuration over seeds."""
    groups: dict[str, list[AblationRow]] = {}
    for r in rows:
        groups.setdefault(config_id(r.settings), []).append(r)
    return {
        cid: {
            "top1": statistics.median(r.top1 for r in rs),
            "map": statistics.median(r.map for r in rs),
            "loss_final": statistics.median(r.loss_final for r in rs),
            "seeds": len(rs),
        }
        for cid, rs in groups.items()
    }


def ordering_holds(summary: dict[str, dict], order: Sequence[str], metric: str = "map") -> bool:
    """Whether median ``metric`` is non-decreasing along ``order`` (config ids)."""
    vals = [summary[c][metric] for c in order]
    return all(a <= b for a, b in zip(vals, vals[1:]))


def format_table(rows: list[AblationRow]) -> str:
    width = max([len("config_id")] + [len(r.config_id) for r in rows])
    lines = [f"{'config_id':<{width}}  top1    mAP     loss    sec"]
    for r in rows:
        lines.append(f"{r.config_id:<{width}}  {r.top1:.4f}  {r.map:.4f}  {r.loss_final:.4f}  {r.seconds:.1f}")
    return "\n".join(lines)
