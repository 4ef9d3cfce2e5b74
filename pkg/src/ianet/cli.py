"""``ianet`` command line: train, eval, ablate, gradcheck, flops, dump-relation, gen-data.

Exit codes: 0 on success, 2 for bad configs, arguments or missing inputs,
1 for failures while running.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import gradcheck as gc
from . import iatn, pgm
from .block import cia_forward, sia_relation
from .errors import ConfigurationError, DimensionError, IANetError
from .harness import ablate as ablmod
from .harness.data import generate, load_dataset, save_dataset
from .harness.flops import RESNET50_PRESET, flop_report
from .harness.train import evaluate, train
from .model import STAGES, IANet
from .tensor import Tensor, perturbed_gradients

log = logging.getLogger("ianet")

CHECKPOINT_CONFIG = "config.txt"


class InputError(Exception):
    """Bad arguments or missing files; maps to exit code 2."""


# -- shared helpers -------------------------------------------------------------------


def _load_config(args, extra=None) -> cfgmod.ExperimentConfig:
    extra = dict(extra or {})
    if getattr(args, "seed", None) is not None:
        extra["seed"] = args.seed
    return cfgmod.load(args.config, args.set or (), extra)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(exp: cfgmod.ExperimentConfig, data_dir):
    if data_dir:
        if not Path(data_dir).is_dir():
            raise InputError(f"dataset directory {data_dir} does not exist")
        return load_dataset(data_dir)
    return generate(exp.data)


def save_checkpoint(directory, model: IANet, exp: cfgmod.ExperimentConfig) -> None:
    iatn.save_bundle(directory, model.state_dict())
    (Path(directory) / CHECKPOINT_CONFIG).write_text(cfgmod.dump(exp), encoding="utf-8")


def load_checkpoint(directory) -> tuple[IANet, cfgmod.ExperimentConfig]:
    d = Path(directory)
    if not (d / iatn.MANIFEST).is_file() or not (d / CHECKPOINT_CONFIG).is_file():
        raise InputError(f"no checkpoint at {d} (expected {iatn.MANIFEST} and {CHECKPOINT_CONFIG})")
    exp = cfgmod.load(d / CHECKPOINT_CONFIG)
    model = IANet(exp.model, seed=exp.train.seed)
    model.load_state_dict(iatn.load_bundle(d))
    return model, exp


def _curve_tsv(losses) -> str:
    return "epoch\tloss\n" + "".join(f"{i}\t{v:.6f}\n" for i, v in enumerate(losses, 1))


def _parse_ints(text: str, what: str) -> tuple:
    if text.strip().lower() == "none":
        return ()
    try:
        return tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise InputError(f"{what}: expected comma-separated integers, got {text!r}") from None


# -- subcommands ------------------------------------------------------------------------


def run_train(args) -> int:
    exp = _load_config(args)
    out = _out_dir(args)
    ds = _dataset(exp, args.data)
    result = train(exp.model, ds.train, exp.train)
    report = evaluate(result.model, ds)
    save_checkpoint(out / "checkpoint", result.model, exp)
    (out / "loss_curve.tsv").write_text(_curve_tsv(result.losses))
    (out / "report.tsv").write_text(report.to_tsv())
    print(f"final loss {result.losses[-1]:.6f}" if result.losses else "no epochs run")
    print(f"top1 {report.top1:.6f} map {report.map:.6f}")
    return 0


def run_eval(args) -> int:
    model, exp = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    report = evaluate(model, _dataset(exp, args.data))
    (out / "report.tsv").write_text(report.to_tsv())
    print(f"top1 {report.top1:.6f} map {report.map:.6f}")
    return 0


def run_ablate(args) -> int:
    if (args.grid is None) == (args.preset is None):
        raise InputError("ablate needs exactly one of --grid FILE or --preset NAME")
    exp = _load_config(args)
    out = _out_dir(args)
    if args.grid is not None:
        p = Path(args.grid)
        if not p.is_file():
            raise InputError(f"grid file {p} does not exist")
        grid = ablmod.parse_grid(p.read_text(encoding="utf-8"), str(p))
    else:
        grid = args.preset
    seeds = _parse_ints(args.seeds, "--seeds") if args.seeds else None
    rows = ablmod.run_grid(
        exp, grid, seeds=seeds, out_dir=out, include_baseline=args.baseline, workers=args.workers
    )
    print(ablmod.format_table(rows))
    return 0


def run_gradcheck(args) -> int:
    known = gc.differentiable_ops()
    for op in args.perturb_grad:
        if op not in known:
            raise InputError(f"unknown op {op!r} for --perturb-grad; differentiable ops: {', '.join(known)}")
    ctx = perturbed_gradients(args.perturb_grad, args.factor) if args.perturb_grad else contextlib.nullcontext()
    with ctx:
        report = gc.run_suite(seed=args.seed or 0)
    lines = ["op\tmax_rel_error\tthreshold\tstatus"]
    bad = gc.failures(report)
    for name, err in report.items():
        limit = gc.COMPOSITE_THRESHOLD if name == gc.COMPOSITE_NAME else gc.ISOLATED_THRESHOLD
        lines.append(f"{name}\t{err:.3e}\t{limit:.0e}\t{'FAIL' if name in bad else 'ok'}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        (_out_dir(args) / "gradcheck.tsv").write_text(text)
    if bad:
        print(f"gradient check failed: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def run_flops(args) -> int:
    placement = _parse_ints(args.placement, "--placement") if args.placement is not None else None
    if args.preset:
        if args.preset != RESNET50_PRESET:
            raise InputError(f"unknown preset {args.preset!r}; available: {RESNET50_PRESET}")
        exp = _load_config(args)
        report = flop_report(args.preset, exp.model.ia, placement=placement or (3,), sia_only=args.sia_only)
    else:
        exp = _load_config(args)
        report = flop_report(exp.model, placement=placement, sia_only=args.sia_only)
    text = report.to_tsv()
    print(text, end="")
    if args.out:
        (_out_dir(args) / "flops.tsv").write_text(text)
    return 0


def _select_image(args, exp) -> np.ndarray:
    if args.image:
        p = Path(args.image)
        if not p.is_file():
            raise InputError(f"image file {p} does not exist")
        img = iatn.load(p)
        if img.ndim == 3:
            img = img[None]
        return img[:1]
    ds = _dataset(exp, args.data)
    split = ds.split(args.split)
    if not 0 <= args.index < len(split):
        raise InputError(f"--index {args.index} out of range for {args.split} split of size {len(split)}")
    return split.images[args.index : args.index + 1]


def _parse_pos(text: str, grid) -> tuple[int, int]:
    parts = _parse_ints(text, "--pos")
    if len(parts) != 2:
        raise InputError(f"--pos expects y,x, got {text!r}")
    y, x = parts
    H, W = grid
    if not (0 <= y < H and 0 <= x < W):
        raise InputError(f"position ({y},{x}) lies outside the {H}x{W} grid of this stage")
    return y, x


def run_dump_relation(args) -> int:
    if args.checkpoint:
        model, exp = load_checkpoint(args.checkpoint)
        if args.set:
            raise InputError("--set cannot be combined with --checkpoint")
    else:
        exp = _load_config(args)
        model = IANet(exp.model, seed=exp.train.seed)
    stage = args.stage
    grid = exp.model.stage_grids()[stage - 1]
    y, x = _parse_pos(args.pos, grid)
    out = _out_dir(args)
    image = _select_image(args, exp)
    capture: dict = {}
    model.features(Tensor(image.astype(model.dtype)), training=False, capture=capture)
    F = capture[f"stage{stage}"]
    cfg = exp.model.ia_config(stage)
    maps = {"S": cfg}
    if cfg.use_appearance and cfg.use_location:
        maps["SA"] = replace(cfg, use_location=False)
        maps["SL"] = replace(cfg, use_appearance=False)
    tag = f"stage{stage}_y{y}_x{x}"
    ok = True
    for name, c in maps.items():
        row = sia_relation(F, c).row(y, x)
        stem = out / f"{name}_{tag}"
        iatn.save_relation(f"{stem}.iatn", row, grid)
        shown = row * pgm.top_mass_mask(row, args.top_p) if args.top_p else row
        pgm.write(f"{stem}.pgm", shown, "max")
        if args.verify:
            raw, g = iatn.load_relation(f"{stem}.iatn")
            total = float(np.asarray(raw, dtype=np.float64).sum())
            good = tuple(g) == tuple(grid) and abs(total - 1.0) <= 1e-6
            ok &= good
            print(f"verify {name}: row sum {total:.9f} {'ok' if good else 'FAIL'}")
    E = cia_forward(F).data[0]
    channels = _parse_ints(args.channels, "--channels")
    for ch in channels:
        if not 0 <= ch < E.shape[0]:
            raise InputError(f"channel {ch} out of range for {E.shape[0]} channels")
        stem = out / f"cia_stage{stage}_c{ch}"
        iatn.save_relation(f"{stem}.iatn", E[ch], grid)
        pgm.write(f"{stem}.pgm", E[ch], "minmax")
    print(f"wrote {len(maps)} relation rows and {len(channels)} channel maps to {out}")
    return 0 if ok else 1


def run_gen_data(args) -> int:
    exp = _load_config(args)
    out = _out_dir(args)
    ds = generate(exp.data)
    save_dataset(ds, out)
    (out / CHECKPOINT_CONFIG).write_text(cfgmod.dump(exp), encoding="utf-8")
    print(f"train {len(ds.train)} query {len(ds.query)} gallery {len(ds.gallery)} images in {out}")
    return 0


# -- argument parsing -------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="K=V", help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, help="model and training seed (overrides the config)")
    p.add_argument("--out", required=out_required, metavar="DIR", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ianet", description="Interaction-and-Aggregation network toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, loss curve and report")
    _common(p)
    p.add_argument("--data", metavar="DIR", help="saved dataset (default: generate from config)")
    p.set_defaults(func=run_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its dataset")
    p.add_argument("--checkpoint", required=True, metavar="DIR")
    p.add_argument("--data", metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=run_eval, config=None, set=[], seed=None)

    p = sub.add_parser("ablate", help="train and evaluate an ablation grid")
    _common(p)
    p.add_argument("--grid", metavar="FILE", help="grid file with 'key = v1 | v2' lines")
    p.add_argument("--preset", choices=sorted(ablmod.PRESETS), help="ablation table preset")
    p.add_argument("--seeds", metavar="LIST", help="comma-separated seeds (default: config seed)")
    p.add_argument("--baseline", action="store_true", help="prepend a plain-backbone row")
    p.add_argument("--workers", type=int, default=1, help="concurrent training processes")
    p.set_defaults(func=run_ablate)

    p = sub.add_parser("gradcheck", help="central-difference check of every differentiable op")
    p.add_argument("--perturb-grad", action="append", default=[], metavar="OP", help="scale OP's adjoint (sabotage test)")
    p.add_argument("--factor", type=float, default=1.05, help="adjoint scale for --perturb-grad")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=run_gradcheck)

    p = sub.add_parser("flops", help="analytic multiply counts")
    _common(p, out_required=False)
    p.add_argument("--preset", metavar="NAME", help=f"fixed geometry, e.g. {RESNET50_PRESET}")
    p.add_argument("--placement", metavar="LIST", help="IA stages (default: config, or 3 for the preset)")
    p.add_argument("--sia-only", action="store_true", help="count only the spatial module")
    p.set_defaults(func=run_flops)

    p = sub.add_parser("dump-relation", help="write relation rows and channel maps as PGM + IATN")
    _common(p)
    p.add_argument("--checkpoint", metavar="DIR", help="trained model (default: fresh model from config)")
    p.add_argument("--image", metavar="FILE", help="IATN image [3,H,W] or [1,3,H,W]")
    p.add_argument("--data", metavar="DIR")
    p.add_argument("--split", default="query", choices=("train", "query", "gallery"))
    p.add_argument("--index", type=int, default=0, help="image index within --split")
    p.add_argument("--stage", type=int, choices=STAGES, default=3)
    p.add_argument("--pos", required=True, metavar="Y,X", help="query position on the stage grid")
    p.add_argument("--verify", action="store_true", help="re-read sidecars and check row sums")
    p.add_argument("--top-p", type=float, metavar="P", help="keep only the top mass P in the PGM")
    p.add_argument("--channels", default="0,1,2,3", metavar="LIST", help="CIA output channels to dump")
    p.set_defaults(func=run_dump_relation)

    p = sub.add_parser("gen-data", help="generate and save the synthetic dataset")
    _common(p)
    p.set_defaults(func=run_gen_data)
    return parser


def _thread_limit():
    raw = os.environ.get("IA_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"IA_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InputError(f"IA_THREADS must be >= 0, got {n}")
    if n == 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.verbose:
        logging.getLogger("ianet.harness.train").setLevel(logging.DEBUG)
    try:
        with _thread_limit():
            return args.func(args)
    except (InputError, ConfigurationError, DimensionError, FileNotFoundError) as exc:
        print(f"ianet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (IANetError, ArithmeticError, ValueError, OSError) as exc:
        print(f"ianet {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
