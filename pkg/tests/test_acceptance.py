"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (collected again
in the terminal summary) and asserts the criterion including its runtime
budget. Every criterion function returns the bytes of the artifacts it
produced so the determinism criterion can repeat them.

Run standalone with ``python3 tests/test_acceptance.py`` for just the lines.
"""

import hashlib
import statistics
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

import oracles  # noqa: E402
from ianet import block, iatn, pgm, relation  # noqa: E402
from ianet.block import IABlockParams, IAConfig  # noqa: E402
from ianet.cli import main as cli_main  # noqa: E402
from ianet.gradcheck import failures, run_suite  # noqa: E402
from ianet.harness.data import SyntheticSpec, generate  # noqa: E402
from ianet.harness.flops import RESNET50_PRESET, flop_report  # noqa: E402
from ianet.harness.metrics import cmc_map  # noqa: E402
from ianet.harness.train import TrainConfig, evaluate, train  # noqa: E402
from ianet.model import BackboneConfig, IANet  # noqa: E402
from ianet.tensor import Tensor  # noqa: E402

LINES: list[str] = []

# synthetic reID recipe: 20 ids x 24 images, jitter on, equal epochs for both models
REID_SPEC = SyntheticSpec(num_ids=20, images_per_id=24, seed=0)
REID_SEEDS = (0, 1, 2)
REID_TRAIN = dict(lr=3e-3, batch=32, epochs=14)
REID_IA = IAConfig(patch_sizes=(1, 2, 3), fusion="PROD", arrangement="SIA_THEN_CIA")


def _report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    LINES.append(line)
    print(line)


def _rel(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def _abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))))


# -- criterion bodies -------------------------------------------------------------------


def identity_at_init():
    rng = np.random.default_rng(100)
    arrangements = ("SIA_THEN_CIA", "CIA_THEN_SIA", "PARALLEL")
    worst = 0.0
    art = hashlib.sha256()
    for i in range(100):
        B, C, H, W = (int(v) for v in rng.integers(1, [4, 9, 7, 7], endpoint=True))
        H = max(H, 2)
        F = Tensor(rng.standard_normal((B, C, H, W)))
        cfg = IAConfig(arrangement=arrangements[i % 3], sigma1=float(rng.uniform(0.5, 5)), sigma2=float(rng.uniform(0.5, 5)))
        Y = block.ia_block(F, cfg, IABlockParams.fresh(C), training=bool(i % 2))
        worst = max(worst, float(np.max(np.abs(Y.data - F.data))))
        art.update(Y.data.tobytes())
    images = np.random.default_rng(101).uniform(0, 1, size=(4, 3, 64, 32))
    plain = IANet(BackboneConfig(num_ids=20, ia_placement=()), seed=3)
    with_ia = IANet(BackboneConfig(num_ids=20, ia=REID_IA), seed=3)
    diffs = []
    for training in (False, True):
        _, a = plain.forward(images, training)
        _, b = with_ia.forward(images, training)
        diffs.append(float(np.max(np.abs(a.data - b.data))))
        art.update(b.data.tobytes())
    ok = worst == 0.0 and max(diffs) == 0.0
    return ok, f"block max|Y-F|={worst:.1e} model max|dlogit|={max(diffs):.1e}", art.digest()


def oracle_equivalence():
    rng = np.random.default_rng(200)
    patch_err = 0.0
    for K in (1, 2, 3, 5):
        for grid in ((4, 3), (8, 4)):
            for C in (1, 3, 8):
                F = rng.standard_normal((C, grid[0] * grid[1]))
                got = relation.patch_logits(relation.gram_logits(F), grid, K).data
                patch_err = max(patch_err, _rel(got, oracles.patch_dot_logits(F, grid, K)))
    prod_err = 0.0
    for grid in ((4, 3), (8, 4)):
        for C in (1, 3, 8):
            F = rng.standard_normal((C, grid[0] * grid[1]))
            got = relation.appearance_map_multi(F, grid, (1, 2, 3), "PROD").matrix.data
            prod_err = max(prod_err, _abs(got, oracles.appearance_map(F, grid, (1, 2, 3), "PROD")))
    module_err = 0.0
    outs = []
    for shape in ((1, 3, 2, 2), (1, 4, 2, 3)):
        F = rng.standard_normal(shape)
        for Ks in ((1,), (1, 2), (1, 2, 3)):
            cfg = IAConfig(patch_sizes=Ks, sigma1=1.0, sigma2=2.0)
            E = block.sia_forward(F, cfg).data
            module_err = max(module_err, _abs(E, oracles.sia(F, Ks, "PROD", 1.0, 2.0)))
            outs.append(E)
        E = block.cia_forward(F).data
        module_err = max(module_err, _abs(E, oracles.cia(F)))
        outs.append(E)
    ok = patch_err < 1e-6 and prod_err < 1e-9 and module_err < 1e-8
    detail = f"patch rel={patch_err:.1e} prod abs={prod_err:.1e} sia/cia abs={module_err:.1e}"
    return ok, detail, b"".join(o.tobytes() for o in outs)


def gradient_suite():
    report = run_suite(seed=0)
    bad = failures(report)
    worst = max(report.values())
    text = "".join(f"{k}\t{v!r}\n" for k, v in report.items())
    return not bad, f"{len(report)} checks, worst={worst:.1e}, failed={bad or 'none'}", text.encode()


def row_stochasticity():
    rng = np.random.default_rng(400)
    worst = 0.0
    negative = False
    art = hashlib.sha256()
    for _ in range(1000):
        H, W = (int(v) for v in rng.integers(1, 7, size=2))
        C = int(rng.integers(1, 9))
        fusion = relation.FUSIONS[int(rng.integers(len(relation.FUSIONS)))]
        F = rng.standard_normal((C, H * W)) * rng.uniform(0.1, 3.0)
        maps = [relation.appearance_map_single(F, (H, W), K).matrix.data for K in (1, 2, 3)]
        SA = relation.appearance_map_multi(F, (H, W), (1, 2, 3), fusion)
        SL = relation.location_map(relation.LocationPrior(float(rng.uniform(0.3, 6)), float(rng.uniform(0.3, 6)), (H, W)))
        S = relation.semantic_map(SA, SL, fusion)
        Cmap = block.cia_relation(F.reshape(1, C, H, W)).matrix.data[0]
        maps += [SA.matrix.data, SL.matrix.data, S.matrix.data, Cmap]
        for m in maps:
            worst = max(worst, float(np.max(np.abs(m.sum(axis=-1) - 1.0))))
            negative |= bool(np.any(m < 0))
        art.update(S.matrix.data.tobytes())
    ok = worst <= 1e-6 and not negative
    return ok, f"7 maps x 1000 instances, max|rowsum-1|={worst:.1e}", art.digest()


def flop_ratio():
    r = flop_report(RESNET50_PRESET, IAConfig(patch_sizes=(1, 2, 3)), placement=(3,), sia_only=True)
    single = flop_report(RESNET50_PRESET, IAConfig(patch_sizes=(1,)), placement=(3,), sia_only=True)
    ok = 0.005 <= r.overhead <= 0.010 and r.ia == single.ia
    detail = f"SIA {r.ia} / backbone {r.backbone} = {r.overhead:.4%}, multi-K == single-K: {r.ia == single.ia}"
    return ok, detail, r.to_tsv().encode()


def _reid_run(seed: int, placement, dataset):
    cfg = BackboneConfig(num_ids=REID_SPEC.num_ids, ia_placement=placement, ia=REID_IA)
    res = train(cfg, dataset.train, TrainConfig(seed=seed, **REID_TRAIN))
    rep = evaluate(res.model, dataset)
    digest = hashlib.sha256()
    for name, arr in sorted(res.model.state_dict().items()):
        digest.update(name.encode())
        digest.update(arr.tobytes())
    digest.update(np.asarray(res.losses).tobytes())
    return rep.top1, res.losses[-1], digest.digest()


def synthetic_reid(seeds=REID_SEEDS):
    dataset = generate(REID_SPEC)
    runs = {"baseline": [], "ia": []}
    art = []
    for seed in seeds:
        for name, placement in (("baseline", ()), ("ia", (2, 3))):
            top1, final, digest = _reid_run(seed, placement, dataset)
            runs[name].append((top1, final))
            art.append(digest)
    med = {k: statistics.median(t for t, _ in v) for k, v in runs.items()}
    worst_loss = max(l for v in runs.values() for _, l in v)
    ok = med["ia"] >= med["baseline"] and worst_loss < 0.5
    losses = {k: [round(l, 3) for _, l in v] for k, v in runs.items()}
    detail = f"median top1 ia={med['ia']:.3f} baseline={med['baseline']:.3f}, final losses {losses}"
    return ok, detail, b"".join(art)


def retrieval_metrics():
    r = cmc_map([[0.1, 0.2, 0.3]], ["A"], ["B", "A", "A"])
    literal = (1 / 2 + 2 / 3) / 2
    hand = r.top1 == 0.0 and r.map == literal and abs(r.map - 7 / 12) <= 1e-15
    rng = np.random.default_rng(700)
    props = True
    art = hashlib.sha256(np.float64(r.map).tobytes())
    for _ in range(100):
        n_ids = int(rng.integers(1, 6))
        g = np.concatenate([np.arange(n_ids), rng.integers(0, n_ids, size=int(rng.integers(0, 10)))])
        q = rng.integers(0, n_ids, size=int(rng.integers(1, 8)))
        rep = cmc_map(rng.uniform(size=(len(q), len(g))), q, g)
        props &= bool(np.all(np.diff(rep.cmc) >= 0)) and rep.cmc[-1] <= 1.0
        props &= rep.map == float(np.mean(rep.per_query_ap))
        art.update(rep.per_query_ap.tobytes())
    return hand and props, f"AP={r.map!r} (7/12={7 / 12!r}), 100 random matrices ok: {props}", art.digest()


def visualization_contract():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        image = tmp / "image.iatn"
        iatn.save(image, np.random.default_rng(800).uniform(0, 1, size=(3, 64, 32)).astype(np.float32))
        out = tmp / "dump"
        results = []
        for y, x in ((0, 0), (5, 2), (15, 7), (9, 4)):
            code = cli_main([
                "dump-relation", "--out", str(out), "--image", str(image), "--stage", "3",
                f"--pos={y},{x}", "--verify", "--set", "use_appearance=false",
            ])
            stem = out / f"S_stage3_y{y}_x{x}"
            buf = stem.with_suffix(".pgm").read_bytes()
            header_ok = buf.startswith(b"P5\n8 16\n255\n") and len(buf) == len(b"P5\n8 16\n255\n") + 128
            img = pgm.decode(buf)
            peak = np.unravel_index(np.argmax(img), img.shape) == (y, x)
            raw, grid = iatn.load_relation(stem.with_suffix(".iatn"))
            total = float(np.sum(raw, dtype=np.float64))
            results.append((code == 0, header_ok, peak, abs(total - 1.0) <= 1e-6))
        art = b"".join(p.read_bytes() for p in sorted(out.iterdir()))
    ok = all(all(r) for r in results)
    passed = sum(all(r) for r in results)
    return ok, f"{passed}/{len(results)} positions with exit 0, valid P5, peak at query, row sum 1", art


CRITERIA = {
    1: (identity_at_init, 10.0),
    2: (oracle_equivalence, 30.0),
    3: (gradient_suite, 60.0),
    4: (row_stochasticity, 10.0),
    5: (flop_ratio, 1.0),
    6: (synthetic_reid, 900.0),
    7: (retrieval_metrics, 5.0),
    8: (visualization_contract, 5.0),
}
ARTIFACTS: dict[int, bytes] = {}


def _run(n: int):
    fn, budget = CRITERIA[n]
    start = time.perf_counter()
    ok, detail, art = fn()
    seconds = time.perf_counter() - start
    ARTIFACTS[n] = art
    within = seconds < budget
    _report(n, ok and within, f"{detail} [{seconds:.2f}s / {budget:g}s]")
    return ok, within


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 7, 8])
def test_criterion(n):
    ok, within = _run(n)
    assert ok
    assert within


@pytest.mark.slow
def test_criterion_6_synthetic_reid():
    ok, within = _run(6)
    assert ok
    assert within


@pytest.mark.slow
def test_criterion_9_determinism():
    mismatched = []
    for n in (1, 2, 3, 4, 5, 7, 8):
        if n not in ARTIFACTS:
            _run(n)
        if CRITERIA[n][0]()[2] != ARTIFACTS[n]:
            mismatched.append(n)
    if 6 in ARTIFACTS:
        # one full seed of the reID experiment, both models, against the first run
        again = synthetic_reid(seeds=(REID_SEEDS[0],))[2]
        if again != ARTIFACTS[6][: len(again)]:
            mismatched.append(6)
        repeated = "1-8 (criterion 6 on seed 0)"
    else:
        repeated = "1-5,7,8 (criterion 6 not run)"
    ok = not mismatched and 6 in ARTIFACTS
    _report(9, ok, f"repeated {repeated}, mismatched={mismatched or 'none'}")
    assert not mismatched
    assert 6 in ARTIFACTS


if __name__ == "__main__":
    for n in CRITERIA:
        _run(n)
