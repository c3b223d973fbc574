"""Acceptance criteria, one PASS/FAIL line each (see the terminal summary).

The training criteria run the desk configuration on CPU and take several
minutes; everything else finishes in seconds.
"""
import itertools
import json
import math
import time

import numpy as np
import pytest
import torch
from torch.func import functional_call, vmap

from mriqa.agcs import CROP_MENU, SampledGrid, make_grid_spec, sample_grids
from mriqa.backbone import BackboneConfig
from mriqa.cli import run
from mriqa.config import TrainConfig
from mriqa.data import ManifestEntry, make_reference, synth_distort, synth_score, write_manifest
from mriqa.head import HeadConfig, apply_fmm
from mriqa.imaging import Image, save_png
from mriqa.maskgen import diff_mask, upsample
from mriqa.metrics import plcc, srcc
from mriqa.model import MRNet
from mriqa.pipeline import ImageCache, batch_tensors, evaluate, loss_fn, predict_tta, prepare_sample, train
from mriqa.rng import Rng

from conftest import mini_backbone, mini_head, mini_train, random_image, record

N_REFS, N_TRAIN_REFS, LEVELS, REF_SIDE = 10, 8, 5, 320
HARNESS_CONFIG = {
    "backbone": {"embed_dim": 8, "depths": [1, 1, 1, 1], "heads": [2, 2, 4, 4], "window": 4, "input_size": 32},
    "head": {"pool_size": 2, "mix_dim": 8, "hidden_dim": 16},
    "train": {"input_size": 32, "grid": 8, "crop_menu": [32, 40, 48, 56, 64], "batch": 8, "epochs": 2},
}
# rows of the component ablation table, as --ablate arguments
ABLATIONS = [["agcs", "mg", "fmm"], ["mg", "fmm"], ["fmm"], ["agcs"], []]


def grid_of(img, g=64):
    return SampledGrid.from_image(img, g, g)


def test_mask_density(np_rng):
    start, counts = time.time(), set()
    for k in range(1000):
        d, r = random_image(np_rng, 256, 256), random_image(np_rng, 256, 256)
        m = diff_mask(grid_of(d), grid_of(r), Rng(k))
        counts.add((int(m.mask_b.bits.sum()), int(m.mask_a.bits.sum())))
    elapsed = time.time() - start
    record("mask density", counts == {(1024, 512)} and elapsed < 60, f"(MaskB, MaskA) ones seen: {sorted(counts)}; {elapsed:.1f}s")


def test_mask_containment(np_rng):
    start, ok = time.time(), True
    for k in range(300):
        d = random_image(np_rng, 256, 256)
        r = Image(np.clip(d.data.astype(int) + np_rng.integers(-20, 21, d.data.shape), 0, 255).astype(np.uint8))
        m = diff_mask(grid_of(d), grid_of(r), Rng(k))
        a, b = m.mask_a.bits, m.mask_b.bits
        per_cell = b.reshape(32, 2, 32, 2).sum(axis=(1, 3))
        ok &= not np.any(b & ~upsample(a))
        ok &= bool(np.all(per_cell[a] == 2)) and bool(np.all(per_cell[~a] == 0))
    elapsed = time.time() - start
    record("mask containment", ok and elapsed < 60, f"300 pairs; {elapsed:.1f}s")


def test_mg_oracle_equivalence(np_rng):
    start, ok = time.time(), True
    for k in range(100):
        d, r = random_image(np_rng, 48, 40), random_image(np_rng, 48, 40)
        spec = make_grid_spec(48, 40, 32, 32, Rng(k), gw=8, gh=8)
        gd, gr = sample_grids(d, spec), sample_grids(r, spec)
        m = diff_mask(gd, gr, Rng(1000 + k))
        dst, ref, bits = gd.assemble().data, gr.assemble().data, m.mask_b.bits
        expect = np.empty_like(dst)
        for y, x in itertools.product(range(32), range(32)):
            expect[y, x] = ref[y, x] if bits[y // 4, x // 4] else dst[y, x]
        ok &= bool(np.array_equal(m.image.data, expect))
    elapsed = time.time() - start
    record("MG oracle equivalence", ok and elapsed < 60, f"100 pairs on an 8x8 grid; {elapsed:.1f}s")


def test_agcs_size_contract(np_rng):
    start, ok = time.time(), True
    for wp, hp in itertools.product(CROP_MENU, CROP_MENU):
        img = random_image(np_rng, wp, hp)
        out = sample_grids(img, make_grid_spec(wp, hp, 256, 256, Rng(wp * 7 + hp))).assemble()
        ok &= (out.width, out.height) == (256, 256)
    img = random_image(np_rng, 256, 256)
    ok &= sample_grids(img, make_grid_spec(256, 256, 256, 256, Rng(3))).assemble() == img
    elapsed = time.time() - start
    record("AGCS size contract", ok and elapsed < 60, f"25 (wp, hp) sizes plus identity; {elapsed:.1f}s")


def test_fmm_correctness(np_rng):
    start, ok = time.time(), True
    for k in range(50):
        f1 = torch.randn(2, 64, 64, 24, generator=torch.Generator().manual_seed(k))
        f2 = torch.randn(2, 32, 32, 48, generator=torch.Generator().manual_seed(k + 1000))
        a = np_rng.random((2, 32, 32)) < 0.5
        b = np_rng.random((2, 64, 64)) < 0.25
        o1, o2 = apply_fmm(f1, f2, a, b)
        ta, tb = torch.from_numpy(a), torch.from_numpy(b)
        ok &= bool(torch.all(o1[tb].norm(dim=-1) == 0)) and bool(torch.all(o2[ta].norm(dim=-1) == 0))
        ok &= torch.equal(o1[~tb], f1[~tb]) and torch.equal(o2[~ta], f2[~ta])
        again = apply_fmm(o1, o2, a, b)
        ok &= torch.equal(again[0], o1) and torch.equal(again[1], o2)
    elapsed = time.time() - start
    record("FMM correctness", ok and elapsed < 60, f"50 random mask pairs; {elapsed:.1f}s")


def test_full_pipeline_gradient_check(np_rng):
    start = time.time()
    cfg = mini_train()
    net = MRNet.create(mini_backbone(), mini_head()).double().train()
    samples = [
        prepare_sample(random_image(np_rng, 48, 48), random_image(np_rng, 48, 48), cfg, Rng(k)) for k in range(3)
    ]
    x, ma, mb = batch_tensors(samples, torch.float64)
    target = torch.tensor([0.2, 0.5, 0.9], dtype=torch.float64)
    params = {n: p.detach() for n, p in net.named_parameters()}

    def loss(ps):
        return loss_fn(functional_call(net, ps, (x, ma, mb)), target, "mae")

    live = {n: p.clone().requires_grad_(True) for n, p in params.items()}
    grads = dict(zip(live, torch.autograd.grad(loss(live), list(live.values()))))
    eps, chunk, checked, bad, worst = 1e-4, 256, 0, [], 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        n = flat.numel()
        batched = vmap(lambda q, name=name: loss({**params, name: q}))
        fd = torch.empty(n, dtype=torch.float64)
        for s in range(0, n, chunk):
            idx = torch.arange(s, min(n, s + chunk))
            step = torch.zeros(len(idx), n, dtype=torch.float64)
            step[torch.arange(len(idx)), idx] = eps
            up = batched((flat + step).reshape(len(idx), *p.shape))
            dn = batched((flat - step).reshape(len(idx), *p.shape))
            fd[idx] = (up - dn) / (2 * eps)
        an = grads[name].reshape(-1)
        scale = torch.maximum(fd.abs(), an.abs())
        ratio = (fd - an).abs() / torch.clamp(1e-4 * scale, min=1e-8)
        if bool((ratio > 1).any()):
            bad.append(name)
        worst = max(worst, float(ratio.max()))
        checked += n
    elapsed = time.time() - start
    record(
        "gradient check",
        not bad and elapsed < 600,
        f"{checked} parameters, worst error/tolerance {worst:.2f}, failing tensors {bad}; {elapsed:.1f}s",
    )


@pytest.fixture(scope="session")
def synthetic_set(tmp_path_factory):
    """10 procedural references x 5 noise levels; the first 8 references train."""
    root_dir = tmp_path_factory.mktemp("synthetic")
    root = Rng(11)
    train_entries, held_out = [], []
    for r in range(N_REFS):
        ref = make_reference(REF_SIDE, root.spawn(r))
        rp = root_dir / f"ref{r}.png"
        save_png(ref, rp)
        for level in range(1, LEVELS + 1):
            dp = root_dir / f"r{r}_{level}.png"
            save_png(synth_distort(ref, "noise", level, root.spawn(100 + r * 10 + level)), dp)
            (train_entries if r < N_TRAIN_REFS else held_out).append(ManifestEntry(str(dp), str(rp), synth_score(level), f"ref{r}"))
    return root_dir, train_entries, held_out


@pytest.fixture(scope="session")
def desk_model(synthetic_set):
    _, entries, _ = synthetic_set
    cache = ImageCache()
    start = time.time()
    model = train(entries, BackboneConfig(), HeadConfig(), TrainConfig(epochs=200, seed=0), cache=cache)
    return model, time.time() - start, cache


@pytest.mark.slow
def test_overfit_capacity(synthetic_set, desk_model):
    _, entries, _ = synthetic_set
    model, elapsed, cache = desk_model
    rep = evaluate(model, entries, "train", 8, 0, cache)
    record(
        "overfit capacity",
        rep["srcc"] >= 0.9 and rep["plcc"] >= 0.9 and elapsed <= 1800,
        f"40 images, 200 epochs: SRCC {rep['srcc']:.3f}, PLCC {rep['plcc']:.3f}; training {elapsed:.0f}s",
    )


@pytest.mark.slow
def test_generalization_smoke(synthetic_set, desk_model):
    _, entries, held_out = synthetic_set
    model, elapsed, cache = desk_model
    results = {0: evaluate(model, held_out, "held-out", 8, 0, cache)["srcc"]}
    total = elapsed
    for seed in (1, 2):
        if max(results.values()) >= 0.8:
            break
        start = time.time()
        other = train(entries, BackboneConfig(seed=seed), HeadConfig(seed=seed), TrainConfig(epochs=200, seed=seed), cache=cache)
        total += time.time() - start
        results[seed] = evaluate(other, held_out, "held-out", 8, 0, cache)["srcc"]
    detail = ", ".join(f"seed {s}: SRCC {v:.3f}" for s, v in results.items())
    record("generalization smoke", max(results.values()) >= 0.8 and total <= 2700, f"{detail}; training {total:.0f}s")


@pytest.mark.slow
def test_tta_reduces_variance(synthetic_set, desk_model):
    _, entries, _ = synthetic_set
    model, _, cache = desk_model
    e = entries[2]
    d, r = cache(e.dist_path), cache(e.ref_path)
    singles = [predict_tta(d, r, model, 1, Rng(1000 + s)) for s in range(50)]
    eights = [predict_tta(d, r, model, 8, Rng(s)) for s in range(50)]
    assert np.var(eights) <= np.var(singles) / 4


def brute_ranks(v):
    return [1 + sum(u < x for u in v) + (sum(u == x for u in v) - 1) / 2 for x in v]


def brute_pearson(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    return cov / math.sqrt(math.fsum((a - mx) ** 2 for a in x) * math.fsum((b - my) ** 2 for b in y))


def test_metric_oracle(np_rng):
    worst, done = 0.0, 0
    while done < 100:
        n = int(np_rng.integers(2, 21))
        if done % 2:
            x, y = np_rng.integers(0, 5, n).astype(float), np_rng.integers(0, 5, n).astype(float)
        else:
            x, y = np_rng.normal(size=n), np_rng.normal(size=n)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        worst = max(
            worst,
            abs(plcc(x, y) - brute_pearson(list(x), list(y))),
            abs(srcc(x, y) - brute_pearson(brute_ranks(list(x)), brute_ranks(list(y)))),
        )
        done += 1
    exact = srcc([1, 2, 3, 4], [2, 1, 4, 3])
    record("metric oracle", worst <= 1e-12 and exact == 0.6, f"max deviation {worst:.1e} over 100 vectors; srcc example {exact!r}")


def synth_dataset(tmp_path, capsys, refs=3, size=96):
    data = tmp_path / "data"
    code = run(["synth", "--refs", str(tmp_path / "refs"), "--out", str(data), "--generate", str(refs), "--size", str(size), "--kinds", "noise", "--levels", "5"])
    capsys.readouterr()
    assert code == 0
    return data / "manifest.csv"


def test_determinism(tmp_path, capsys):
    rng = np.random.default_rng(5)
    ref = rng.integers(0, 256, (330, 300, 3), dtype=np.uint8)
    dist = np.clip(ref.astype(int) + rng.integers(-30, 31, ref.shape), 0, 255).astype(np.uint8)
    save_png(Image(ref), tmp_path / "r.png")
    save_png(Image(dist), tmp_path / "d.png")
    cfg = tmp_path / "mini.json"
    cfg.write_text(json.dumps(HARNESS_CONFIG))
    manifest = synth_dataset(tmp_path, capsys)
    masks, trains = [], []
    for k in range(2):
        out = tmp_path / f"mask{k}" / "m.png"
        run(["mask", "--dist", str(tmp_path / "d.png"), "--ref", str(tmp_path / "r.png"), "--out", str(out), "--seed", "17"])
        masks.append(b"".join(p.read_bytes() for p in (out, out.with_name("m_maska.png"), out.with_name("m_maskb.png"))))
        ckpt = tmp_path / f"train{k}.ckpt"
        run(["train", "--deterministic", "--seed", "17", "--config", str(cfg), "--manifest", str(manifest), "--out", str(ckpt)])
        trains.append(ckpt.read_bytes() + (tmp_path / f"train{k}.ckpt.log.jsonl").read_bytes())
    capsys.readouterr()
    record(
        "determinism",
        masks[0] == masks[1] and trains[0] == trains[1] and len(masks[0]) > 0 and len(trains[0]) > 0,
        "mask and train --deterministic outputs compared byte for byte",
    )


def test_harness_coverage(synthetic_set, tmp_path, capsys):
    root_dir, entries, held_out = synthetic_set
    manifest = tmp_path / "synthetic.csv"
    write_manifest(entries + held_out, manifest)
    cfg = tmp_path / "mini.json"
    cfg.write_text(json.dumps(HARNESS_CONFIG))
    runs = [("ablate " + ("+".join(a) if a else "none"), ["--ablate", *a] if a else []) for a in ABLATIONS]
    runs += [(f"random ratio {r}", ["--mask-mode", "random", "--ratio", str(r)]) for r in (0.3, 0.6, 0.9)]
    reports, ok = [], True
    for k, (label, extra) in enumerate(runs):
        ckpt, out = tmp_path / f"run{k}.ckpt", tmp_path / f"run{k}.json"
        code = run(["train", "--config", str(cfg), "--manifest", str(manifest), "--out", str(ckpt), *extra])
        code = code or run(["eval", "--ckpt", str(ckpt), "--manifest", str(manifest), "--split", "test", "--tta", "2", "--out", str(out)])
        ok &= code == 0
        if code == 0:
            rep = json.loads(out.read_text())[0]
            ok &= set(rep) == {"dataset", "n", "srcc", "plcc", "seed"} and all(np.isfinite([rep["srcc"], rep["plcc"]]))
            reports.append({"run": label, **rep})
    capsys.readouterr()
    summary = tmp_path / "harness.json"
    summary.write_text(json.dumps(reports, indent=2))
    ok &= len(json.loads(summary.read_text())) == len(runs)
    record("harness coverage", ok, f"{len(runs)} runs ({len(ABLATIONS)} ablation rows, 3 mask ratios) with JSON reports")
