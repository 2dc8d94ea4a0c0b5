"""Acceptance gate: one test, and one summary line, per criterion.

Criteria 5 and 6 train on the bundled desk scenario through the CLI, which
takes a while on one core (roughly 7 + 4 minutes).
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from _gradcases import CASES
from jekyll_hyde import cli
from jekyll_hyde.config import bundled_config_path, load_config
from jekyll_hyde.evaluation import CSV_HEADER, Confusion, confusion, default_thresholds, sweep
from jekyll_hyde.loss import bce_loss, dual_loss, optimal_mask
from jekyll_hyde.model_zoo import Head, build_hourglass, load_checkpoint, save_checkpoint
from jekyll_hyde.scene_sim import carve_samples, gaussian_scale, generate_cube
from jekyll_hyde.tensor_core import Tensor, gradcheck, jht

DESK = str(bundled_config_path("desk"))
TRIALS = 20


def _cli(ws, *args, config=DESK):
    return cli.main(["-q", "--config", config, "--workspace", str(ws), *args])


def _csv_rows(path: Path) -> dict:
    lines = path.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    keys = CSV_HEADER.split(",")
    return {float(r[0]): dict(zip(keys, r)) for r in (line.split(",") for line in lines[1:])}


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """generate, both trainings and eval on the bundled scenario, once per session."""
    ws = tmp_path_factory.mktemp("desk")
    times = {}
    for args in (["generate"], ["train", "--mode", "unsupervised"], ["train", "--mode", "supervised"], ["eval"]):
        start = time.perf_counter()
        assert _cli(ws, *args) == 0, args
        times[" ".join(args)] = time.perf_counter() - start
    return ws, times


def test_criterion_1_autodiff(verdict):
    start = time.perf_counter()
    worst = {}
    for name, make in CASES.items():
        rng = np.random.default_rng(sum(map(ord, name)))
        errs = []
        for _ in range(TRIALS):
            fn, inputs = make(rng)
            errs.append(gradcheck(fn, inputs, rng=rng))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if v > 1e-3}
    top = max(worst, key=worst.get)
    verdict(1, not bad and elapsed < 120,
            f"{len(CASES)} operators x {TRIALS} trials, worst rel err {worst[top]:.2e} ({top}), "
            f"{elapsed:.1f}s; failing: {sorted(bad) or 'none'}")


def test_criterion_2_loss_oracle(verdict):
    rng = np.random.default_rng(2)
    d2 = rng.uniform(0, 3, 1000)
    alpha = rng.uniform(0.1, 5, 1000)
    eps = rng.uniform(1e-4, 1e-2, 1000)
    grid = np.arange(0.0, 1.0 + 5e-5, 1e-4)
    objective = -np.log(grid[None] + eps[:, None]) * d2[:, None] + alpha[:, None] * grid[None]
    brute = grid[np.argmin(objective, axis=1)]
    err = float(np.max(np.abs(optimal_mask(d2, alpha, eps) - brute)))

    def px(v):
        return Tensor(np.array(v, np.float64).reshape(1, 1, 1, 1, 1), dtype=np.float64)

    worked = [
        (dual_loss(px(1.0), px(0.0), px(0.0), 1.0, 1e-3).total.item(), 6.907755),
        (dual_loss(px(2.0), px(0.5), px(2.0), 1.0, 1e-3).total.item(), 0.5),
        (dual_loss(px(2.0), px(0.999), px(0.0), 1.0, 1e-3).total.item(), 0.999),
    ]
    werr = max(abs(a - b) for a, b in worked)
    verdict(2, err <= 1e-3 and werr <= 1e-5,
            f"max |J* - grid argmin| {err:.1e} over 1000 triples; worked values max err {werr:.1e}")


def test_criterion_3_formula_fidelity(verdict):
    rng = np.random.default_rng(3)
    loss_err = bce_err = 0.0
    for _ in range(20):
        b, n, w, h = rng.integers(1, 3), rng.integers(1, 6), rng.integers(1, 7), rng.integers(1, 7)
        x = rng.standard_normal((b, 1, n, w, h))
        j = rng.random((b, 1, n, w, h))
        bg = rng.standard_normal((b, 1, 1, w, h))
        alpha, eps = rng.uniform(0.1, 3), rng.uniform(1e-4, 1e-2)
        got = dual_loss(Tensor(x, dtype=np.float64), Tensor(j, dtype=np.float64), Tensor(bg, dtype=np.float64),
                        alpha, eps).total.item()
        # straight-line chain: differential, its square, masked error, mean, plus mask cost
        delta = x - bg
        delta_sq = delta ** 2
        masked = -np.log(j + eps) * delta_sq
        ref = masked.mean() + alpha * j.mean()
        loss_err = max(loss_err, abs(got - ref))

        p = rng.uniform(0.01, 0.99, (b, 1, n, w, h))
        y = (rng.random(p.shape) < 0.3).astype(np.uint8)
        got = bce_loss(Tensor(p, dtype=np.float64), y).item()
        ref = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        bce_err = max(bce_err, abs(got - ref))
    verdict(3, loss_err <= 1e-6 and bce_err <= 1e-6,
            f"dual loss max err {loss_err:.1e}, bce max err {bce_err:.1e} over 20 random tensors")


def test_criterion_4_data_regime(verdict, tmp_path):
    cfg = load_config(DESK)
    cube = gaussian_scale(generate_cube(cfg.scene_spec()))
    x = cube.intensity.astype(np.float64)
    mean, std = abs(float(x.mean())), abs(float(x.std()) - 1)
    F, W, H = cube.intensity.shape
    samples = carve_samples(cube, cfg.carve.N, cfg.carve.W, cfg.carve.H)
    expected = (F // cfg.carve.N) * (W // cfg.carve.W) * (H // cfg.carve.H)
    n = len(samples)

    for ws in ("a", "b"):
        assert _cli(tmp_path / ws, "generate") == 0
    m = json.loads((tmp_path / "a" / "data" / "manifest.json").read_text())
    files = sorted(p.name for p in (tmp_path / "a" / "data").iterdir())
    identical = all((tmp_path / "a" / "data" / f).read_bytes() == (tmp_path / "b" / "data" / f).read_bytes()
                    for f in files)
    floor = (math.floor(0.5 * n), math.floor(0.2 * n))
    split_ok = tuple(m["counts"][k] for k in ("train", "val", "test")) == (*floor, n - sum(floor))
    verdict(4, mean <= 1e-5 and std <= 1e-4 and n == expected and split_ok and identical,
            f"|mean| {mean:.1e}, |std-1| {std:.1e}; {n} samples (floor arithmetic {expected}); "
            f"split {m['counts']}; {len(files)} dataset files identical across reruns: {identical}")


def test_criterion_5_unsupervised_desk(verdict, desk_run):
    ws, times = desk_run
    rows = [json.loads(l) for l in (ws / "runs" / "unsupervised" / "record.jsonl").read_text().splitlines()]
    first, last = rows[0]["train_loss"], rows[-1]["train_loss"]
    row = _csv_rows(ws / "eval" / "jekyll_sweep.csv")[0.1]
    sens, spec = float(row["sensitivity"]), float(row["specificity"])
    minutes = times["train --mode unsupervised"] / 60
    verdict(5, last <= 0.7 * first and sens >= 0.5 and spec >= 0.95 and minutes < 30,
            f"loss epoch 1 {first:.4f} -> epoch {len(rows)} {last:.4f} (ratio {last / first:.3f}); "
            f"Jekyll t=0.1 sensitivity {sens:.3f} specificity {spec:.4f}; training {minutes:.1f} min")


def test_criterion_6_competitiveness(verdict, desk_run):
    ws, _ = desk_run
    jek = _csv_rows(ws / "eval" / "jekyll_sweep.csv")
    utt = _csv_rows(ws / "eval" / "utterson_sweep.csv")
    gaps = {t: abs(float(jek[t]["sensitivity"]) - float(utt[t]["sensitivity"])) for t in (0.1, 0.2, 0.3)}
    detail = ", ".join(f"t={t}: J {float(jek[t]['sensitivity']):.3f} U {float(utt[t]['sensitivity']):.3f}"
                       for t in gaps)
    verdict(6, all(g <= 0.15 for g in gaps.values()), f"max sensitivity gap {max(gaps.values()):.3f} ({detail})")


def test_criterion_7_metric_identities(verdict):
    rng = np.random.default_rng(7)
    ts = default_thresholds()
    monotone = True
    for _ in range(100):
        size = int(rng.integers(1, 500))
        out = rng.random(size)
        lab = (rng.random(size) < rng.uniform(0.05, 0.95)).astype(np.uint8)
        table = sweep(out, lab, ts)
        sens = [r.metrics.sensitivity for r in table.rows]
        spec = [r.metrics.specificity for r in table.rows]
        if lab.any():
            monotone &= all(a >= b for a, b in zip(sens, sens[1:]))
        if (1 - lab).any():
            monotone &= all(a <= b for a, b in zip(spec, spec[1:]))

    pred = np.zeros(100, np.uint8)
    lab = np.zeros(100, np.uint8)
    pred[[0, 1, 2]] = 1
    lab[[0, 2, 3]] = 1
    table = sweep(np.array([0.2, 0.6, 0.9]), np.array([0, 1, 1]), [0.1, 0.5, 0.7, 0.95])
    hand = (confusion(pred, lab) == Confusion(2, 1, 96, 1)
            and [r.confusion for r in table.rows] == [Confusion(2, 1, 0, 0), Confusion(2, 0, 1, 0),
                                                      Confusion(1, 0, 1, 1), Confusion(0, 0, 1, 2)])
    csv = table.to_csv()
    blanks = csv.splitlines()[1] == "0.100000,2,1,0,0,0.666667,,1.000000,0.000000" and "nan" not in csv.lower()
    verdict(7, monotone and hand and blanks,
            f"monotone on 100 fixtures: {monotone}; hand fixtures exact: {hand}; undefined -> blank: {blanks}")


def test_criterion_8_reproducibility(verdict, tmp_path):
    rng = np.random.default_rng(8)
    arrays = [rng.standard_normal((2, 3, 4)).astype(np.float32), rng.integers(0, 2, (5, 1, 7), dtype=np.uint8),
              np.float32(rng.standard_normal()) * np.ones((), np.float32), np.zeros((0, 3), np.float32)]
    jht_ok = all(jht.decode(jht.encode(a)).tobytes() == a.tobytes() and jht.decode(jht.encode(a)).shape == a.shape
                 for a in arrays)

    cfg = load_config(DESK).hourglass()
    model = build_hourglass(cfg, Head.SIGMOID, 8)
    x = Tensor(rng.standard_normal((1, 1) + cfg.input_extent).astype(np.float32))
    save_checkpoint(model, tmp_path / "ckpt")
    ckpt_ok = load_checkpoint(tmp_path / "ckpt")(x).data.tobytes() == model(x).data.tobytes()

    # two complete pipelines on the desk scenario, shortened to two epochs each
    for ws in ("run1", "run2"):
        for args in (["generate"], ["train", "--epochs", "2"], ["train", "--mode", "supervised", "--epochs", "2"],
                     ["eval"]):
            assert _cli(tmp_path / ws, *args) == 0
    artifacts = ["runs/unsupervised/record.jsonl", "runs/supervised/record.jsonl",
                 "eval/jekyll_sweep.csv", "eval/utterson_sweep.csv"]
    same = all((tmp_path / "run1" / a).read_bytes() == (tmp_path / "run2" / a).read_bytes() for a in artifacts)
    verdict(8, jht_ok and ckpt_ok and same,
            f"JHT1 bit-exact: {jht_ok}; checkpoint forward bit-exact: {ckpt_ok}; "
            f"two seeded runs give identical JSONL and CSV: {same}")
