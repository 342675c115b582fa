"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Neural trainings are cached on disk (``tests/.acceptance_cache`` or
``$INKSEG_ACCEPTANCE_CACHE``) keyed by their configuration and a hash of the
package source, so a second run only re-evaluates. A cold run trains twelve
models and takes roughly an hour on one CPU core.
"""
import hashlib
import json
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

import inkseg
from inkseg.cli import main as cli_main
from inkseg.evaluation import ablate_models, evaluate, sample_miou
from inkseg.kmeans import KMeansConfig, kmeans_segment, lloyd, kmeans_cluster
from inkseg.models import load_model, segment_with_model
from inkseg.models.boundary import boundary_targets, decode_boundaries
from inkseg.models.charquery import mean_successive_difference, pe_diagnostic
from inkseg.groundtruth import SyntheticScorer, approximate_truth
from inkseg.synth import generate, preset
from inkseg.tensor.nn import sinusoidal_table
from inkseg.training import TrainConfig, train

from test_eval import brute_miou, random_pair

RESULTS: dict[int, tuple[bool, str]] = {}

N_TRAIN, N_VAL, N_TEST = 2000, 200, 200
SEEDS = {"train": 11, "val": 12, "test": 13}

MODEL_DIMS = {
    "lstm": dict(hidden_dim=32, layers=2, dropout=0.1),
    "transformer": dict(hidden_dim=64, heads=4, layers=2, dropout=0.1),
    "charquery": dict(hidden_dim=64, final_dim=64, heads=4, encoder_layers=2, decoder_layers=2,
                      dropout=0.1),
}
STEPS = {
    "monotone": {"lstm": 1500, "transformer": 6000, "charquery": 3000},
    "delayed": {"lstm": 2000, "transformer": 12000, "charquery": 3000},
}
BASE_CFG = dict(warmup_steps=200, batch_size=16, ema_decay=0.99, eval_every=500, log_every=100)


def record(n, ok, detail):
    RESULTS[n] = (ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


# -- shared data and cached trainings -------------------------------------------------

_corpora = {}


def corpus(name, split):
    key = (name, split)
    if key not in _corpora:
        n = {"train": N_TRAIN, "val": N_VAL, "test": N_TEST}[split]
        _corpora[key] = generate(preset(name, seed=SEEDS[split]), n)
    return _corpora[key]


def _source_hash():
    h = hashlib.sha256()
    root = Path(inkseg.__file__).parent
    for f in sorted(root.rglob("*.py")):
        h.update(f.relative_to(root).as_posix().encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


CACHE = Path(os.environ.get("INKSEG_ACCEPTANCE_CACHE", Path(__file__).parent / ".acceptance_cache"))


def trained(corpus_name, kind, spikes):
    """(model, vocab, best validation mIoU) for one cached training run."""
    cfg = TrainConfig(max_steps=STEPS[corpus_name][kind], **BASE_CFG)
    overrides = dict(MODEL_DIMS[kind], use_spikes=spikes)
    spec = dict(corpus=corpus_name, kind=kind, cfg=cfg.to_dict(), overrides=overrides, n=N_TRAIN,
                seeds=SEEDS, source=_source_hash())
    key = hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:20]
    d = CACHE / f"{corpus_name}-{kind}-{'spk' if spikes else 'nospk'}-{key}"
    if not (d / "result.json").exists():
        tmp = d.with_name(d.name + ".tmp")
        shutil.rmtree(tmp, ignore_errors=True)
        t0 = time.time()
        r = train(kind, corpus(corpus_name, "train"), cfg, corpus(corpus_name, "val"), out_dir=tmp,
                  model_overrides=overrides)
        (tmp / "result.json").write_text(json.dumps(dict(spec, best_miou=r.best_miou, best_step=r.best_step,
                                                         seconds=round(time.time() - t0, 1))))
        shutil.rmtree(d, ignore_errors=True)
        tmp.rename(d)
    res = json.loads((d / "result.json").read_text())
    model, vocab, _ = load_model(d / "best")
    return model, vocab, res["best_miou"]


def model_miou(corpus_name, kind, spikes, split="test"):
    model, vocab, _ = trained(corpus_name, kind, spikes)
    samples = corpus(corpus_name, split)
    return evaluate(samples, predictions=segment_with_model(model, vocab, samples)).corpus_miou


def kmeans_miou(corpus_name, init, split="test"):
    cfg = KMeansConfig(init=init)
    return evaluate(corpus(corpus_name, split), lambda s: kmeans_segment(s, cfg)).corpus_miou


# -- 1 ------------------------------------------------------------------------------

def test_criterion_1_gradients():
    import test_models
    import test_tensor

    t0 = time.time()
    for name in sorted(test_tensor.OPS):
        test_tensor.test_op_gradient_matches_finite_differences(name)
    test_tensor.test_two_layer_network_end_to_end()
    test_models.test_bilstm_gradients()
    test_models.test_boundary_transformer_gradients()
    test_models.test_charquery_gradients()
    test_models.test_charquery_gradients_with_padding()
    dt = time.time() - t0
    record(1, dt < 300, f"{len(test_tensor.OPS)} ops + 3 models within 1e-4 in {dt:.1f}s")


# -- 2 ------------------------------------------------------------------------------

def test_criterion_2_miou_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        pred, truth, c = random_pair(rng)
        worst = max(worst, abs(sample_miou(pred, truth, c) - brute_miou(pred, truth, c)))
    record(2, worst <= 1e-12, f"max |diff| {worst:.2e} over 1000 pairs")


# -- 3 ------------------------------------------------------------------------------

def test_criterion_3_kmeans():
    rng = np.random.default_rng(3)
    monotone = True
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        k = int(rng.integers(1, n + 1))
        X = rng.normal(size=(n, 3)) * rng.uniform(0.1, 10, 3)
        C0 = X[rng.choice(n, k, replace=False)] + rng.normal(size=(k, 3))
        h = lloyd(X, C0, 100).history
        monotone &= all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(h, h[1:]))

    block = generate(preset("block", seed=31), 200)
    exact = evaluate(block, lambda s: kmeans_segment(s, KMeansConfig(init="ctc_spikes"))).corpus_miou

    invariant = True
    for s in generate(preset("default", seed=32), 50):
        a = kmeans_cluster(s, KMeansConfig(seed=1))
        b = kmeans_cluster(s, KMeansConfig(seed=1, weight_x=8.0, weight_y=0.32, weight_stroke=1792.0))
        invariant &= bool(np.array_equal(a.assignment, b.assignment))
    record(3, monotone and exact == 1.0 and invariant,
           f"inertia monotone={monotone}, block mIoU={exact:.4f}, scaling invariant={invariant}")


# -- 4 ------------------------------------------------------------------------------

def test_criterion_4_boundary_round_trip():
    rng = np.random.default_rng(4)
    ok = True
    for _ in range(1000):
        c = int(rng.integers(1, 12))
        truth = np.repeat(np.arange(c), rng.integers(1, 8, c))
        onehot = np.eye(3)[boundary_targets(truth)]
        ok &= bool(np.array_equal(decode_boundaries(onehot, c), truth))
    record(4, ok, "1000 monotone segmentations")


# -- 5 ------------------------------------------------------------------------------

def test_criterion_5_monotone_training():
    vals = {k: trained("monotone", k, True)[2] for k in ("lstm", "transformer", "charquery")}
    km = kmeans_miou("monotone", "ctc_spikes", split="val")
    ok = all(v >= 0.90 for v in vals.values()) and km >= 0.80
    detail = ", ".join(f"{k} {v:.4f}" for k, v in vals.items()) + f", kmeans {km:.4f}"
    record(5, ok, detail)


# -- 6 ------------------------------------------------------------------------------

def test_criterion_6_delayed_ordering():
    m = {k: model_miou("delayed", k, True) for k in ("lstm", "transformer", "charquery")}
    km = kmeans_miou("delayed", "ctc_spikes")
    cq = m["charquery"]
    ok = cq - m["lstm"] >= 0.10 and cq - m["transformer"] >= 0.10 and cq > km
    detail = ", ".join(f"{k} {v:.4f}" for k, v in m.items()) + f", kmeans {km:.4f}"
    record(6, ok, detail)


# -- 7 ------------------------------------------------------------------------------

def test_criterion_7_spike_ablation():
    parts, ok = [], True
    for name in ("monotone", "delayed"):
        w, wo = kmeans_miou(name, "ctc_spikes"), kmeans_miou(name, "random")
        ok &= w >= wo
        parts.append(f"{name}/kmeans {w:.3f}>={wo:.3f}")
        for kind in ("lstm", "transformer", "charquery"):
            w, wo = model_miou(name, kind, True), model_miou(name, kind, False)
            ok &= w >= wo
            parts.append(f"{name}/{kind} {w:.3f}>={wo:.3f}")
        rep = ablate_models(corpus(name, "test"), trained(name, "charquery", True)[:2],
                            trained(name, "charquery", False)[:2])
        delta = float(np.mean(rep.deltas))
        ok &= delta > 0
        parts.append(f"{name}/charquery mean delta {delta:+.4f}")
    record(7, ok, "; ".join(parts))


# -- 8 ------------------------------------------------------------------------------

def test_criterion_8_ground_truth():
    default = generate(preset("default", seed=81), 200)
    approx = [approximate_truth(s, SyntheticScorer.for_sample(s)) for s in default]
    miou = evaluate(default, predictions=approx).corpus_miou
    mono = generate(preset("monotone", seed=82), 200)
    exact = all(np.array_equal(approximate_truth(s, SyntheticScorer.for_sample(s)), s.truth) for s in mono)
    record(8, miou >= 0.95 and exact, f"default mIoU {miou:.4f}, monotone exact={exact}")


# -- 9 ------------------------------------------------------------------------------

def _pipeline(d: Path):
    run = lambda *a: cli_main([str(x) for x in a])
    assert run("synth", "--n", 60, "--seed", 5, "--preset", "delayed", "--out", d / "train.jsonl") == 0
    assert run("synth", "--n", 20, "--seed", 6, "--preset", "delayed", "--out", d / "val.jsonl") == 0
    assert run("train", "--model", "charquery", "--train", d / "train.jsonl", "--val", d / "val.jsonl",
               "--out", d / "ckpt", "--steps", 30, "--warmup", 10, "--eval-every", 10, "--log-every", 5,
               "--batch-size", 8, "--hidden-dim", 16, "--heads", 2, "--layers", 1, "--seed", 3) == 0
    assert run("segment", "--method", "charquery", "--checkpoint", d / "ckpt" / "best",
               "--in", d / "val.jsonl", "--out", d / "pred.jsonl") == 0
    assert run("segment", "--method", "kmeans", "--init", "random", "--seed", 4,
               "--in", d / "val.jsonl", "--out", d / "km.jsonl") == 0
    assert run("eval", "--in", d / "pred.jsonl", "--out", d / "report.json", "--csv", d / "report.csv") == 0
    names = ["train.jsonl", "val.jsonl", "ckpt/metrics.jsonl", "pred.jsonl", "km.jsonl", "report.json",
             "report.csv"]
    return {n: (d / n).read_bytes() for n in names}


def test_criterion_9_determinism(tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    differ = [n for n in a if a[n] != b[n]]
    record(9, not differ, "all artifacts identical" if not differ else f"differ: {differ}")


# -- 10 -----------------------------------------------------------------------------

def test_criterion_10_positional_encoding():
    pe = sinusoidal_table(64, 64)
    spots = (np.max(np.abs(pe[0, 0::2])) <= 1e-12 and np.max(np.abs(pe[0, 1::2] - 1)) <= 1e-12
             and np.max(np.abs(pe[:, 0] - np.sin(np.arange(64)))) <= 1e-12)
    model, _, _ = trained("monotone", "charquery", True)
    max_pos = preset("monotone").chars_per_sample[1]
    rows = pe_diagnostic(model, max_pos)
    sin_msd = mean_successive_difference([r[1] for r in rows])
    learned_msd = mean_successive_difference([r[2] for r in rows])
    record(10, bool(spots) and learned_msd > sin_msd,
           f"spot values exact={bool(spots)}, successive diff learned {learned_msd:.3f} vs sinusoidal {sin_msd:.3f}")
