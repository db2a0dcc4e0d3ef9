"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 5 to 7 train every reference model on the default synthetic corpus
and take a long time (see README). Run just this file with

    pytest tests/test_acceptance.py -v

Each criterion's line is printed even when pytest captures output.
"""

import time

import numpy as np
import pytest

from awe.cli import main, run_grad_check
from awe.data import read_archive, write_archive
from awe.experiment import (CNN, COSCOS2, DNN, DTW, HINGE, HINGE_LDA, SWEEP_SIAMESE, RunConfig,
                            Trainer, lda_source_row, prepare_corpus, run_reference_experiment,
                            sweep_dim)
from awe.optim import AdadeltaState, adadelta_step
from awe.samediff import average_precision, dtw_distance

from oracles import ap_threshold_sweep, dtw_exhaustive
from test_data import random_archive
from test_optim import STEP1_DELTA, STEP2_DELTA, STEP2_X
from test_samediff import random_scored

# The sweep trains four widths per seed; three seeds keep it near ten minutes.
SWEEP_SEEDS = [1, 2, 3]


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def reference():
    config = RunConfig()
    corpus = prepare_corpus(config)
    trainer = Trainer(config, corpus)
    start = time.perf_counter()
    rows = run_reference_experiment(config, corpus, trainer)
    elapsed = time.perf_counter() - start
    return {r.model: r for r in rows}, elapsed, config, corpus, trainer


def test_1_gradient_correctness(report):
    start = time.perf_counter()
    results = run_grad_check(count=20, seed=1)
    elapsed = time.perf_counter() - start
    worst = max(results.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in results.items()) + f"; {elapsed:.1f}s"
    assert report(1, worst <= 1e-6 and elapsed < 60, detail)


def test_2_ap_oracle(report):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        s = random_scored(rng)
        worst = max(worst, abs(average_precision(s).ap - ap_threshold_sweep(s.distances, s.same)))
    elapsed = time.perf_counter() - start
    assert report(2, worst <= 1e-12 and elapsed < 30, f"max |diff| {worst:.1e}; {elapsed:.1f}s")


def test_3_dtw_oracle(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(500):
        b = int(rng.integers(1, 5))
        x = rng.normal(size=(int(rng.integers(1, 9)), b))
        y = rng.normal(size=(int(rng.integers(1, 9)), b))
        worst = max(worst, abs(dtw_distance(x, y) - dtw_exhaustive(x, y)))
    identity = symmetry = 0.0
    for _ in range(100):
        b = int(rng.integers(1, 6))
        x = rng.normal(size=(int(rng.integers(1, 30)), b))
        y = rng.normal(size=(int(rng.integers(1, 30)), b))
        identity = max(identity, abs(dtw_distance(x, x)))
        symmetry = max(symmetry, abs(dtw_distance(x, y) - dtw_distance(y, x)))
    ok = worst <= 1e-12 and identity == 0.0 and symmetry <= 1e-12
    assert report(3, ok, f"oracle {worst:.1e}, dtw(X,X) {identity:.1e}, asymmetry {symmetry:.1e}")


def test_4_adadelta(report):
    params = [{"W": np.array([0.0])}]
    state = AdadeltaState(params)
    adadelta_step(params, [{"W": np.array([1.0])}], state)
    first = params[0]["W"][0]
    adadelta_step(params, [{"W": np.array([1.0])}], state)
    second = params[0]["W"][0] - first
    err = max(abs(first - STEP1_DELTA), abs(second - STEP2_DELTA), abs(params[0]["W"][0] - STEP2_X))
    assert report(4, err <= 1e-12, f"dx1 {first:.6e}, dx2 {second:.6e}, max err {err:.1e}")


def test_5_end_to_end_ordering(report, reference):
    rows, elapsed = reference[:2]
    ap = {m: rows[m].ap_mean for m in (HINGE, COSCOS2, DTW, CNN, DNN)}
    checks = [ap[HINGE] >= 0.90, ap[HINGE] > ap[COSCOS2], ap[HINGE] > ap[DTW], ap[CNN] > ap[DNN],
              elapsed < 15 * 60]
    detail = (f"hinge {ap[HINGE]:.4f}, coscos2 {ap[COSCOS2]:.4f}, dtw {ap[DTW]:.4f}, "
              f"cnn {ap[CNN]:.4f}, dnn {ap[DNN]:.4f}; {elapsed / 60:.1f} min")
    assert report(5, all(checks), detail)


def test_6_lda_compaction(report, reference):
    rows, _, config, corpus, trainer = reference
    source = lda_source_row(config, corpus, trainer)
    loss = source.ap_mean - rows[HINGE_LDA].ap_mean
    detail = (f"unprojected {source.ap_mean:.4f} (d={source.dim}), "
              f"LDA {rows[HINGE_LDA].ap_mean:.4f} (d={rows[HINGE_LDA].dim}), loss {loss:.4f}")
    assert report(6, loss <= 0.02, detail)


def test_7_dimension_sweep(report, reference):
    _, _, config, corpus, trainer = reference
    sweep_config = config.replace(seeds=SWEEP_SEEDS, sweep_families=[SWEEP_SIAMESE],
                                  sweep_dims=[10, 50, 200, 500])
    ap = {r.dim: r.ap_mean for _, r in sweep_dim(sweep_config, corpus, trainer)}
    gap = abs(ap[200] - ap[500])
    detail = ", ".join(f"{d}: {v:.4f}" for d, v in ap.items()) + f"; |AP200 - AP500| {gap:.4f}"
    assert report(7, gap <= 0.05, detail)


def _run_twice(tmp_path, name, argv):
    outputs = []
    for k in ("a", "b"):
        out = tmp_path / f"{name}_{k}"
        assert main([argv[0], "--out", str(out)] + argv[1:]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    return outputs[0] == outputs[1]


def test_8_determinism(report, tmp_path):
    synth = ["--num-types", "5", "--tokens-per-type", "12"]
    assert main(["synth", "--out", str(tmp_path / "s"), "--seed", "8"] + synth) == 0
    c = tmp_path / "c"
    assert main(["cmvn", "--out", str(c)] + [str(tmp_path / "s" / f"{n}.awe")
                                             for n in ("train", "dev", "test")]) == 0
    train, dev, test = (str(c / f"{n}.awe") for n in ("train", "dev", "test"))
    fit = ["--train", train, "--dev", dev, "--epochs", "2", "--seed", "8"]
    commands = {
        "synth": ["synth", "--seed", "8"] + synth,
        "classifier": ["train-classifier", "--kind", "cnn", "--bottleneck", "6"] + fit,
        "dnn": ["train-classifier", "--kind", "dnn"] + fit,
        "hinge": ["train-siamese", "--embed-dim", "6"] + fit,
        "coscos2": ["train-siamese", "--loss", "coscos2", "--embed-dim", "6"] + fit,
        "dtw": ["eval-dtw", test],
    }
    same = {name: _run_twice(tmp_path, name, argv) for name, argv in commands.items()}
    model = str(tmp_path / "hinge_a" / "model.ckpt")
    same["embed"] = _run_twice(tmp_path, "embed", ["embed", "--model", model, train])
    emb = str(tmp_path / "embed_a" / "embeddings.awee")
    same["lda-fit"] = _run_twice(tmp_path, "lda", ["lda-fit", "--dim", "3", emb])
    same["eval-ap"] = _run_twice(tmp_path, "ap", ["eval-ap", emb])
    failed = [k for k, v in same.items() if not v]
    assert report(8, not failed, f"{len(same)} commands, differing: {failed or 'none'}")


def test_9_format_round_trip(report):
    rng = np.random.default_rng(9)
    bad = 0
    for _ in range(200):
        data = write_archive(random_archive(rng, max_segments=12))
        bad += write_archive(read_archive(data)) != data
    assert report(9, bad == 0, f"{200 - bad}/200 archives byte-identical")
