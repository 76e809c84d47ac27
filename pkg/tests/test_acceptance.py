"""Acceptance criteria, one test per criterion, each at its stated tolerance.

The end-to-end benchmark (criteria 6, 7 and 9) trains the three model variants
on the full synthetic corpus; on one core this takes several hours.
"""

import itertools
import time
import warnings

import numpy as np
import pytest
import yaml

from wtcformer.cli import main
from wtcformer.core import Tensor, layer_norm
from wtcformer.dataset import SyntheticSpec, generate_synthetic
from wtcformer.evaluation import ConfusionMatrix, fit_and_score, metrics, run_variant
from wtcformer.layers import EncoderLayer, multi_head_attention
from wtcformer.model import ModelConfig, TrainConfig, build_model, seeded_streams, train
from wtcformer.verify import MODEL_TOL, PRIMITIVE_TOL, run_all
from wtcformer.windowing import SplitSpec, WindowConfig, build_corpus, split, stack_windows, window_count

BENCH_TRAIN = TrainConfig(epochs=50, batch_size=512, lr=0.001, seed=0)


def brute_count(n, w, s):
    return sum(1 for start in range(0, n, s) if start + w <= n)


@pytest.fixture(scope="session")
def corpus():
    return build_corpus(generate_synthetic(SyntheticSpec()), WindowConfig())


@pytest.fixture(scope="session")
def holdout(corpus):
    return split(corpus, SplitSpec())


@pytest.fixture(scope="session")
def benchmark(holdout):
    train_part, test_part = holdout
    start = time.perf_counter()
    model, history, report = fit_and_score(train_part, test_part, ModelConfig(), BENCH_TRAIN)
    return {"model": model, "history": history, "report": report,
            "seconds": time.perf_counter() - start}


@pytest.mark.criterion(1, "window-count fidelity")
def test_c1_window_counts(record):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    lengths = rng.integers(741, 1700, size=67)
    lengths[-1] += 94866 - lengths.sum()
    assert len(lengths) == 67 and lengths.sum() == 94866 and lengths.min() >= 60
    total = sum(window_count(int(n), 60, 1) for n in lengths)
    assert total == 90913
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, w, s = int(rng.integers(1, 400)), int(rng.integers(1, 80)), int(rng.integers(1, 10))
        assert window_count(n, w, s) == brute_count(n, w, s), (n, w, s)
    record(f"total windows {total}; 1000 random triples match enumeration")
    assert time.perf_counter() - start < 5.0


@pytest.mark.criterion(2, "metrics oracle")
def test_c2_metrics_oracle(record):
    start = time.perf_counter()
    m = metrics(ConfusionMatrix(tp=2472, fp=59, fn=180, tn=24563))
    got = {k: 100 * getattr(m, k) for k in ("recall", "precision", "f1", "accuracy")}
    want = {"recall": 93.21, "precision": 97.67, "f1": 95.39, "accuracy": 99.12}
    for name, value in want.items():
        assert abs(got[name] - value) < 0.01, name
    record(", ".join(f"{k} {v:.2f}%" for k, v in got.items()))
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion(3, "gradient suite")
def test_c3_gradient_suite(record):
    start = time.perf_counter()
    result = run_all()
    prim = max(result["primitives"].values())
    lay = max(result["layers"].values())
    mod = max(result["model"].values())
    record(f"primitives {prim:.1e}, layers {lay:.1e}, model {mod:.1e}")
    assert prim < PRIMITIVE_TOL and lay < PRIMITIVE_TOL and mod < MODEL_TOL
    assert result["passed"]
    assert time.perf_counter() - start < 120.0


@pytest.mark.criterion(4, "structural invariants")
def test_c4_structural_invariants(record):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    params = [Tensor(rng.normal(scale=0.3, size=(64, 64))) for _ in range(4)]
    x = Tensor(rng.normal(size=(3, 28, 64)))
    _, weights = multi_head_attention(x, *params, heads=8, return_weights=True)
    row_err = np.abs(weights.data.sum(axis=-1) - 1.0).max()
    assert row_err < 1e-12

    enc = EncoderLayer(8, 2, 16, np.random.default_rng(5))
    x3 = np.random.default_rng(6).normal(size=(1, 3, 8))
    base = enc(Tensor(x3)).data
    for perm in map(list, itertools.permutations(range(3))):
        assert np.abs(enc(Tensor(x3[:, perm])).data - base[:, perm]).max() < 1e-10
    big = EncoderLayer(64, 8, 256, np.random.default_rng(7))
    x28 = np.random.default_rng(8).normal(size=(2, 28, 64))
    perm = np.random.default_rng(9).permutation(28)
    eq_err = np.abs(big(Tensor(x28[:, perm])).data - big(Tensor(x28)).data[:, perm]).max()
    assert eq_err < 1e-10

    y = layer_norm(Tensor(np.random.default_rng(10).normal(3.0, 7.0, size=(4, 28, 64))),
                   Tensor(np.ones(64)), Tensor(np.zeros(64))).data
    mean_err = np.abs(y.mean(axis=-1)).max()
    var_err = np.abs(y.var(axis=-1) - 1.0).max()
    assert mean_err < 1e-10 and var_err < 1e-6

    trace = []
    build_model(ModelConfig(), np.random.default_rng(0)).forward(np.zeros((5, 1, 60)), trace=trace)
    shapes = dict(trace)
    chain = [shapes[k] for k in ("input", "pool", "encoder", "avg_pool", "head")]
    assert chain == [(5, 1, 60), (5, 64, 28), (5, 28, 64), (5, 64), (5, 1)]
    record(f"row sums {row_err:.1e}, equivariance {eq_err:.1e}, "
           f"layer norm mean {mean_err:.1e} var {var_err:.1e}")
    assert time.perf_counter() - start < 30.0


@pytest.mark.criterion(5, "overfit sanity")
def test_c5_overfit_sanity(corpus, record):
    start = time.perf_counter()
    x, y = stack_windows(corpus)
    rng = np.random.default_rng(0)
    idx = np.concatenate([rng.choice(np.flatnonzero(y == 1), 256, replace=False),
                          rng.choice(np.flatnonzero(y == 0), 256, replace=False)])
    batch = (x[idx], y[idx])
    model = build_model(ModelConfig(), seeded_streams(0)["init"])
    # one batch of 512 per epoch: 200 epochs are 200 Adam steps
    _, history = train(model, batch, None, TrainConfig(epochs=200, batch_size=512, lr=0.001))
    losses = [r.train_loss for r in history.records]
    first = next((i + 1 for i, v in enumerate(losses) if v < 0.05), None)
    seconds = time.perf_counter() - start
    record(f"final BCE {losses[-1]:.4f}, min {min(losses):.4f}, first < 0.05 at step {first}")
    assert losses[-1] < 0.05
    assert seconds < 120.0


@pytest.mark.criterion(6, "end-to-end benchmark")
def test_c6_benchmark(benchmark, record):
    m = benchmark["report"].metrics
    minutes = benchmark["seconds"] / 60
    runtime = "met" if minutes < 10 else "missed (soft)"
    record(f"F1 {m.f1:.4f}, accuracy {m.accuracy:.4f}, recall {m.recall:.4f}, "
           f"precision {m.precision:.4f}; {minutes:.1f} min, 10 min target {runtime}")
    assert m.f1 >= 0.90
    assert m.accuracy >= 0.98


@pytest.mark.criterion(7, "ablation ordering", soft=True)
def test_c7_ablation_ordering(benchmark, holdout, record):
    train_part, test_part = holdout
    scores = {"full": benchmark["report"].metrics}
    for variant in ("cnn_only", "transformer_only"):
        scores[variant] = run_variant(variant, train_part, test_part, ModelConfig(), BENCH_TRAIN).report.metrics
    f1_order = scores["full"].f1 > max(scores["cnn_only"].f1, scores["transformer_only"].f1)
    recall_order = scores["transformer_only"].recall < min(scores["full"].recall, scores["cnn_only"].recall)
    for name, m in scores.items():
        record(f"{name} F1 {m.f1:.4f} recall {m.recall:.4f}")
    record(f"full F1 highest: {f1_order}; transformer_only recall lowest: {recall_order}")
    if not (f1_order and recall_order):
        warnings.warn("ablation ordering not reproduced; investigation required")


@pytest.mark.criterion(8, "determinism")
def test_c8_determinism(tmp_path, record):
    (tmp_path / "spec.yaml").write_text(yaml.safe_dump(
        {"num_files": 3, "points_per_file": 300, "window_length": 20, "seed": 11}))
    (tmp_path / "run.yaml").write_text(yaml.safe_dump({
        "window": {"w": 20},
        "model": {"window_length": 20, "conv_channels": [8, 8], "heads": 2, "d_ff": 16,
                  "classifier_hidden": 8},
        "train": {"epochs": 3, "batch_size": 64, "seed": 5},
    }))
    assert main(["synth", "--spec", str(tmp_path / "spec.yaml"), "--out", str(tmp_path / "data")]) == 0
    for i in range(2):
        assert main(["train", "--data", str(tmp_path / "data"), "--config", str(tmp_path / "run.yaml"),
                     "--out", str(tmp_path / f"w{i}.bin")]) == 0
        assert main(["eval", "--data", str(tmp_path / "data"), "--weights", str(tmp_path / f"w{i}.bin"),
                     "--out", str(tmp_path / f"r{i}.json")]) == 0
    assert (tmp_path / "w0.bin").read_bytes() == (tmp_path / "w1.bin").read_bytes()
    assert (tmp_path / "r0.json").read_bytes() == (tmp_path / "r1.json").read_bytes()
    record("weight files and reports byte-identical across two runs")


@pytest.mark.criterion(9, "analysis plumbing")
def test_c9_analysis_plumbing(benchmark, record):
    report = benchmark["report"]
    cm = report.confusion
    groups = report.position.groups
    if report.position.total:
        total = sum(g["percent"] for g in groups)
        assert abs(total - 100.0) < 0.01
    else:
        total = 0.0
    types = report.types
    assert types["available"]
    assert types["missed_windows"] == cm.fn
    assert types["accounted"] == cm.fn
    record(f"{cm.fn} missed windows all typed; position groups sum {total:.4f}%")
