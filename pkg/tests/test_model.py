import json
import struct

import numpy as np
import pytest

from wtcformer.core import Tensor
from wtcformer.errors import ConfigError, DataError, DimensionError, IntegrityError, NumericError
from wtcformer.model import (
    ModelConfig, TrainConfig, bce_loss, build_model, expected_shape_chain, load_weights, predict,
    save_weights, seeded_streams, train,
)
from wtcformer.verify import MODEL_TOL, model_errors

SMALL = ModelConfig(window_length=20, conv_channels=(8, 8), heads=2, d_ff=16, classifier_hidden=16)


def closed_form_params(cfg):
    """Hand-derived parameter count of the configured network."""
    d, k = cfg.d_model, cfg.conv_kernel
    c1, c2 = cfg.conv_channels
    conv = (1 * k * c1 + c1) + (c1 * k * c2 + c2)
    enc = cfg.encoder_layers * (4 * d * d + 2 * d + (d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d) + 2 * d)
    head = d * cfg.classifier_hidden + cfg.classifier_hidden + cfg.classifier_hidden + 1
    return {"full": conv + enc + head, "cnn_only": conv + head,
            "transformer_only": (d + d) + enc + head}[cfg.variant]


def toy_data(n=64, w=20, seed=0):
    """Separable windows: positives carry a spike."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.3, 0.5, size=(n, w))
    y = (np.arange(n) % 2).astype(float)
    spikes = rng.integers(0, w, size=n)
    x[y == 1, spikes[y == 1]] = 1.0
    return x, y


def test_default_parameter_count():
    m = build_model(ModelConfig(), np.random.default_rng(0))
    assert m.num_parameters() == 72769 == closed_form_params(ModelConfig())


@pytest.mark.parametrize("variant", ["full", "cnn_only", "transformer_only"])
@pytest.mark.parametrize("cfg", [ModelConfig(), SMALL, ModelConfig(encoder_layers=2, d_ff=128)])
def test_parameter_count_closed_form(cfg, variant):
    cfg = ModelConfig(**{**cfg.to_dict(), "variant": variant})
    assert build_model(cfg, np.random.default_rng(0)).num_parameters() == closed_form_params(cfg)


def test_cnn_only_is_smaller():
    rng = np.random.default_rng(0)
    full = build_model(ModelConfig(), rng).num_parameters()
    assert build_model(ModelConfig(variant="cnn_only"), rng).num_parameters() < full


def test_default_shape_chain():
    m = build_model(ModelConfig(), np.random.default_rng(0))
    trace = []
    m.forward(np.zeros((3, 1, 60)), trace=trace)
    shapes = dict(trace)
    assert shapes["input"] == (3, 1, 60)
    assert shapes["pool"] == (3, 64, 28)
    assert shapes["encoder"] == (3, 28, 64)
    assert shapes["avg_pool"] == (3, 64)
    assert shapes["head"] == (3, 1)
    assert [s for s, _ in expected_shape_chain(ModelConfig(), 3)] == [s for s, _ in trace]


def test_forward_output_contract():
    m = build_model(ModelConfig(), np.random.default_rng(0))
    p = m(np.random.default_rng(1).uniform(size=(2, 1, 60))).data
    assert p.shape == (2, 1)
    assert ((p > 0) & (p < 1)).all()
    assert m(np.zeros((2, 60))).shape == (2, 1)
    with pytest.raises(DimensionError):
        m(np.zeros((2, 1, 59)))


def test_bad_configs_name_the_stage():
    with pytest.raises(ConfigError, match="build stage conv2"):
        build_model(ModelConfig(window_length=4, conv_padding=0, conv_kernel=3), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        ModelConfig(heads=5).validate()
    with pytest.raises(ConfigError):
        ModelConfig(variant="lstm").validate()
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"layers": 3})


def test_config_round_trip():
    cfg = ModelConfig(heads=4, positional_encoding=True)
    assert ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0).validate()


def test_positional_encoding_flag_changes_output():
    x = np.random.default_rng(2).uniform(size=(2, 1, 60))
    a = build_model(ModelConfig(), np.random.default_rng(0))(x).data
    b = build_model(ModelConfig(positional_encoding=True), np.random.default_rng(0))(x).data
    assert not np.allclose(a, b)


def test_eval_mode_is_deterministic_train_mode_is_not():
    m = build_model(ModelConfig(), np.random.default_rng(0))
    x = np.random.default_rng(3).uniform(size=(4, 1, 60))
    assert np.array_equal(m(x).data, m(x).data)
    rng = np.random.default_rng(4)
    assert not np.array_equal(m(x, train=True, rng=rng).data, m(x, train=True, rng=rng).data)


def test_bce_loss_examples():
    assert bce_loss(Tensor([[0.5]]), [1]).item() == pytest.approx(0.693147, abs=1e-6)
    assert bce_loss(Tensor([[1.0], [0.0]]), [1, 0]).item() < 2.8e-11


def test_full_model_gradient_subsample():
    errors = model_errors(seed=0)
    assert max(errors.values()) < MODEL_TOL


@pytest.mark.parametrize("variant", ["cnn_only", "transformer_only"])
def test_variant_gradients(variant):
    errors = model_errors(seed=1, batch=4, fraction=0.02, cfg=ModelConfig(**{**SMALL.to_dict(), "variant": variant}))
    assert max(errors.values()) < MODEL_TOL


# training -------------------------------------------------------------------

def test_small_model_memorises_toy_set():
    x, y = toy_data()
    m = build_model(SMALL, seeded_streams(0)["init"])
    _, hist = train(m, (x, y), (x, y), TrainConfig(epochs=60, batch_size=64, lr=0.01))
    assert hist.records[-1].train_loss < 0.01
    assert hist.records[-1].test_accuracy == 1.0


def test_training_is_bit_reproducible(tmp_path):
    x, y = toy_data()
    tc = TrainConfig(epochs=3, batch_size=16, seed=5)
    paths = []
    for run in range(2):
        m = build_model(SMALL, seeded_streams(tc.seed)["init"])
        _, hist = train(m, (x, y), (x, y), tc)
        paths.append(tmp_path / f"w{run}.bin")
        save_weights(m, paths[-1])
        losses = [r.train_loss for r in hist.records]
        if run == 0:
            first = losses
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert losses == first


def test_last_partial_batch_is_kept(monkeypatch):
    from wtcformer.model import WTCFormer

    x, y = toy_data(n=10)
    m = build_model(SMALL, np.random.default_rng(0))
    seen = []
    forward = WTCFormer.forward

    def spy(self, inp, train=False, rng=None, trace=None):
        if train:
            seen.append(len(inp))
        return forward(self, inp, train, rng, trace)
    monkeypatch.setattr(WTCFormer, "__call__", spy)
    train(m, (x, y), None, TrainConfig(epochs=1, batch_size=4))
    assert seen == [4, 4, 2]


def test_train_refuses_bad_sets():
    m = build_model(SMALL, np.random.default_rng(0))
    x, _ = toy_data(n=8)
    with pytest.raises(DataError, match="single class"):
        train(m, (x, np.zeros(8)), None, TrainConfig(epochs=1))
    with pytest.raises(DataError):
        train(m, (np.zeros((0, 20)), np.zeros(0)), None, TrainConfig(epochs=1))
    with pytest.raises(ConfigError):
        train(m, toy_data(n=8), None, TrainConfig(epochs=0))


def test_nan_input_aborts_with_coordinates():
    x, y = toy_data(n=8)
    x[3, 0] = np.nan
    m = build_model(SMALL, np.random.default_rng(0))
    with pytest.raises(NumericError, match="epoch 1 batch 1"):
        train(m, (x, y), None, TrainConfig(epochs=1, batch_size=8))


# predict --------------------------------------------------------------------

def test_predict_threshold_rules():
    m = build_model(SMALL, np.random.default_rng(0))
    x, _ = toy_data(n=50)
    labels, probs = predict(m, (x, np.zeros(50)), threshold=0.5)
    assert np.array_equal(labels, probs >= 0.5)
    assert predict(m, (x, np.zeros(50)), threshold=0.0)[0].all()
    assert not predict(m, (x, np.zeros(50)), threshold=1.0)[0].any()
    # label counts agree with the histogram partition at the threshold
    t = float(np.median(probs))
    counts, edges = np.histogram(probs, bins=[0.0, t, 1.0])
    assert predict(m, (x, np.zeros(50)), threshold=t)[0].sum() == counts[1]


def test_predict_boundary_is_positive():
    m = build_model(SMALL, np.random.default_rng(0))
    for p in m.head.fc2.parameters():
        p.data[...] = 0.0
    labels, probs = predict(m, toy_data(n=4), threshold=0.5)
    assert (probs == 0.5).all() and labels.all()


def test_predict_batches_consistently():
    m = build_model(SMALL, np.random.default_rng(0))
    data = toy_data(n=37)
    a = predict(m, data, batch_size=5)[1]
    b = predict(m, data, batch_size=1000)[1]
    assert np.allclose(a, b, atol=1e-15)


# weight file ------------------------------------------------------------------

def test_weights_round_trip(tmp_path):
    m = build_model(ModelConfig(), np.random.default_rng(7))
    path = tmp_path / "m.bin"
    save_weights(m, path, extra={"note": "x"})
    back, extra = load_weights(path)
    assert extra == {"note": "x"}
    assert back.config == m.config
    for (n1, p1), (n2, p2) in zip(m.named_parameters(), back.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    save_weights(back, tmp_path / "again.bin", extra={"note": "x"})
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_weights_reject_corruption(tmp_path):
    m = build_model(SMALL, np.random.default_rng(0))
    path = tmp_path / "m.bin"
    save_weights(m, path)
    raw = path.read_bytes()
    cases = {
        "magic": b"XXXXXXXX" + raw[8:],
        "version": raw[:8] + struct.pack("<I", 99) + raw[12:],
        "truncated": raw[:-8],
        "trailing": raw + b"\0",
    }
    for name, blob in cases.items():
        bad = tmp_path / f"{name}.bin"
        bad.write_bytes(blob)
        with pytest.raises(IntegrityError):
            load_weights(bad)


def test_weights_reject_config_mismatch(tmp_path):
    m = build_model(SMALL, np.random.default_rng(0))
    path = tmp_path / "m.bin"
    save_weights(m, path)
    raw = path.read_bytes()
    hlen = struct.unpack_from("<I", raw, 12)[0]
    header = json.loads(raw[16 : 16 + hlen])
    header["model"]["d_ff"] = 32
    new = json.dumps(header, sort_keys=True).encode()
    bad = tmp_path / "bad.bin"
    bad.write_bytes(raw[:12] + struct.pack("<I", len(new)) + new + raw[16 + hlen :])
    with pytest.raises(IntegrityError, match="shape"):
        load_weights(bad)
