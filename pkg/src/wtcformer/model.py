"""Model assembly, loss, training loop, prediction and the weight-file format."""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import Adam, Tensor, binary_cross_entropy, dropout, spawn, transpose, add
from .errors import ConfigError, DataError, DimensionError, IntegrityError, NumericError
from .layers import (
    ACTIVATIONS, ClassifierHead, Conv1d, EncoderLayer, Linear, MaxPool1d, Module,
    conv_output_length, global_avg_pool, pool_output_length, sinusoidal_encoding,
)

log = logging.getLogger(__name__)

VARIANTS = ("full", "cnn_only", "transformer_only")


def _from_dict(cls, data, section):
    if data is None:
        return cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(unknown)}")
    return cls(**data)


@dataclass
class ModelConfig:
    window_length: int = 60
    conv_channels: tuple = (64, 64)
    conv_kernel: int = 5
    conv_stride: int = 1
    conv_padding: int = 2
    conv_activation: str = "relu"
    pool_kernel: int = 5
    pool_stride: int = 2
    encoder_layers: int = 1
    heads: int = 8
    d_ff: int = 256
    dropout: float = 0.1
    classifier_hidden: int = 32
    layer_norm_eps: float = 1e-5
    variant: str = "full"
    positional_encoding: bool = False

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)

    @property
    def d_model(self):
        return self.conv_channels[-1]

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"model.variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.conv_activation not in ACTIVATIONS:
            raise ConfigError(f"model.conv_activation must be one of {sorted(ACTIVATIONS)}")
        if len(self.conv_channels) != 2 or min(self.conv_channels) < 1:
            raise ConfigError(f"model.conv_channels must be two positive counts, got {self.conv_channels}")
        if self.window_length < 1:
            raise ConfigError("model.window_length must be >= 1")
        if self.conv_kernel < 1 or self.conv_stride < 1 or self.conv_padding < 0:
            raise ConfigError("model conv kernel/stride must be >= 1 and padding >= 0")
        if self.pool_kernel < 1 or self.pool_stride < 1:
            raise ConfigError("model pool kernel/stride must be >= 1")
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.variant != "cnn_only" and self.encoder_layers < 1:
            raise ConfigError(f"variant {self.variant} needs encoder_layers >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must be in [0, 1), got {self.dropout}")
        if self.d_ff < 1 or self.classifier_hidden < 1:
            raise ConfigError("model.d_ff and model.classifier_hidden must be >= 1")
        return self

    def to_dict(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, data):
        return _from_dict(cls, data, "model")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 512
    lr: float = 0.001
    seed: int = 0
    pos_weight: float = 1.0
    threshold: float = 0.5

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"train.lr must be > 0, got {self.lr}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"train.threshold must be in [0, 1], got {self.threshold}")
        if self.pos_weight <= 0:
            raise ConfigError(f"train.pos_weight must be > 0, got {self.pos_weight}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return _from_dict(cls, data, "train")


def seeded_streams(seed):
    """Independent generators for parameter init, epoch shuffling and dropout."""
    init, shuffle, drop = spawn(seed, 3)
    return {"init": init, "shuffle": shuffle, "dropout": drop}


def expected_shape_chain(cfg, batch=1):
    """Stage-by-stage tensor shapes the configured network must produce."""
    d = cfg.d_model
    chain = [("input", (batch, 1, cfg.window_length))]
    if cfg.variant in ("full", "cnn_only"):
        length = cfg.window_length
        for i, ch in enumerate(cfg.conv_channels, start=1):
            length = conv_output_length(length, cfg.conv_kernel, cfg.conv_stride, cfg.conv_padding)
            if length < 1:
                raise ConfigError(f"build stage conv{i}: output length {length} < 1")
            chain.append((f"conv{i}", (batch, ch, length)))
        length = pool_output_length(length, cfg.pool_kernel, cfg.pool_stride)
        if length < 1:
            raise ConfigError(f"build stage pool: output length {length} < 1")
        chain.append(("pool", (batch, d, length)))
        seq_len = length
    else:
        seq_len = cfg.window_length
        chain.append(("input_proj", (batch, seq_len, d)))
    if cfg.variant in ("full", "transformer_only"):
        chain.append(("encoder", (batch, seq_len, d)))
    chain.append(("avg_pool", (batch, d)))
    chain.append(("head", (batch, 1)))
    return chain


class WTCFormer(Module):
    """CNN front end, Transformer encoder, average pooling and sigmoid head.

    ``variant`` selects the ablations: ``cnn_only`` drops the encoder,
    ``transformer_only`` drops the conv/pool stack and lifts each raw sample to
    d_model with a learned 1 -> d_model projection.
    """

    def __init__(self, cfg, rng):
        self.config = cfg.validate()
        d = cfg.d_model
        self.conv1 = self.conv2 = self.pool = self.input_proj = None
        self.encoder = []
        if cfg.variant in ("full", "cnn_only"):
            c1, c2 = cfg.conv_channels
            self.conv1 = Conv1d(1, c1, cfg.conv_kernel, rng, cfg.conv_stride, cfg.conv_padding)
            self.conv2 = Conv1d(c1, c2, cfg.conv_kernel, rng, cfg.conv_stride, cfg.conv_padding)
            self.pool = MaxPool1d(cfg.pool_kernel, cfg.pool_stride)
        else:
            self.input_proj = Linear(1, d, rng, scheme="xavier_uniform")
        if cfg.variant in ("full", "transformer_only"):
            self.encoder = [
                EncoderLayer(d, cfg.heads, cfg.d_ff, rng, cfg.dropout, cfg.layer_norm_eps)
                for _ in range(cfg.encoder_layers)
            ]
        self.head = ClassifierHead(d, cfg.classifier_hidden, rng)
        self.shape_chain = self._check_shapes()

    def _check_shapes(self):
        expected = expected_shape_chain(self.config)
        trace = []
        self.forward(np.zeros((1, 1, self.config.window_length)), trace=trace)
        for (stage, want), (got_stage, got) in zip(expected, trace):
            if stage != got_stage or tuple(want) != tuple(got):
                raise ConfigError(f"build stage {stage}: expected shape {want}, got {got_stage} {got}")
        return expected

    def _as_input(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 2:
            x = x.reshape(x.shape[0], 1, x.shape[1])
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != self.config.window_length:
            raise DimensionError(
                f"model input must be [batch, 1, {self.config.window_length}], got {x.shape}"
            )
        return x

    def forward(self, x, train=False, rng=None, trace=None):
        """Anomaly probabilities, shape [batch, 1]."""
        cfg = self.config
        note = trace.append if trace is not None else (lambda item: None)
        x = self._as_input(x)
        note(("input", x.shape))
        if self.conv1 is not None:
            act = ACTIVATIONS[cfg.conv_activation]
            h = act(self.conv1(x))
            note(("conv1", h.shape))
            h = act(self.conv2(h))
            note(("conv2", h.shape))
            h = self.pool(h)
            note(("pool", h.shape))
            seq = transpose(h, (0, 2, 1))
        else:
            seq = self.input_proj(transpose(x, (0, 2, 1)))
            note(("input_proj", seq.shape))
        if self.encoder:
            if cfg.positional_encoding:
                seq = add(seq, sinusoidal_encoding(seq.shape[1], seq.shape[2]))
            for layer in self.encoder:
                seq = layer(seq, train, rng)
            note(("encoder", seq.shape))
        v = global_avg_pool(seq)
        note(("avg_pool", v.shape))
        probs = self.head(dropout(v, cfg.dropout, train, rng))
        note(("head", probs.shape))
        return probs

    __call__ = forward


def build_model(cfg, rng):
    return WTCFormer(cfg, rng)


def bce_loss(probs, labels, pos_weight=1.0):
    return binary_cross_entropy(probs, labels, pos_weight)


# training -----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float | None
    test_accuracy: float | None
    wall_time_s: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def to_dict(self):
        return {"epochs": [asdict(r) for r in self.records]}


def as_arrays(windows):
    """Accept a list of WindowSample or an ``(X, y)`` pair; return float X and 0/1 y."""
    if isinstance(windows, tuple) and len(windows) == 2:
        x, y = windows
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64).reshape(-1)
    if len(windows) == 0:
        return np.zeros((0, 0)), np.zeros(0)
    x = np.stack([np.asarray(w.values, dtype=np.float64) for w in windows])
    y = np.array([1.0 if w.label else 0.0 for w in windows])
    return x, y


def predict_proba(model, x, batch_size=2048):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(len(x))
    for start in range(0, len(x), batch_size):
        out[start : start + batch_size] = model(x[start : start + batch_size]).data[:, 0]
    return out


def predict(model, windows, threshold=0.5, batch_size=2048):
    """Eval-mode probabilities and labels (``prob >= threshold``)."""
    x, _ = as_arrays(windows)
    probs = predict_proba(model, x, batch_size)
    return probs >= threshold, probs


def _bce_value(probs, y, pos_weight):
    p = np.clip(probs, 1e-12, 1.0 - 1e-12)
    return float(np.mean(-(pos_weight * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def train(model, train_windows, test_windows, tc, progress=None):
    """Mini-batch Adam training with seeded shuffling and dropout.

    Returns ``(model, TrainHistory)``; the model is updated in place.  Every
    epoch is evaluated on ``test_windows`` in eval mode when it is non-empty.
    """
    tc.validate()
    x, y = as_arrays(train_windows)
    if len(x) == 0:
        raise DataError("training set is empty")
    if y.min() == y.max():
        raise DataError(f"training set has a single class (label={int(y[0])}); need both")
    tx, ty = as_arrays(test_windows) if test_windows is not None else (np.zeros((0, 0)), np.zeros(0))

    streams = seeded_streams(tc.seed)
    shuffle_rng, drop_rng = streams["shuffle"], streams["dropout"]
    named = list(model.named_parameters())
    opt = Adam([p for _, p in named], lr=tc.lr, names=[n for n, _ in named])
    history = TrainHistory()

    for epoch in range(1, tc.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(x))
        total = 0.0
        for b, start in enumerate(range(0, len(x), tc.batch_size), start=1):
            idx = order[start : start + tc.batch_size]
            probs = model(x[idx], train=True, rng=drop_rng)
            loss = bce_loss(probs, y[idx], tc.pos_weight)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b}")
            opt.zero_grad()
            loss.backward()
            try:
                opt.step()
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b}: {exc}") from None
            total += value * len(idx)

        test_loss = test_acc = None
        if len(tx):
            p = predict_proba(model, tx)
            test_loss = _bce_value(p, ty, tc.pos_weight)
            test_acc = float(np.mean((p >= tc.threshold) == (ty > 0.5)))
        record = EpochRecord(epoch, total / len(x), test_loss, test_acc,
                             time.perf_counter() - started)
        history.records.append(record)
        log.info("epoch %d train_loss=%.6f test_loss=%s test_acc=%s (%.1fs)", epoch,
                 record.train_loss, test_loss, test_acc, record.wall_time_s)
        if progress is not None:
            progress(record)
    return model, history


# weight file --------------------------------------------------------------
#
# magic(8) | version u32 | header-json length u32 | header json (utf-8)
# | param count u32 | per param: name length u16, name, ndim u8, dims u32*ndim,
#   row-major float64 little-endian values

WEIGHTS_MAGIC = b"WTCFWGT\x00"
WEIGHTS_VERSION = 1


def save_weights(model, path, extra=None):
    header = json.dumps({"model": model.config.to_dict(), "extra": extra or {}},
                        sort_keys=True).encode()
    named = list(model.named_parameters())
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(named)))
        for name, p in named:
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def _read(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise IntegrityError(f"{path}: truncated weight file")
    return buf


def load_weights(path):
    """Rebuild a model from a weight file; returns ``(model, extra)``.

    Names and shapes are validated against the model the echoed config builds.
    """
    with open(path, "rb") as fh:
        if _read(fh, 8, path) != WEIGHTS_MAGIC:
            raise IntegrityError(f"{path}: not a weight file (bad magic)")
        version, hlen = struct.unpack("<II", _read(fh, 8, path))
        if version != WEIGHTS_VERSION:
            raise IntegrityError(f"{path}: unsupported weight format version {version}")
        header = json.loads(_read(fh, hlen, path))
        cfg = ModelConfig.from_dict(header["model"])
        model = build_model(cfg, spawn(0, 1)[0])
        params = dict(model.named_parameters())
        (count,) = struct.unpack("<I", _read(fh, 4, path))
        if count != len(params):
            raise IntegrityError(f"{path}: {count} parameters stored, config expects {len(params)}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read(fh, 2, path))
            name = _read(fh, nlen, path).decode()
            (ndim,) = struct.unpack("<B", _read(fh, 1, path))
            shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim, path))
            if name not in params:
                raise IntegrityError(f"{path}: unexpected parameter {name!r}")
            if tuple(shape) != params[name].shape:
                raise IntegrityError(
                    f"{path}: parameter {name} has shape {shape}, config expects {params[name].shape}"
                )
            n = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(_read(fh, 8 * n, path), dtype="<f8").reshape(shape)
            params[name].data[...] = values
        if fh.read(1):
            raise IntegrityError(f"{path}: trailing bytes after parameters")
    return model, header.get("extra", {})
