"""Finite-difference gradient suites for the primitives, layers and full model."""

import numpy as np

from .core import (
    Tensor, add, binary_cross_entropy, concat, conv1d, div, dropout, exp, getitem,
    grad_check, grad_check_params, layer_norm, log, matmul, maxpool1d, mean, mul, relu,
    reshape, sigmoid, softmax, sub, tanh, transpose, tsum,
)
from .layers import EncoderLayer, classifier_head, feed_forward, global_avg_pool, multi_head_attention
from .model import ModelConfig, bce_loss, build_model

PRIMITIVE_TOL = 1e-6
MODEL_TOL = 1e-4


def _param(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_zero(rng, *shape, gap=0.05):
    x = rng.uniform(gap, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(x, requires_grad=True)


def _weighted(out, rng_seed):
    """Reduce ``out`` to a scalar with fixed random weights (exercises every output)."""
    weights = np.random.default_rng(rng_seed).normal(size=out.shape)
    return tsum(mul(out, weights))


def _check(fn, *tensors, h=1e-6):
    """Max error of ``fn(*tensors)`` checked wrt each tensor in turn."""
    worst = 0.0
    for i, t in enumerate(tensors):
        def f(_, fn=fn):
            return _weighted(fn(*tensors), 1234)
        worst = max(worst, grad_check(f, t, h))
    return worst


def primitive_errors(seed=0):
    rng = np.random.default_rng(seed)
    p = lambda *s: _param(rng, *s)  # noqa: E731
    checks = {
        "add_broadcast": lambda: _check(add, p(3, 4), p(4)),
        "sub": lambda: _check(sub, p(2, 3), p(2, 3)),
        "mul_broadcast": lambda: _check(mul, p(2, 3, 4), p(3, 1)),
        "div": lambda: _check(div, p(3, 4), _param(rng, 3, 4, low=0.5, high=2.0)),
        "matmul_2d": lambda: _check(matmul, p(3, 4), p(4, 5)),
        "matmul_folded": lambda: _check(matmul, p(2, 3, 4), p(4, 5)),
        "matmul_batched": lambda: _check(matmul, p(2, 2, 3, 4), p(2, 2, 4, 3)),
        "transpose": lambda: _check(lambda a: transpose(a, (2, 0, 1)), p(2, 3, 4)),
        "reshape": lambda: _check(lambda a: reshape(a, (6, 4)), p(2, 3, 4)),
        "slice": lambda: _check(lambda a: getitem(a, (slice(None), slice(1, 3))), p(3, 4)),
        "concat": lambda: _check(lambda a, b: concat([a, b], axis=1), p(2, 3), p(2, 2)),
        "relu": lambda: _check(relu, _away_from_zero(rng, 4, 5)),
        "tanh": lambda: _check(tanh, p(4, 5)),
        "exp": lambda: _check(exp, p(4, 5)),
        "log": lambda: _check(log, _param(rng, 4, 5, low=0.5, high=2.0)),
        "sigmoid": lambda: _check(sigmoid, _param(rng, 4, 5, low=-4, high=4)),
        "sum_axis": lambda: _check(lambda a: tsum(a, axis=1), p(3, 4, 2)),
        "mean_axis": lambda: _check(lambda a: mean(a, axis=-1, keepdims=True), p(3, 4)),
        "softmax": lambda: _check(softmax, _param(rng, 3, 5, low=-2, high=2)),
        "conv1d": lambda: _check(lambda x, w, b: conv1d(x, w, b, stride=1, padding=2),
                                 p(2, 3, 9), p(4, 3, 5), p(4)),
        "conv1d_strided": lambda: _check(lambda x, w, b: conv1d(x, w, b, stride=2, padding=1),
                                         p(2, 2, 9), p(3, 2, 3), p(3)),
        "maxpool1d": lambda: _check(lambda x: maxpool1d(x, 5, 2),
                                    Tensor(rng.permutation(2 * 3 * 13).reshape(2, 3, 13) / 10.0,
                                           requires_grad=True)),
        "layer_norm": lambda: _check(lambda x, g, b: layer_norm(x, g, b), p(3, 4, 6), p(6), p(6)),
        "dropout_train": lambda: _check(
            lambda x: dropout(x, 0.3, True, np.random.default_rng(7)), p(4, 6)),
        "bce": lambda: _check(lambda q: binary_cross_entropy(q, [1, 0, 1, 0, 1], 2.0),
                              _param(rng, 5, low=0.05, high=0.95)),
    }
    return {name: check() for name, check in checks.items()}


def layer_errors(seed=0, d_model=8, heads=2, d_ff=16, T=4, batch=2):
    rng = np.random.default_rng(seed)
    x = _param(rng, batch, T, d_model)
    ws = [_param(rng, d_model, d_model, low=-0.5, high=0.5) for _ in range(4)]
    enc = EncoderLayer(d_model, heads, d_ff, rng, dropout_rate=0.1)
    # perturb layer-norm parameters away from their trivial init
    for norm in (enc.norm1, enc.norm2):
        norm.gain.data[:] = rng.uniform(0.5, 1.5, d_model)
        norm.shift.data[:] = rng.uniform(-0.5, 0.5, d_model)
    ffn_params = [_param(rng, d_model, d_ff), _param(rng, d_ff), _param(rng, d_ff, d_model),
                  _param(rng, d_model)]
    head_params = [_param(rng, d_model, 5), _param(rng, 5), _param(rng, 5, 1), _param(rng, 1)]
    v = _param(rng, batch, d_model)

    def enc_params_fn(sub):
        def f(*_):
            return sub(x)
        return f

    return {
        "multi_head_attention": _check(
            lambda *a: multi_head_attention(a[0], *a[1:], heads=heads), x, *ws),
        "attention_sublayer": _check(enc_params_fn(enc.attention_sublayer),
                                     x, *enc.attention.parameters(), *enc.norm1.parameters()),
        "ffn_sublayer": _check(enc_params_fn(enc.ffn_sublayer),
                               x, *enc.ffn.parameters(), *enc.norm2.parameters()),
        "feed_forward": _check(lambda *a: feed_forward(*a), x, *ffn_params),
        "encoder_layer": _check(enc_params_fn(enc), x, *enc.parameters()),
        "global_avg_pool": _check(global_avg_pool, x),
        "classifier_head": _check(lambda *a: classifier_head(*a), v, *head_params),
    }


def model_errors(seed=0, batch=8, fraction=0.01, cfg=None):
    """Full-model BCE gradient vs finite differences on a parameter subsample."""
    rng = np.random.default_rng(seed)
    cfg = cfg or ModelConfig()
    model = build_model(cfg, rng)
    x = rng.uniform(0.0, 1.0, size=(batch, 1, cfg.window_length))
    y = np.arange(batch) % 2

    def loss():
        return bce_loss(model(x), y)

    return grad_check_params(loss, dict(model.named_parameters()), fraction=fraction,
                             rng=np.random.default_rng(seed + 1))


def run_all(seed=0):
    """``{suite: {check: error}}`` plus the pass verdict against the tolerances."""
    prim = primitive_errors(seed)
    layers = layer_errors(seed)
    model = model_errors(seed)
    ok = (max(prim.values()) < PRIMITIVE_TOL and max(layers.values()) < PRIMITIVE_TOL
          and max(model.values()) < MODEL_TOL)
    return {"primitives": prim, "layers": layers, "model": model, "passed": ok}
