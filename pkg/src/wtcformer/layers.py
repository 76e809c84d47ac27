"""Network building blocks: convolution, pooling, attention encoder, classifier head.

Layer modules own their parameter Tensors; the stateless maths lives in the
module-level functions so it can be exercised directly.
"""

import math

import numpy as np

from .core import (
    Tensor, add, conv1d, dropout, layer_norm, linear, matmul, maxpool1d,
    mean, relu, reshape, sigmoid, softmax, tanh, transpose, init_params,
)
from .errors import ConfigError, DimensionError

ACTIVATIONS = {"relu": relu, "tanh": tanh}


class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix=""):
        for attr, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + attr, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in, d_out, rng, scheme="kaiming_uniform", bias=True):
        self.weight = init_params((d_in, d_out), scheme, rng)
        self.bias = init_params((d_out,), "zeros") if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, in_channels, out_channels, kernel, rng, stride=1, padding=0):
        if kernel < 1 or padding < 0 or stride < 1:
            raise ConfigError(f"conv: kernel={kernel} stride={stride} padding={padding}")
        self.stride = stride
        self.padding = padding
        self.weight = init_params((out_channels, in_channels, kernel), "kaiming_uniform", rng)
        self.bias = init_params((out_channels,), "zeros")

    def __call__(self, x):
        return conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class MaxPool1d(Module):
    def __init__(self, kernel=5, stride=2):
        self.kernel = kernel
        self.stride = stride

    def __call__(self, x):
        return maxpool1d(x, self.kernel, self.stride)


def conv_output_length(length, kernel, stride=1, padding=0):
    return (length + 2 * padding - kernel) // stride + 1


def pool_output_length(length, kernel, stride):
    return (length - kernel) // stride + 1


# attention ----------------------------------------------------------------

def split_heads(x, heads):
    b, t, d = x.shape
    return transpose(reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x):
    b, h, t, dk = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, t, h * dk))


def multi_head_attention(x, w_q, w_k, w_v, w_o, heads, return_weights=False):
    """Unmasked scaled dot-product self-attention over ``heads`` subspaces.

    x: [batch, T, d_model].  Each head attends with its own d_model/heads slice
    of the Q/K/V projections; head outputs are concatenated and projected by w_o.
    """
    if x.ndim != 3:
        raise DimensionError(f"attention: expected [batch, T, d_model], got {x.shape}")
    d_model = x.shape[-1]
    if d_model % heads:
        raise DimensionError(f"attention: d_model {d_model} not divisible by {heads} heads")
    for w in (w_q, w_k, w_v, w_o):
        if w.shape != (d_model, d_model):
            raise DimensionError(f"attention: projection {w.shape} for d_model {d_model}")
    d_k = d_model // heads
    # the 1/sqrt(d_k) scale is applied to q, the smaller tensor
    q = split_heads(matmul(x, w_q) * (1.0 / math.sqrt(d_k)), heads)
    k = split_heads(matmul(x, w_k), heads)
    v = split_heads(matmul(x, w_v), heads)
    scores = matmul(q, transpose(k, (0, 1, 3, 2)))
    weights = softmax(scores)
    out = matmul(merge_heads(matmul(weights, v)), w_o)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    def __init__(self, d_model, heads, rng):
        if d_model % heads:
            raise ConfigError(f"d_model {d_model} not divisible by {heads} heads")
        self.heads = heads
        self.w_q = init_params((d_model, d_model), "xavier_uniform", rng)
        self.w_k = init_params((d_model, d_model), "xavier_uniform", rng)
        self.w_v = init_params((d_model, d_model), "xavier_uniform", rng)
        self.w_o = init_params((d_model, d_model), "xavier_uniform", rng)

    def __call__(self, x, return_weights=False):
        return multi_head_attention(
            x, self.w_q, self.w_k, self.w_v, self.w_o, self.heads, return_weights
        )


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.eps = eps
        self.gain = init_params((d,), "ones")
        self.shift = init_params((d,), "zeros")

    def __call__(self, x):
        return layer_norm(x, self.gain, self.shift, self.eps)


def feed_forward(x, w1, b1, w2, b2):
    """Position-wise ``ReLU(x W1 + b1) W2 + b2``."""
    return linear(relu(linear(x, w1, b1)), w2, b2)


class FeedForward(Module):
    def __init__(self, d_model, d_ff, rng):
        self.w1 = init_params((d_model, d_ff), "kaiming_uniform", rng)
        self.b1 = init_params((d_ff,), "zeros")
        self.w2 = init_params((d_ff, d_model), "kaiming_uniform", rng)
        self.b2 = init_params((d_model,), "zeros")

    def __call__(self, x):
        return feed_forward(x, self.w1, self.b1, self.w2, self.b2)


def residual_norm(x, sublayer_out, norm, rate=0.0, train=False, rng=None):
    """Post-norm residual: ``norm(x + dropout(sublayer_out))``."""
    return norm(add(x, dropout(sublayer_out, rate, train, rng)))


class EncoderLayer(Module):
    """Attention sublayer then feed-forward sublayer, each post-norm residual."""

    def __init__(self, d_model, heads, d_ff, rng, dropout_rate=0.1, eps=1e-5):
        self.dropout_rate = dropout_rate
        self.attention = MultiHeadAttention(d_model, heads, rng)
        self.norm1 = LayerNorm(d_model, eps)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm2 = LayerNorm(d_model, eps)

    def attention_sublayer(self, x, train=False, rng=None):
        return residual_norm(x, self.attention(x), self.norm1, self.dropout_rate, train, rng)

    def ffn_sublayer(self, x, train=False, rng=None):
        return residual_norm(x, self.ffn(x), self.norm2, self.dropout_rate, train, rng)

    def __call__(self, x, train=False, rng=None):
        return self.ffn_sublayer(self.attention_sublayer(x, train, rng), train, rng)


def sinusoidal_encoding(length, d_model):
    pos = np.arange(length)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def global_avg_pool(x):
    """[batch, T, d] -> [batch, d], mean over positions."""
    if x.ndim != 3:
        raise DimensionError(f"global_avg_pool: expected [batch, T, d], got {x.shape}")
    return mean(x, axis=1)


def classifier_head(v, fc1_w, fc1_b, fc2_w, fc2_b):
    """FC -> ReLU -> FC -> sigmoid; returns probabilities of shape [batch, 1]."""
    return sigmoid(linear(relu(linear(v, fc1_w, fc1_b)), fc2_w, fc2_b))


class ClassifierHead(Module):
    def __init__(self, d_model, hidden, rng):
        self.fc1 = Linear(d_model, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)

    def __call__(self, v):
        return classifier_head(v, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)


__all__ = [
    "ACTIVATIONS", "Module", "Linear", "Conv1d", "MaxPool1d", "MultiHeadAttention",
    "LayerNorm", "FeedForward", "EncoderLayer", "ClassifierHead",
    "multi_head_attention", "feed_forward", "residual_norm", "global_avg_pool",
    "classifier_head", "sinusoidal_encoding", "conv_output_length", "pool_output_length",
    "split_heads", "merge_heads",
]
