"""Fused differentiable operations used by the network layers.

These could be written as compositions of the elementary ops in
:mod:`.tensor`, but hand-written backward rules keep the training loop fast
and the graphs small.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, DimensionError
from .tensor import as_tensor, make_result, matmul, add, mul


def linear(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis of ``x``."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Zero-padded 1-D cross-correlation.

    x: [batch, in_channels, length]; weight: [out_channels, in_channels, kernel].
    Returns [batch, out_channels, floor((length + 2*padding - kernel)/stride) + 1].
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} incompatible with weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv1d: stride={stride} padding={padding}")
    batch, c_in, length = x.shape
    c_out, _, kernel = weight.shape
    padded_len = length + 2 * padding
    if padded_len < kernel:
        raise DimensionError(
            f"conv1d: padded length {padded_len} shorter than kernel {kernel}"
        )
    l_out = (padded_len - kernel) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, kernel, axis=2)[:, :, ::stride, :]
    cols = windows.transpose(0, 2, 1, 3).reshape(batch * l_out, c_in * kernel)
    w2 = weight.data.reshape(c_out, c_in * kernel)
    out = (cols @ w2.T).reshape(batch, l_out, c_out).transpose(0, 2, 1)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"conv1d: bias {bias.shape} for {c_out} output channels")
        out = out + bias.data[:, None]
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(batch * l_out, c_out)
        gx = None
        if x.requires_grad and stride == 1:
            # transposed convolution: correlate the padded gradient with the flipped kernel
            gp = np.pad(g, ((0, 0), (0, 0), (kernel - 1, kernel - 1)))
            gwin = sliding_window_view(gp, kernel, axis=2)[:, :, padding : padding + length, :]
            gcols = gwin.transpose(0, 2, 1, 3).reshape(batch * length, c_out * kernel)
            w_flip = weight.data[:, :, ::-1].transpose(0, 2, 1).reshape(c_out * kernel, c_in)
            gx = (gcols @ w_flip).reshape(batch, length, c_in).transpose(0, 2, 1)
        elif x.requires_grad:
            gcols = (g2 @ w2).reshape(batch, l_out, c_in, kernel)
            gxp = np.zeros((batch, c_in, padded_len))
            span = stride * (l_out - 1) + 1
            for k in range(kernel):
                gxp[:, :, k : k + span : stride] += gcols[:, :, :, k].transpose(0, 2, 1)
            gx = gxp[:, :, padding : padding + length]
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return make_result(out, parents, backward)


def maxpool1d(x, kernel=5, stride=2):
    """Max over sliding partitions of the last axis; ties resolve to the lowest index."""
    x = as_tensor(x)
    length = x.shape[-1]
    if length < kernel:
        raise DimensionError(f"maxpool1d: length {length} shorter than kernel {kernel}")
    windows = sliding_window_view(x.data, kernel, axis=-1)[..., ::stride, :]
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    l_out = out.shape[-1]

    def backward(g):
        # route each output gradient to its winner; overlapping windows accumulate
        rows = np.arange(x.size // length).reshape(x.shape[:-1] + (1,)) * length
        flat = (rows + np.arange(l_out) * stride + arg).ravel()
        gx = np.bincount(flat, weights=g.ravel(), minlength=x.size)
        return (gx.reshape(x.shape),)

    return make_result(out, (x,), backward)


def layer_norm(x, gain, shift, eps=1e-5):
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise DimensionError(f"layer_norm: features {d} vs gain {gain.shape} shift {shift.shape}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + shift.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv_std * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        g_gain = (g * xhat).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
        g_shift = g.reshape(-1, d).sum(axis=0) if shift.requires_grad else None
        return gx, g_gain, g_shift

    return make_result(out, (x, gain, shift), backward)


def dropout(x, rate, train, rng):
    """Inverted dropout: identity in eval mode, zero-and-rescale in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return mul(x, keep / (1.0 - rate))


def binary_cross_entropy(prob, target, pos_weight=1.0, clamp=1e-12):
    """Mean weighted BCE, ``-[w*y*ln p + (1-y)*ln(1-p)]`` with p clamped away from 0 and 1."""
    prob = as_tensor(prob)
    y = np.asarray(target, dtype=np.float64).reshape(prob.shape)
    p = np.clip(prob.data, clamp, 1.0 - clamp)
    n = p.size
    losses = -(pos_weight * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))

    def backward(g):
        return (g * -(pos_weight * y / p - (1.0 - y) / (1.0 - p)) / n,)

    return make_result(np.asarray(losses.mean()), (prob,), backward)
