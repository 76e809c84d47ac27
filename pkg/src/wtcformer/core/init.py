"""Seeded random streams and parameter initialisation.

Every stream is a numpy ``Generator`` over PCG64, seeded through
``SeedSequence`` so child streams derived with :func:`spawn` are independent
and reproducible.
"""

import numpy as np

from ..errors import ContractError
from .tensor import Tensor

SCHEMES = ("kaiming_uniform", "xavier_uniform", "zeros", "ones")


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def spawn(seed, n):
    """``n`` independent generators derived from one integer seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def fans(shape):
    """(fan_in, fan_out) for ``[in, out]`` matrices and ``[out, in, kernel]`` conv weights."""
    if len(shape) == 2:
        return shape[0], shape[1]
    if len(shape) == 3:
        out_ch, in_ch, kernel = shape
        return in_ch * kernel, out_ch * kernel
    raise ContractError(f"no fan convention for shape {shape}")


def init_params(shape, scheme, rng=None, name=None):
    shape = tuple(int(n) for n in shape)
    if scheme == "zeros":
        data = np.zeros(shape)
    elif scheme == "ones":
        data = np.ones(shape)
    elif scheme == "kaiming_uniform":
        fan_in, _ = fans(shape)
        bound = np.sqrt(6.0 / fan_in)
        data = rng.uniform(-bound, bound, size=shape)
    elif scheme == "xavier_uniform":
        fan_in, fan_out = fans(shape)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        data = rng.uniform(-bound, bound, size=shape)
    else:
        raise ContractError(f"unknown init scheme {scheme!r}; expected one of {SCHEMES}")
    return Tensor(data, requires_grad=True, name=name)
