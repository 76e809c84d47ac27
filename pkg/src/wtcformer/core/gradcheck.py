"""Central finite-difference gradient checking."""

import numpy as np

from ..errors import ContractError


def relative_error(analytic, numeric):
    """``|a - n| / max(1, |a|, |n|)`` elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def _scalar(out):
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    return float(out.data.reshape(-1)[0])


def grad_check(fn, x, h=1e-6, indices=None):
    """Compare the backward-pass gradient of ``fn`` at ``x`` with central differences.

    ``fn(x)`` must return a scalar Tensor.  ``x.data`` is perturbed in place and
    restored.  ``indices`` optionally restricts the check to a subset of flat
    coordinates.  Returns the max relative error (see :func:`relative_error`).
    """
    if not x.requires_grad:
        raise ContractError("grad_check: x must require gradients")
    x.grad = None
    out = fn(x)
    _scalar(out)
    out.backward()
    analytic = np.zeros(x.size) if x.grad is None else x.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    coords = range(x.size) if indices is None else indices
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = _scalar(fn(x))
        flat[i] = orig - h
        f_minus = _scalar(fn(x))
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        worst = max(worst, float(relative_error(analytic[i], numeric)))
    return worst


def grad_check_params(loss_fn, params, fraction=0.01, rng=None, h=1e-6, min_per_param=1):
    """Finite-difference check over a random subsample of many parameters.

    ``loss_fn()`` takes no arguments and closes over ``params`` (a mapping of
    name -> Tensor).  Returns ``{name: max relative error}``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params.values():
        p.grad = None
    out = loss_fn()
    _scalar(out)
    out.backward()
    analytic = {name: (np.zeros(p.size) if p.grad is None else p.grad.reshape(-1).copy())
                for name, p in params.items()}

    errors = {}
    for name, p in params.items():
        count = min(p.size, max(min_per_param, int(round(fraction * p.size))))
        picks = rng.choice(p.size, size=count, replace=False)
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = _scalar(loss_fn())
            flat[i] = orig - h
            f_minus = _scalar(loss_fn())
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, float(relative_error(analytic[name][i], numeric)))
        errors[name] = worst
    return errors
