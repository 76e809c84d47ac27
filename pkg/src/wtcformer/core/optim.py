"""Adam with bias correction."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """Apply one Adam update in place to each array in ``params``.

    ``state.t`` is incremented before the update.  Raises NumericError when any
    gradient is non-finite; nothing is modified in that case.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter #{i} at step {state.t + 1}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params, state


class Adam:
    """Optimizer over a list of parameter Tensors; reads ``.grad`` (missing = zero)."""

    def __init__(self, params, lr=0.001, betas=(0.9, 0.999), eps=1e-8, names=None):
        self.params = list(params)
        self.names = names
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        try:
            adam_step([p.data for p in self.params], grads, self.state)
        except NumericError as exc:
            if self.names:
                bad = [n for n, g in zip(self.names, grads) if not np.all(np.isfinite(g))]
                raise NumericError(f"{exc} ({', '.join(bad)})") from None
            raise
