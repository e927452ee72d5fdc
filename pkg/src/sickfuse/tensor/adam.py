"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Parameter


class AdamState:
    """Per-parameter moment accumulators plus the shared step counter.

    Defaults (lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8) are the
    conventional ones; the update is

        m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
        p <- p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value.data) for p in params}
        self.v = {p.name: np.zeros_like(p.value.data) for p in params}


def adam_step(params: list[Parameter], state: AdamState) -> None:
    """One Adam update; consumes and zeroes each parameter's gradient."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p in params:
        if p.name not in state.m:
            raise ContractError(f"parameter {p.name!r} unknown to this AdamState")
        g = p.grad.data
        m = state.m[p.name] = b1 * state.m[p.name] + (1.0 - b1) * g
        v = state.v[p.name] = b2 * state.v[p.name] + (1.0 - b2) * (g * g)
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.assign(p.value.data - step)
        p.zero_grad()
