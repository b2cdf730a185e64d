"""Adam optimizer over a model's parameter list."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, lr, beta1, beta2, eps)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(params, grads, state: AdamState, names=None):
    """One bias-corrected Adam update, in place.

    Every gradient is checked first; a non-finite entry aborts the step with
    the parameters and state untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state are not aligned")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradientError(
                f"non-finite gradient in parameter {label} ({bad} entries) at step {state.t + 1}; step aborted"
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    step = state.lr / c1
    root_c2 = math.sqrt(c2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        tmp = np.empty_like(p)
        m *= b1
        m += np.multiply(g, 1.0 - b1, out=tmp)
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        # lr * m_hat / (sqrt(v_hat) + eps), with the bias corrections folded into step and root_c2
        np.sqrt(v, out=tmp)
        tmp /= root_c2
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p -= tmp
    return params, state
