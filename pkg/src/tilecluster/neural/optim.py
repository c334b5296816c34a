"""Adam with bias-corrected moment estimates."""

from dataclasses import dataclass

import numpy as np

from tilecluster.errors import ShapeMismatch


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict
    v: dict

    @classmethod
    def zeros_like(cls, params: dict):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, t: int, hyper: AdamHyper = AdamHyper()):
    """One update at step ``t`` (1-based). Returns ``(new_params, new_state)``."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    new_params, m_out, v_out = {}, {}, {}
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        m = hyper.beta1 * state.m[k] + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * state.v[k] + (1.0 - hyper.beta2) * g * g
        m_out[k], v_out[k] = m, v
        new_params[k] = p - hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return new_params, AdamState(m_out, v_out)
