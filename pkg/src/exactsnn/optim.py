"""Weight updates: gradient descent, Adam, step decay, clipping, quantisation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _check(weights, grads):
    if len(weights) != len(grads):
        raise ValueError("weights and gradients differ in layer count")
    for w, g in zip(weights, grads):
        if np.shape(w) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match weights {np.shape(w)}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")


def sgd_step(weights, grads, lr: float) -> list:
    _check(weights, grads)
    return [np.asarray(w) - lr * np.asarray(g) for w, g in zip(weights, grads)]


@dataclass
class OptimState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_weights(cls, weights, lr: float, **kw) -> "OptimState":
        return cls(lr=lr, m=[np.zeros(np.shape(w)) for w in weights],
                   v=[np.zeros(np.shape(w)) for w in weights], **kw)


def adam_step(state: OptimState, weights, grads):
    """Bias-corrected Adam. Returns ``(state, new_weights)``; ``state`` is updated in place."""
    _check(weights, grads)
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    out = []
    for i, (w, g) in enumerate(zip(weights, grads)):
        g = np.asarray(g, dtype=np.float64)
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(np.asarray(w) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return state, out


def lr_schedule(epoch: int, lr0: float, decay: float = 1.0, period: int = 10, lr_min: float = 0.0) -> float:
    return max(lr0 * decay ** (epoch // period), lr_min)


def clip_weights(weights, w_clip: float):
    if isinstance(weights, (list, tuple)):
        return [np.clip(w, -w_clip, w_clip) for w in weights]
    return np.clip(weights, -w_clip, w_clip)


def quantization_levels(n_bits: int) -> np.ndarray:
    half = 2 ** n_bits - 1
    return np.arange(-half, half + 1) / half


def quantize_weights(weights, n_bits):
    """Snap weights to ``2^(n+1) - 1`` even levels on [-1, 1]; ``None`` keeps floats.

    Exact midpoints between two levels go to the one nearer zero.
    """
    if n_bits is None:
        return weights
    if isinstance(weights, (list, tuple)):
        return [quantize_weights(w, n_bits) for w in weights]
    half = 2 ** n_bits - 1
    scaled = np.clip(np.asarray(weights, dtype=np.float64), -1.0, 1.0) * half
    # round half toward zero: ceil(|x| - 0.5)
    q = np.sign(scaled) * np.ceil(np.abs(scaled) - 0.5)
    return q / half
